"""Command-line entry point: ``inclass <command> [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 2 configuration error, 3 ingestion or checkpoint
error, 4 numeric or training failure.
"""

import argparse
import dataclasses
import logging
import os
import sys
import time
from importlib import metadata

import numpy as np
from threadpoolctl import threadpool_limits

from . import synthetic
from .diagnostics import confusion_matrix, diagnose, mean_diagonal
from .exceptions import (CheckpointError, ConfigError, DegenerateComponentError,
                         EstimatorFailedError, IngestionError, OptimizerError, TrainingError)
from .extraction import extract_model
from .io import (Checkpoint, RunConfig, RunManifest, load_checkpoint, load_config,
                 read_dataset, save_checkpoint, sha256_file, write_dataset, write_text)
from .nn import AdamState
from .trainer import (TrainConfig, build_inclass_net, pretrain_supervised, scan_components,
                      train, train_with_restarts)

logger = logging.getLogger("inclass")

COMMANDS = ("generate", "train", "extract", "diagnose", "scan", "pretrain")
EXIT_CONFIG, EXIT_INGEST, EXIT_NUMERIC = 2, 3, 4

PRESETS = {
    "two_gaussian": synthetic.two_gaussian_spec,
    "four_gaussian": synthetic.four_gaussian_spec,
    "checkerboard": synthetic.checkerboard_spec,
    "independent_uniform": synthetic.independent_uniform_spec,
    "identical_components": synthetic.identical_components_spec,
}


def library_version():
    try:
        return metadata.version("inclass")
    except metadata.PackageNotFoundError:
        return "unknown"


def resolve_spec(spec):
    if isinstance(spec, str):
        if spec not in PRESETS:
            raise ConfigError(f"unknown mixture preset {spec!r}; choose from {sorted(PRESETS)}")
        return PRESETS[spec]()
    if isinstance(spec, dict):
        return synthetic.MixtureSpec.from_dict(spec)
    raise ConfigError("mixture spec must be a preset name or an object")


class Run:
    """Shared state of one command: config, output dir and manifest bookkeeping."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = cfg.out
        self.t0 = time.perf_counter()
        self.dataset_hash = ""
        self.outputs = []
        try:
            os.makedirs(self.out, exist_ok=True)
        except OSError as err:
            raise OSError(f"cannot create output directory {self.out}: {err}") from None

    def path(self, name):
        return os.path.join(self.out, name)

    def emit(self, name, text):
        p = self.path(name)
        write_text(p, text)
        self.outputs.append(p)
        return p

    def dataset_path(self):
        path = self.cfg.data.path
        if path is None:
            for name in ("dataset.csv", "dataset.jsonl"):
                if os.path.exists(self.path(name)):
                    path = self.path(name)
                    break
        if path is None:
            raise ConfigError("no dataset: set data.path or run generate first")
        return path

    def load_data(self, expected_dims=None):
        path = self.dataset_path()
        if not os.path.exists(path):
            raise IngestionError(f"dataset file {path} does not exist")
        self.dataset_hash = sha256_file(path)
        return read_dataset(path, expected_dims)

    def checkpoint_path(self, configured):
        return configured or self.path("checkpoint.txt")

    def finish(self):
        self.emit(f"config_{self.command}.json", self.cfg.to_json())
        manifest = RunManifest(self.command, self.cfg.hash(), self.dataset_hash,
                               library_version(), time.perf_counter() - self.t0)
        for p in self.outputs:
            manifest.add_output(p)
        write_text(self.path(f"manifest_{self.command}.json"), manifest.to_json())


def train_config(cfg, seed=None):
    t = dataclasses.asdict(cfg.train)
    t.pop("resume")
    return TrainConfig(**t, seed=cfg.seed if seed is None else seed)


def _net_dims(cfg, data):
    dims = cfg.net.variate_dims
    return tuple(dims) if dims is not None else data.variate_dims


def cmd_generate(run):
    g = run.cfg.generate
    if not isinstance(g.n, int) or g.n < 1:
        raise ConfigError(f"generate.n must be a positive integer, got {g.n!r}")
    if g.format not in ("csv", "jsonl"):
        raise ConfigError(f"unknown dataset format {g.format!r}")
    if g.spec == "blob_pairs":
        items, labels = synthetic.make_blob_pool(g.n_per_class, g.n_classes, g.dim,
                                                 g.separation, seed=run.cfg.seed)
        gen = synthetic.build_paired_corpus(items, labels, g.n, seed=run.cfg.seed + 1,
                                            n_classes=g.n_classes)
    elif g.spec == "checkerboard":
        gen = synthetic.sample_checkerboard(g.n, run.cfg.seed)
    else:
        gen = synthetic.sample_mixture(resolve_spec(g.spec), g.n, run.cfg.seed)
    path = run.path(f"dataset.{g.format}")
    write_dataset(gen.data, path, g.format)
    run.outputs.append(path)
    run.dataset_hash = sha256_file(path)
    print(f"wrote {len(gen.data)} rows to {path}")


def cmd_train(run):
    cfg = run.cfg
    data = run.load_data(cfg.net.variate_dims)
    tcfg = train_config(cfg)
    if cfg.train.resume:
        ckpt = load_checkpoint(cfg.train.resume)
        if ckpt.net.variate_dims != data.variate_dims:
            raise IngestionError(f"checkpoint expects variate dims {ckpt.net.variate_dims}, "
                                 f"dataset has {data.variate_dims}")
        tcfg = train_config(cfg, seed=cfg.seed + ckpt.epochs_done)
        result = train(ckpt.net, data, tcfg, optimizer=ckpt.optimizer,
                       estimates=ckpt.estimates)
        done = ckpt.epochs_done + tcfg.epochs
        estimates = result.estimates if tcfg.gradient_mode == "moving" else ckpt.estimates
    else:
        if tcfg.restarts > 1:
            result = train_with_restarts(data, cfg.net.hidden, cfg.net.n_components, tcfg,
                                         cfg.net.sharing)
        else:
            net = build_inclass_net(_net_dims(cfg, data), cfg.net.hidden,
                                    cfg.net.n_components, cfg.net.sharing, seed=cfg.seed)
            result = train(net, data, tcfg)
        done = tcfg.epochs
        estimates = result.estimates
    save_checkpoint(Checkpoint(result.net, result.optimizer, done, estimates),
                    run.path("checkpoint.txt"))
    run.outputs.append(run.path("checkpoint.txt"))
    rows = ["epoch,cost,full_cost,wall_seconds"]
    rows += [f"{r.epoch},{float(r.cost)!r},{float(r.full_cost)!r},{r.wall_seconds:.3f}"
             for r in result.log]
    run.emit("train_log.csv", "\n".join(rows) + "\n")
    if result.log:
        print(f"final epoch cost {float(result.log[-1].full_cost)!r}")


def cmd_pretrain(run):
    cfg = run.cfg
    p = cfg.pretrain
    data = run.load_data(cfg.net.variate_dims)
    if data.labels is None:
        raise ConfigError("pretrain needs a labeled dataset")
    subset = data.subset(np.arange(min(p.n_labeled, len(data))))
    net = build_inclass_net(_net_dims(cfg, data), cfg.net.hidden, cfg.net.n_components,
                            cfg.net.sharing, seed=cfg.seed)
    net, losses = pretrain_supervised(net, subset, p.noise, p.epochs, p.batch_size,
                                      seed=cfg.seed, lr=p.lr)
    save_checkpoint(Checkpoint(net, AdamState(net.n_params, lr=cfg.train.lr), 0),
                    run.path("checkpoint.txt"))
    run.outputs.append(run.path("checkpoint.txt"))
    run.emit("pretrain_log.csv", "epoch,loss\n" + "".join(
        f"{k},{float(v)!r}\n" for k, v in enumerate(losses)))
    cm = confusion_matrix(net.forward(data.variates)[0], data.labels, net.n_components)
    run.emit("confusion_pretrain.csv", _matrix_csv(cm))
    print(f"mean confusion diagonal {mean_diagonal(cm)!r}")


def _matrix_csv(m):
    C = m.shape[1]
    lines = ["true_class," + ",".join(f"p{j}" for j in range(C))]
    lines += [f"{i}," + ",".join(repr(float(x)) for x in row) for i, row in enumerate(m)]
    return "\n".join(lines) + "\n"


def _load_model(run, checkpoint, data):
    ex = run.cfg.extract
    ckpt = load_checkpoint(run.checkpoint_path(checkpoint))
    pdfs = None
    if ex.marginal == "analytic":
        if ex.analytic_spec is None:
            raise ConfigError("analytic marginals need extract.analytic_spec")
        spec = resolve_spec(ex.analytic_spec)
        pdfs = [(lambda x, v=v: spec.marginal_pdf(v, x)) for v in range(spec.n_variates)]
    return extract_model(ckpt.net, data, ex.marginal, ex.bins, ex.bandwidth, pdfs,
                         grid_points=ex.grid_points)


def cmd_extract(run):
    data = run.load_data()
    model = _load_model(run, run.cfg.extract.checkpoint, data)
    run.emit("model.txt", model.to_text())
    if data.labels is not None:
        cm = confusion_matrix(model.aggregate(data.variates), data.labels, model.n_components)
        run.emit("confusion.csv", _matrix_csv(cm))
    print("weights " + " ".join(repr(float(w)) for w in model.weights))


def cmd_diagnose(run):
    d = run.cfg.diagnose
    data = run.load_data()
    if d.oracle_spec is not None:
        model = resolve_spec(d.oracle_spec)
    else:
        model = _load_model(run, d.checkpoint, data)
    report = diagnose(model, data, d.quantile, d.tau, d.bins, d.tc_classifier,
                      seed=run.cfg.seed)
    run.emit("diagnostics.txt", report.to_text())
    print(f"sufficient_ok {report.sufficient_ok} necessary_ok {report.necessary_ok} "
          f"tc_direct {report.tc_direct!r}")


def cmd_scan(run):
    cfg = run.cfg
    data = run.load_data(cfg.net.variate_dims)
    result = scan_components(data, cfg.scan.c_range, cfg.net.hidden, train_config(cfg),
                             cfg.scan.delta_sat, cfg.net.sharing)
    lines = ["C,best_cost,delta"]
    for c, b, d in zip(result.components, result.best_costs, result.deltas):
        lines.append(f"{c},{float(b)!r},{'' if np.isnan(d) else repr(float(d))}")
    run.emit("scan.csv", "\n".join(lines) + "\n")
    print(f"saturation C={result.saturation}" + ("" if result.saturated else " (not reached)"))


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "extract": cmd_extract,
            "diagnose": cmd_diagnose, "scan": cmd_scan, "pretrain": cmd_pretrain}


def build_parser():
    parser = argparse.ArgumentParser(prog="inclass", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides config and INCLASS_OUT)")
    parser.add_argument("--seed", type=int, help="overrides the configured seed")
    parser.add_argument("--threads", type=int, help="BLAS threads (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args, environ=None):
    environ = os.environ if environ is None else environ
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out or environ.get("INCLASS_OUT")
    if out:
        cfg.out = out
    threads = args.threads if args.threads is not None else environ.get("INCLASS_THREADS", 1)
    try:
        threads = int(threads)
    except ValueError:
        raise ConfigError(f"thread count must be an integer, got {threads!r}") from None
    if threads < 1:
        raise ConfigError("thread count must be at least 1")
    return cfg, threads


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, threads = resolve_config(args)
        with threadpool_limits(limits=threads):
            run = Run(args.command, cfg)
            HANDLERS[args.command](run)
            run.finish()
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, CheckpointError, OSError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INGEST
    except DegenerateComponentError as err:
        print(f"degenerate component {err.component}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TrainingError, OptimizerError, EstimatorFailedError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
