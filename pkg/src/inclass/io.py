"""Dataset files, checkpoints, run configuration and manifests.

All text output uses UTF-8, ``\\n`` line endings and ``repr`` floats, which
round-trip bit for bit.

Dataset CSV header: variate groups separated by ``|``, columns inside a
group by ``,``, and an optional trailing ``label`` column, e.g.
``x0,x1|y0,label``. Data rows are plain comma-separated values.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .costs import MovingEstimates
from .exceptions import CheckpointError, ConfigError, IngestionError
from .nn import AdamState, MLPClassifier
from .trainer import Dataset, InClassNet

CONFIG_VERSION = 1
CHECKPOINT_MAGIC = "inclass-checkpoint"
CHECKPOINT_VERSION = 1


def _fmt(x):
    return repr(float(x))


def write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# datasets


def default_column_names(dims):
    letters = "xyzuvw"
    names = []
    for v, d in enumerate(dims):
        stem = letters[v] if v < len(letters) else f"v{v}_"
        names.append([f"{stem}{k}" for k in range(d)])
    return names


def dataset_to_csv(data, names=None):
    names = names or default_column_names(data.variate_dims)
    header = "|".join(",".join(g) for g in names)
    if data.labels is not None:
        header += ",label"
    table = np.hstack(data.variates)
    lines = [header]
    labels = data.labels
    for r in range(table.shape[0]):
        cells = [_fmt(x) for x in table[r]]
        if labels is not None:
            cells.append(str(int(labels[r])))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def dataset_to_jsonl(data):
    """First line: ``{"dims": [...], "labeled": bool}``; then one object per row."""
    out = [json.dumps({"dims": list(data.variate_dims), "labeled": data.labels is not None})]
    for r in range(len(data)):
        row = {"variates": [[float(x) for x in var[r]] for var in data.variates]}
        if data.labels is not None:
            row["label"] = int(data.labels[r])
        out.append(json.dumps(row))
    return "\n".join(out) + "\n"


def write_dataset(data, path, fmt=None):
    fmt = fmt or ("jsonl" if str(path).endswith(".jsonl") else "csv")
    text = dataset_to_jsonl(data) if fmt == "jsonl" else dataset_to_csv(data)
    write_text(path, text)


def parse_header(line):
    """``(groups of column names, has_label)`` from a dataset header row."""
    groups = [[c.strip() for c in g.split(",")] for g in line.strip().split("|")]
    has_label = groups[-1][-1] == "label"
    if has_label:
        groups[-1] = groups[-1][:-1]
    if not groups or any(not g or "" in g for g in groups):
        raise IngestionError(f"malformed dataset header {line.strip()!r}")
    return groups, has_label


def _check_finite(table, columns):
    bad = np.argwhere(~np.isfinite(table))
    if bad.size:
        r, c = bad[0]
        raise IngestionError(f"non-finite value at data row {r + 1}, column "
                             f"{c + 1} ({columns[c]!r})")


def read_csv_dataset(path, expected_dims=None):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise IngestionError(f"{path}: missing header row")
        groups, has_label = parse_header(header)
        columns = [c for g in groups for c in g] + (["label"] if has_label else [])
        rows = []
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split(",")
            if len(cells) != len(columns):
                raise IngestionError(f"data row {lineno} has {len(cells)} cells, header "
                                     f"names {len(columns)} columns: {columns}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(k for k, c in enumerate(cells) if not _is_float(c))
                raise IngestionError(f"unparseable value {cells[bad]!r} at data row "
                                     f"{lineno}, column {bad + 1} ({columns[bad]!r})") from None
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))
    _check_finite(table, columns)
    dims = [len(g) for g in groups]
    if expected_dims is not None and tuple(dims) != tuple(expected_dims):
        raise IngestionError(f"dataset variate groups {groups} (dims {tuple(dims)}) do not "
                             f"match the expected dims {tuple(expected_dims)}")
    variates, pos = [], 0
    for d in dims:
        variates.append(table[:, pos:pos + d])
        pos += d
    labels = None
    if has_label:
        lab = table[:, -1]
        if np.any(lab != np.round(lab)) or np.any(lab < 0):
            raise IngestionError("label column must hold non-negative integers")
        labels = lab.astype(np.int64)
    return Dataset(variates, labels)


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_jsonl_dataset(path, expected_dims=None):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln.strip()]
    if not lines:
        raise IngestionError(f"{path}: empty file")
    try:
        meta = json.loads(lines[0])
        dims = [int(d) for d in meta["dims"]]
        labeled = bool(meta.get("labeled", False))
    except (ValueError, KeyError, TypeError):
        raise IngestionError(f"{path}: first line must hold the dims record") from None
    if expected_dims is not None and tuple(dims) != tuple(expected_dims):
        raise IngestionError(f"dataset dims {tuple(dims)} do not match expected "
                             f"{tuple(expected_dims)}")
    n = len(lines) - 1
    variates = [np.empty((n, d)) for d in dims]
    labels = np.empty(n, dtype=np.int64) if labeled else None
    for r, line in enumerate(lines[1:]):
        try:
            row = json.loads(line)
            for v, d in enumerate(dims):
                vals = np.asarray(row["variates"][v], dtype=np.float64)
                if vals.shape != (d,):
                    raise IngestionError(f"data row {r + 1}, variate {v}: expected {d} "
                                         f"values, got {vals.size}")
                if not np.all(np.isfinite(vals)):
                    k = int(np.flatnonzero(~np.isfinite(vals))[0])
                    raise IngestionError(f"non-finite value at data row {r + 1}, "
                                         f"variate {v}, component {k}")
                variates[v][r] = vals
            if labeled:
                labels[r] = int(row["label"])
        except (ValueError, KeyError, TypeError, IndexError) as err:
            if isinstance(err, IngestionError):
                raise
            raise IngestionError(f"data row {r + 1}: {err}") from None
    return Dataset(variates, labels)


def read_dataset(path, expected_dims=None):
    if str(path).endswith(".jsonl"):
        return read_jsonl_dataset(path, expected_dims)
    return read_csv_dataset(path, expected_dims)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    net: InClassNet
    optimizer: AdamState
    epochs_done: int = 0
    estimates: MovingEstimates = None


def checkpoint_to_text(ckpt):
    net, opt = ckpt.net, ckpt.optimizer
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
             f"n_nets {len(net.nets)}",
             "sharing " + " ".join(str(s) for s in net.sharing),
             f"seed {'none' if net.seed is None else int(net.seed)}"]
    for k, mlp in enumerate(net.nets):
        lines.append(f"widths {k} " + " ".join(str(w) for w in mlp.widths))
        lines.append(f"activations {k} " + " ".join(mlp.activations))
        if net.input_center is not None:
            lines.append(f"input_center {k} " + " ".join(_fmt(x) for x in net.input_center[k]))
            lines.append(f"input_scale {k} " + " ".join(_fmt(x) for x in net.input_scale[k]))
    lines += [f"n_params {net.n_params}",
              f"epochs_done {int(ckpt.epochs_done)}",
              f"adam_step {opt.step_count}",
              f"adam_lr {_fmt(opt.lr)}",
              f"adam_beta1 {_fmt(opt.beta1)}",
              f"adam_beta2 {_fmt(opt.beta2)}",
              f"adam_epsilon {_fmt(opt.epsilon)}"]
    est = ckpt.estimates
    if est is not None:
        C, V = est.phi_hat.shape
        lines += [f"moving_shape {C} {V}",
                  f"moving_decay {_fmt(est.decay)}",
                  f"moving_updates {est.n_updates}",
                  "moving_phi " + " ".join(_fmt(x) for x in est.phi_hat.ravel()),
                  "moving_aux " + " ".join(_fmt(x) for x in est.aux)]
    for name, vec in (("params", net.params), ("adam_m", opt.first_moment),
                      ("adam_v", opt.second_moment)):
        lines.append(f"[{name}]")
        lines.extend(_fmt(x) for x in vec)
    return "\n".join(lines) + "\n"


def save_checkpoint(ckpt, path):
    write_text(path, checkpoint_to_text(ckpt))


def _header_value(header, key, parse=str, count=None):
    if key not in header:
        raise CheckpointError(f"checkpoint lacks the {key!r} entry", key)
    raw = header[key]
    try:
        vals = [parse(t) for t in raw.split()]
    except ValueError:
        raise CheckpointError(f"checkpoint entry {key!r} has a malformed value {raw!r}",
                              key) from None
    if count is not None and len(vals) != count:
        raise CheckpointError(f"checkpoint entry {key!r} should hold {count} values", key)
    return vals[0] if count == 1 else vals


def checkpoint_from_text(text):
    lines = text.split("\n")
    if not lines or lines[0].split()[:1] != [CHECKPOINT_MAGIC]:
        raise CheckpointError("not a checkpoint file (bad magic line)", "magic")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise CheckpointError("unreadable checkpoint version", "version") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", "version")
    header, sections, current = {}, {}, None
    for line in lines[1:]:
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        else:
            key, _, value = line.partition(" ")
            if key in ("widths", "activations", "input_center", "input_scale"):
                idx, _, value = value.partition(" ")
                key = f"{key}_{idx}"
            header[key] = value
    n_nets = _header_value(header, "n_nets", int, 1)
    sharing = _header_value(header, "sharing", int)
    seed_raw = _header_value(header, "seed", str, 1)
    seed = None if seed_raw == "none" else int(seed_raw)
    nets = []
    for k in range(n_nets):
        widths = _header_value(header, f"widths_{k}", int)
        acts = _header_value(header, f"activations_{k}", str)
        try:
            nets.append(MLPClassifier(widths, acts))
        except ValueError as err:
            raise CheckpointError(f"network {k}: {err}", f"widths_{k}") from None
    try:
        net = InClassNet(nets, sharing, seed)
    except ConfigError as err:
        raise CheckpointError(str(err), "sharing") from None
    if "input_center_0" in header:
        center = [_header_value(header, f"input_center_{k}", float, nets[k].input_dim)
                  for k in range(n_nets)]
        scale = [_header_value(header, f"input_scale_{k}", float, nets[k].input_dim)
                 for k in range(n_nets)]
        try:
            net.set_input_scaling([np.atleast_1d(c) for c in center],
                                  [np.atleast_1d(c) for c in scale])
        except ValueError as err:
            raise CheckpointError(str(err), "input_scale") from None
    n_params = _header_value(header, "n_params", int, 1)
    if n_params != net.n_params:
        raise CheckpointError(f"n_params {n_params} disagrees with the architecture "
                              f"({net.n_params})", "n_params")
    vectors = {}
    for name in ("params", "adam_m", "adam_v"):
        if name not in sections:
            raise CheckpointError(f"checkpoint lacks the [{name}] block", name)
        try:
            vec = np.array([float(x) for x in sections[name]], dtype=np.float64)
        except ValueError:
            raise CheckpointError(f"[{name}] block holds a malformed number", name) from None
        if vec.size != n_params:
            raise CheckpointError(f"[{name}] block has {vec.size} values, expected "
                                  f"{n_params}", name)
        vectors[name] = vec
    net.set_params(vectors["params"])
    opt = AdamState(n_params,
                    lr=_header_value(header, "adam_lr", float, 1),
                    beta1=_header_value(header, "adam_beta1", float, 1),
                    beta2=_header_value(header, "adam_beta2", float, 1),
                    epsilon=_header_value(header, "adam_epsilon", float, 1),
                    step_count=_header_value(header, "adam_step", int, 1),
                    first_moment=vectors["adam_m"], second_moment=vectors["adam_v"])
    est = None
    if "moving_shape" in header:
        C, V = _header_value(header, "moving_shape", int, 2)
        est = MovingEstimates(
            np.array(_header_value(header, "moving_phi", float, C * V)).reshape(C, V),
            np.array(_header_value(header, "moving_aux", float, C)),
            _header_value(header, "moving_decay", float, 1),
            _header_value(header, "moving_updates", int, 1))
    return Checkpoint(net, opt, _header_value(header, "epochs_done", int, 1), est)


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except UnicodeDecodeError:
        raise CheckpointError("checkpoint is not UTF-8 text", "encoding") from None
    return checkpoint_from_text(text)


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class GenerateSection:
    spec: object = "two_gaussian"  # preset name or a mixture-spec dict
    n: int = 100_000
    format: str = "csv"
    n_per_class: int = 200
    n_classes: int = 10
    dim: int = 16
    separation: float = 4.0


@dataclass
class DataSection:
    path: str = None


@dataclass
class NetSection:
    hidden: list = field(default_factory=lambda: [32, 32, 32])
    n_components: int = 2
    sharing: list = None
    variate_dims: list = None  # checked against the dataset header when given


@dataclass
class TrainSection:
    epochs: int = 15
    batch_size: int = 50
    min_batch_for_means: int = 50
    cost: str = "neg_ctc"
    gradient_mode: str = "batch"
    regularizer: dict = field(default_factory=lambda: {"kind": "none", "lam": 0.0})
    shuffle: bool = True
    lr: float = 1e-3
    decay: float = 0.5
    clip_norm: float = None
    restarts: int = 1
    resume: str = None


@dataclass
class PretrainSection:
    noise: float = 0.4
    epochs: int = 30
    batch_size: int = 20
    n_labeled: int = 2000
    lr: float = 1e-3


@dataclass
class ExtractSection:
    checkpoint: str = None
    marginal: str = "histogram"
    bins: int = None
    bandwidth: float = None
    grid_points: int = 201
    analytic_spec: object = None


@dataclass
class DiagnoseSection:
    checkpoint: str = None
    oracle_spec: object = None
    quantile: float = 0.999
    tau: float = 0.02
    bins: int = 20
    tc_classifier: bool = False


@dataclass
class ScanSection:
    c_range: list = field(default_factory=lambda: [1, 2, 3, 4])
    delta_sat: float = 0.02


SECTIONS = {"generate": GenerateSection, "data": DataSection, "net": NetSection,
            "train": TrainSection, "pretrain": PretrainSection, "extract": ExtractSection,
            "diagnose": DiagnoseSection, "scan": ScanSection}


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    out: str = "out"
    generate: GenerateSection = field(default_factory=GenerateSection)
    data: DataSection = field(default_factory=DataSection)
    net: NetSection = field(default_factory=NetSection)
    train: TrainSection = field(default_factory=TrainSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    extract: ExtractSection = field(default_factory=ExtractSection)
    diagnose: DiagnoseSection = field(default_factory=DiagnoseSection)
    scan: ScanSection = field(default_factory=ScanSection)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - top)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        version = d.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported configuration version {version!r}")
        kwargs = {k: v for k, v in d.items() if k not in SECTIONS}
        for name, section_cls in SECTIONS.items():
            sub = d.get(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(section_cls)}
            bad = sorted(set(sub) - allowed)
            if bad:
                raise ConfigError(f"unknown keys in section {name!r}: {bad}")
            kwargs[name] = section_cls(**sub)
        cfg = cls(**kwargs)
        if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
            raise ConfigError("seed must be an integer")
        return cfg

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as err:
            raise ConfigError(f"configuration is not valid JSON: {err}") from None


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return RunConfig.from_json(fh.read())
    except OSError as err:
        raise ConfigError(f"cannot read configuration {path}: {err}") from None


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    config_hash: str
    dataset_hash: str
    library_version: str
    wall_seconds: float
    outputs: list = field(default_factory=list)

    def add_output(self, path):
        self.outputs.append({"path": os.path.basename(path), "sha256": sha256_file(path)})

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"
