"""Independent classifier networks and their training loop."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import costs
from .costs import MovingEstimates, RegularizerConfig
from .exceptions import (ConfigError, DegenerateComponentError, DimensionError,
                         TrainingError)
from .nn import AdamState, MLPClassifier, adam_step, as_tensor2

logger = logging.getLogger(__name__)

GRADIENT_MODES = ("batch", "moving")


def make_rng(seed):
    """Counter-based generator used for every random draw in the package."""
    return np.random.Generator(np.random.Philox(int(seed) & (2 ** 64 - 1)))


class InClassNet:
    """One softmax classifier per variate, optionally sharing parameters.

    Parameters
    ----------
    nets : list of MLPClassifier
        The distinct parameter sets.
    sharing : sequence of int
        ``sharing[v]`` is the index into ``nets`` used for variate ``v``.
    """

    def __init__(self, nets, sharing, seed=None, input_center=None, input_scale=None):
        sharing = tuple(int(s) for s in sharing)
        if sorted(set(sharing)) != list(range(len(nets))):
            raise ConfigError("sharing map must use every network exactly by index")
        self.nets = list(nets)
        self.sharing = sharing
        self.seed = seed
        self.input_center = None
        self.input_scale = None
        if input_center is not None:
            self.set_input_scaling(input_center, input_scale)

    def set_input_scaling(self, center, scale):
        """Per-network affine input map ``(x - center) / scale``."""
        center = [np.asarray(c, dtype=np.float64).copy() for c in center]
        scale = [np.asarray(c, dtype=np.float64).copy() for c in scale]
        if len(center) != len(self.nets) or len(scale) != len(self.nets) or any(
                c.shape != (n.input_dim,) or s.shape != (n.input_dim,)
                for c, s, n in zip(center, scale, self.nets)):
            raise DimensionError("need one center and scale entry per network input")
        if any(np.any(~(s > 0)) or np.any(~np.isfinite(c)) for c, s in zip(center, scale)):
            raise ConfigError("input scales must be positive and centers finite")
        self.input_center, self.input_scale = center, scale

    def fit_input_scaling(self, variates):
        """Standardize each network's inputs with the mean and sd of the data it sees."""
        variates = self._check_variates(variates)
        center, scale = [], []
        for s in range(len(self.nets)):
            pooled = np.vstack([x for v, x in enumerate(variates) if self.sharing[v] == s])
            sd = pooled.std(axis=0)
            center.append(pooled.mean(axis=0))
            scale.append(np.where(sd > 0, sd, 1.0))
        self.set_input_scaling(center, scale)

    def _prep(self, v, x):
        if self.input_center is None:
            return x
        s = self.sharing[v]
        return (x - self.input_center[s]) / self.input_scale[s]

    def forward_variate(self, v, x):
        """Class probabilities of variate ``v`` alone."""
        x = as_tensor2(x, f"variate {v}")
        return self.nets[self.sharing[v]].forward(self._prep(v, x))

    @property
    def n_variates(self):
        return len(self.sharing)

    @property
    def variate_dims(self):
        return tuple(self.nets[s].input_dim for s in self.sharing)

    @property
    def class_counts(self):
        return tuple(self.nets[s].output_dim for s in self.sharing)

    @property
    def n_components(self):
        counts = set(self.class_counts)
        if len(counts) != 1:
            raise DimensionError("variates have different class counts (multi-label net)")
        return counts.pop()

    @property
    def n_params(self):
        return sum(net.n_params for net in self.nets)

    @property
    def params(self):
        return np.concatenate([net.params for net in self.nets])

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise DimensionError("parameter vector has the wrong length")
        pos = 0
        for net in self.nets:
            net.set_params(flat[pos:pos + net.n_params])
            pos += net.n_params

    def copy(self):
        return InClassNet([n.copy() for n in self.nets], self.sharing, self.seed,
                          self.input_center, self.input_scale)

    def _check_variates(self, variates):
        if len(variates) != self.n_variates:
            raise DimensionError(f"expected {self.n_variates} variates, got {len(variates)}")
        return [as_tensor2(x, f"variate {v}") for v, x in enumerate(variates)]

    def forward(self, variates, chunk=65536):
        """Per-variate class probabilities, evaluated in row chunks."""
        variates = self._check_variates(variates)
        out = []
        for v, x in enumerate(variates):
            net = self.nets[self.sharing[v]]
            x = self._prep(v, x)
            parts = [net.forward(x[k:k + chunk]) for k in range(0, max(len(x), 1), chunk)]
            out.append(np.concatenate(parts) if parts else np.empty((0, net.output_dim)))
        return out

    def forward_backward(self, variates, grad_fn):
        """Forward every variate, ask ``grad_fn`` for output gradients, backprop.

        ``grad_fn(betas)`` returns ``(list of output gradients, extra)``.
        Gradients of shared parameter sets are summed over their variates.
        """
        variates = self._check_variates(variates)
        caches = []
        for v, x in enumerate(variates):
            net = self.nets[self.sharing[v]]
            if x.shape[1] != net.input_dim:
                raise DimensionError(f"variate {v} has {x.shape[1]} columns, "
                                     f"its classifier expects {net.input_dim}")
            caches.append(net._forward_cached(self._prep(v, x)))
        betas = [c[0] for c in caches]
        upstream, extra = grad_fn(betas)
        grads = [np.zeros(net.n_params) for net in self.nets]
        for v, (probs, acts) in enumerate(caches):
            s = self.sharing[v]
            grads[s] += self.nets[s]._backprop(probs, acts, upstream[v])
        return betas, np.concatenate(grads), extra

    def permuted(self, perm):
        """Copy whose output ``i`` is this net's output ``perm[i]``."""
        perm = np.asarray(perm)
        out = self.copy()
        for net in out.nets:
            last = net.layers[-1]
            last.weights[...] = last.weights[perm]
            last.bias[...] = last.bias[perm]
        return out


def build_inclass_net(variate_dims, hidden, n_components, sharing=None, seed=0):
    """Build and initialize an :class:`InClassNet`.

    Parameters
    ----------
    variate_dims : sequence of int
        Input width of each variate.
    hidden : sequence of int
        Hidden layer widths (ReLU), identical for every classifier.
    n_components : int or sequence of int
        Output width; a sequence gives each variate its own class count.
    sharing : sequence of int, optional
        Variates with the same id share one classifier.
    seed : int
    """
    dims = [int(d) for d in variate_dims]
    V = len(dims)
    if V < 1 or min(dims) < 1 or any(int(h) < 1 for h in hidden):
        raise ConfigError("variate dims and hidden widths must be positive")
    counts = [int(n_components)] * V if np.ndim(n_components) == 0 else \
        [int(c) for c in n_components]
    if len(counts) != V or min(counts) < 1:
        raise ConfigError("need a positive class count per variate")
    if sharing is None:
        sharing = list(range(V))
    if len(sharing) != V:
        raise ConfigError("sharing map must list one id per variate")
    ids = {}
    for v, s in enumerate(sharing):
        ids.setdefault(s, []).append(v)
    rng = make_rng(seed)
    nets = []
    order = sorted(ids, key=lambda s: ids[s][0])
    remap = {}
    for s in order:
        members = ids[s]
        if len({dims[v] for v in members}) != 1 or len({counts[v] for v in members}) != 1:
            raise ConfigError(f"variates {members} share a classifier but differ in "
                              f"input or output width")
        v0 = members[0]
        remap[s] = len(nets)
        nets.append(MLPClassifier.initialized(
            (dims[v0], *[int(h) for h in hidden], counts[v0]), rng))
    return InClassNet(nets, [remap[s] for s in sharing], seed=seed)


@dataclass
class Dataset:
    """``variates[v]`` is an ``N x d_v`` array; labels are for evaluation only."""

    variates: list
    labels: object = None
    label_noise: object = None

    def __post_init__(self):
        self.variates = [as_tensor2(x, f"variate {v}") for v, x in enumerate(self.variates)]
        if not self.variates:
            raise ConfigError("dataset needs at least one variate")
        n = self.variates[0].shape[0]
        if any(x.shape[0] != n for x in self.variates):
            raise DimensionError("all variates must have the same number of rows")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,) or (n and self.labels.min() < 0):
                raise DimensionError("labels must be one non-negative int per row")
        if self.label_noise is not None and not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError("label_noise must lie in [0, 1]")

    def __len__(self):
        return self.variates[0].shape[0]

    @property
    def n_variates(self):
        return len(self.variates)

    @property
    def variate_dims(self):
        return tuple(x.shape[1] for x in self.variates)

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return Dataset([x[idx] for x in self.variates], labels, self.label_noise)


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 50
    min_batch_for_means: int = 50
    cost: str = "neg_ctc"
    gradient_mode: str = "batch"
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    seed: int = 0
    shuffle: bool = True
    lr: float = 1e-3
    decay: float = 0.5
    clip_norm: object = None
    restarts: int = 1
    standardize: bool = True
    on_degenerate: str = "raise"  # or "stop": end training and keep the log so far

    def __post_init__(self):
        if isinstance(self.regularizer, dict):
            self.regularizer = RegularizerConfig(**self.regularizer)
        if self.cost not in costs.COSTS:
            raise ConfigError(f"unknown cost {self.cost!r}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ConfigError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.on_degenerate not in ("raise", "stop"):
            raise ConfigError("on_degenerate must be 'raise' or 'stop'")
        if self.epochs < 0 or self.batch_size < 1 or self.restarts < 1:
            raise ConfigError("epochs must be >= 0, batch_size and restarts >= 1")
        if self.gradient_mode == "batch" and self.batch_size < self.min_batch_for_means:
            raise ConfigError(f"batch_size {self.batch_size} is below min_batch_for_means "
                              f"{self.min_batch_for_means}")
        if self.gradient_mode == "moving" and self.cost not in (
                "neg_ctc", "neg_cmi", "unnorm_neg_ctc", "unnorm_neg_cmi"):
            raise ConfigError("moving-estimate gradients exist for the mixture costs only")


@dataclass
class EpochRecord:
    epoch: int
    cost: float
    full_cost: float
    wall_seconds: float


@dataclass
class TrainResult:
    net: InClassNet
    log: list
    optimizer: AdamState
    estimates: MovingEstimates = None
    stopped: object = None  # the DegenerateComponentError that ended training early

    @property
    def best_cost(self):
        """Lowest full-data epoch cost; falls back to minibatch means when none is finite."""
        full = [r.full_cost for r in self.log if np.isfinite(r.full_cost)]
        if full:
            return min(full)
        batch = [r.cost for r in self.log if np.isfinite(r.cost)]
        return min(batch) if batch else float("nan")

    @property
    def costs(self):
        return [r.cost for r in self.log]



def _check_arity(net, cost):
    if cost in ("neg_cmi", "unnorm_neg_cmi", "neg_mi") and net.n_variates != 2:
        raise ConfigError(f"cost {cost} needs a two-variate net, got {net.n_variates}")
    if cost not in ("neg_tc", "neg_mi"):
        net.n_components  # raises for multi-label nets


def evaluate_cost(net, data, cost):
    """The named cost on the full dataset (no gradient)."""
    return costs.cost_value(cost, net.forward(data.variates))


def _batches(n, cfg, rng):
    order = rng.permutation(n) if cfg.shuffle else np.arange(n)
    bs = cfg.batch_size
    floor = cfg.min_batch_for_means if cfg.gradient_mode == "batch" else 1
    for start in range(0, n, bs):
        idx = order[start:start + bs]
        if len(idx) >= floor:
            yield idx


def train(net, data, cfg, optimizer=None, estimates=None):
    """Train ``net`` in place on ``data``.

    Returns a :class:`TrainResult` whose log holds, per epoch, the mean
    minibatch cost, the cost re-evaluated on the full dataset at the end of
    the epoch, and elapsed wall time. Passing the ``optimizer`` state of an
    earlier run resumes it.
    """
    if not isinstance(data, Dataset):
        data = Dataset(list(data))
    if data.variate_dims != net.variate_dims:
        raise DimensionError(f"data variate dims {data.variate_dims} do not match "
                             f"the net's {net.variate_dims}")
    _check_arity(net, cfg.cost)
    if cfg.standardize and net.input_center is None:
        net.fit_input_scaling(data.variates)
    if optimizer is None:
        optimizer = AdamState(net.n_params, lr=cfg.lr)
    moving = cfg.gradient_mode == "moving"
    if moving and estimates is None:
        estimates = MovingEstimates.uniform(net.n_components, net.n_variates, cfg.decay)
    rng = make_rng(cfg.seed)
    n = len(data)
    log = []
    t0 = time.perf_counter()
    stopped = None
    for epoch in range(cfg.epochs):
        total = 0.0
        count = 0
        for b, idx in enumerate(_batches(n, cfg, rng)):
            batch = [x[idx] for x in data.variates]
            try:
                if moving:
                    value, grad, _ = costs.cost_gradient_moving(
                        net, batch, estimates, normalized=not cfg.cost.startswith("unnorm"),
                        regularizer=cfg.regularizer)
                else:
                    value, grad = costs.cost_gradient_batch(net, batch, cfg.cost,
                                                            cfg.regularizer)
            except DegenerateComponentError as err:
                err.at(epoch, b)
                if cfg.on_degenerate == "raise":
                    raise err from None
                logger.warning("stopping early: %s", err)
                stopped = err
                break
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise TrainingError(
                    f"non-finite cost at epoch {epoch}, batch {b}",
                    state={"epoch": epoch, "batch": b, "cost": value,
                           "param_norm": float(np.linalg.norm(net.params)),
                           "phi": costs.batch_pseudo_weights(net.forward(batch))
                           if cfg.cost not in ("neg_tc", "neg_mi") else None})
            net.set_params(adam_step(optimizer, net.params, grad, cfg.clip_norm))
            total += value * len(idx)
            count += len(idx)
        try:
            full = evaluate_cost(net, data, cfg.cost)
        except DegenerateComponentError:
            full = float("nan")
        mean_cost = total / count if count else float("nan")
        log.append(EpochRecord(epoch, mean_cost, full, time.perf_counter() - t0))
        logger.info("epoch %d cost %.6f full %.6f", epoch, mean_cost, full)
        if stopped is not None:
            break
    return TrainResult(net, log, optimizer, estimates, stopped)


def train_with_restarts(data, hidden, n_components, cfg, sharing=None):
    """Train ``cfg.restarts`` fresh nets (seeds ``cfg.seed + r``); keep the lowest full cost."""
    best = None
    for r in range(cfg.restarts):
        net = build_inclass_net(data.variate_dims, hidden, n_components, sharing,
                                seed=cfg.seed + r)
        result = train(net, data, TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + r}))
        final = result.best_cost if result.log else evaluate_cost(net, data, cfg.cost)
        if best is None or final < best[0]:
            best = (final, result)
    return best[1]


def noisy_labels(labels, n_classes, noise, rng):
    """Keep each label with probability ``1 - noise``, else pick one of the others uniformly."""
    labels = np.asarray(labels, dtype=np.int64)
    flip = rng.random(labels.size) < noise
    if n_classes < 2:
        return labels.copy()
    shift = rng.integers(1, n_classes, size=labels.size)
    return np.where(flip, (labels + shift) % n_classes, labels)


def pretrain_supervised(net, data, noise, epochs=30, batch_size=20, seed=0, lr=1e-3,
                        standardize=True):
    """Seed class identities by cross-entropy training on noisily labeled data.

    Noisy labels are drawn once. Every variate's classifier is trained on its
    own inputs against the row's label, so a shared classifier sees all
    variates. Returns ``(net, per-epoch mean loss list)``.
    """
    if data.labels is None:
        raise ConfigError("supervised pre-training needs labels")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError("label noise must lie in [0, 1]")
    C = net.n_components
    if data.labels.max(initial=0) >= C:
        raise ConfigError("labels exceed the number of components")
    if standardize and net.input_center is None:
        net.fit_input_scaling(data.variates)
    rng = make_rng(seed)
    labels = noisy_labels(data.labels, C, noise, rng)
    opt = AdamState(net.n_params, lr=lr)
    n = len(data)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = [x[idx] for x in data.variates]
            y = labels[idx]

            def grad_fn(betas):
                out = [costs._cross_entropy(b, y) for b in betas]
                return [g for _, g in out], sum(v for v, _ in out)

            _, grad, value = net.forward_backward(batch, grad_fn)
            net.set_params(adam_step(opt, net.params, grad))
            total += value * len(idx)
        losses.append(total / n)
    return net, losses


@dataclass
class ScanResult:
    components: list
    best_costs: list
    saturation: int
    saturated: bool
    results: dict = field(repr=False, default_factory=dict)

    @property
    def deltas(self):
        out = [float("nan")]
        out += [a - b for a, b in zip(self.best_costs[:-1], self.best_costs[1:])]
        return out


def scan_components(data, c_range, hidden, cfg, delta_sat=0.02, sharing=None):
    """Train a fresh net per component count and locate where the cost saturates.

    Each count ``C`` is trained with seed ``cfg.seed + C``. The best cost of a
    run is the lowest full-data cost over its epochs. Saturation is the first
    ``C`` whose successor improves the best cost by less than ``delta_sat``.
    A run whose surplus component collapses stops early and keeps its best
    cost so far, since it has effectively fallen back to fewer components.
    """
    c_range = sorted(int(c) for c in c_range)
    if not c_range:
        raise ConfigError("component range is empty")
    best = []
    results = {}
    for C in c_range:
        run_cfg = TrainConfig(**{**cfg.__dict__, "seed": cfg.seed + C,
                                 "on_degenerate": "stop"})
        try:
            result = train_with_restarts(data, hidden, C, run_cfg, sharing)
        except Exception as err:
            err.args = (f"[C={C}] " + (str(err.args[0]) if err.args else ""),) + err.args[1:]
            raise
        results[C] = result
        best.append(result.best_cost if result.log else 0.0)
        logger.info("scan C=%d best cost %.6f", C, best[-1])
    saturation, saturated = c_range[-1], False
    for k in range(len(c_range) - 1):
        if best[k] - best[k + 1] < delta_sat:
            saturation, saturated = c_range[k], True
            break
    return ScanResult(c_range, best, saturation, saturated, results)
