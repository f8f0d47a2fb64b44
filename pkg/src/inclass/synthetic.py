"""Ground-truth conditional independence mixtures and samplers.

A :class:`MixtureSpec` holds mixture weights and, for every (component,
variate) pair, a one-dimensional distribution. Sampling draws the component
label first and then each variate independently from its distribution.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import ConfigError
from .trainer import Dataset, make_rng


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ConfigError("normal sd must be positive")

    def pdf(self, x):
        return stats.norm.pdf(x, self.mean, self.sd)

    def sample(self, rng, n):
        return rng.normal(self.mean, self.sd, size=n)

    def expectation(self):
        return self.mean

    def to_dict(self):
        return {"kind": "normal", "mean": self.mean, "sd": self.sd}


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigError("uniform needs hi > lo")

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where((x >= self.lo) & (x < self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def sample(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=n)

    def expectation(self):
        return 0.5 * (self.lo + self.hi)

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class PiecewiseUniform:
    """Mixture of half-open intervals ``[lo, hi)`` with given probabilities."""

    segments: tuple  # ((lo, hi, prob), ...)

    def __post_init__(self):
        segs = tuple((float(a), float(b), float(p)) for a, b, p in self.segments)
        if not segs or any(b <= a or p < 0 for a, b, p in segs):
            raise ConfigError("segments need lo < hi and non-negative probability")
        if abs(sum(p for _, _, p in segs) - 1.0) > 1e-9:
            raise ConfigError("segment probabilities must sum to 1")
        object.__setattr__(self, "segments", segs)

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for a, b, p in self.segments:
            out = out + np.where((x >= a) & (x < b), p / (b - a), 0.0)
        return out

    def sample(self, rng, n):
        probs = np.array([p for _, _, p in self.segments])
        which = rng.choice(len(probs), size=n, p=probs)
        lo = np.array([a for a, _, _ in self.segments])[which]
        hi = np.array([b for _, b, _ in self.segments])[which]
        return lo + (hi - lo) * rng.random(n)

    def expectation(self):
        return sum(p * 0.5 * (a + b) for a, b, p in self.segments)

    def to_dict(self):
        return {"kind": "piecewise_uniform", "segments": [list(s) for s in self.segments]}


def descriptor_from_dict(d):
    kind = d.get("kind")
    if kind == "normal":
        return Normal(float(d["mean"]), float(d["sd"]))
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    if kind == "piecewise_uniform":
        return PiecewiseUniform(tuple(tuple(s) for s in d["segments"]))
    raise ConfigError(f"unknown distribution kind {kind!r}")


@dataclass(frozen=True)
class MixtureSpec:
    """``components[i][v]`` is the distribution of variate ``v`` in component ``i``."""

    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("mixture weights must lie on the simplex")
        comps = tuple(tuple(c) for c in self.components)
        if len(comps) != w.size or len({len(c) for c in comps}) != 1 or not comps[0]:
            raise ConfigError("need one distribution per (component, variate)")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "components", comps)

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def n_variates(self):
        return len(self.components[0])

    def component_pdfs(self, v, x):
        """``(len(x), C)`` array of per-component densities of variate ``v``."""
        x = np.asarray(x, dtype=np.float64).ravel()
        return np.stack([self.components[i][v].pdf(x) for i in range(self.n_components)],
                        axis=1)

    def marginal_pdf(self, v, x):
        return self.component_pdfs(v, x) @ np.asarray(self.weights)

    def classifier(self, v, x):
        """Alias of :func:`oracle_true_classifier` so specs plug into the diagnostics."""
        return oracle_true_classifier(self, v, x)

    def to_dict(self):
        return {"weights": list(self.weights),
                "components": [[d.to_dict() for d in c] for c in self.components]}

    @classmethod
    def from_dict(cls, d):
        try:
            comps = tuple(tuple(descriptor_from_dict(x) for x in c) for c in d["components"])
            return cls(tuple(d["weights"]), comps)
        except (KeyError, TypeError) as err:
            raise ConfigError(f"malformed mixture spec: {err}") from None


@dataclass
class GeneratedDataset:
    data: Dataset
    spec: object  # MixtureSpec, or None for paired corpora
    seed: int

    @property
    def labels(self):
        return self.data.labels


def two_gaussian_spec():
    """Two components, x and y normal with sd 1.5, means -1 and +1, weights 0.4/0.6."""
    return MixtureSpec((0.4, 0.6), (
        (Normal(-1.0, 1.5), Normal(-1.0, 1.5)),
        (Normal(1.0, 1.5), Normal(1.0, 1.5)),
    ))


def four_gaussian_spec():
    """Trivariate mixture of four Gaussians with weights (0.22, 0.28, 0.18, 0.32)."""
    return MixtureSpec((0.22, 0.28, 0.18, 0.32), (
        (Normal(-1.0, 1.5), Normal(-1.0, 1.5), Normal(-1.0, 1.5)),
        (Normal(1.0, 1.5), Normal(1.0, 1.5), Normal(0.0, 1.5)),
        (Normal(-1.5, 1.5), Normal(1.5, 1.5), Normal(1.0, 1.5)),
        (Normal(1.5, 1.5), Normal(-1.5, 1.5), Normal(2.0, 2.5)),
    ))


def checkerboard_spec():
    """Bright cells of a 4x4 board on [0, 4)^2 as two equally weighted components."""
    even = PiecewiseUniform(((0.0, 1.0, 0.5), (2.0, 3.0, 0.5)))
    odd = PiecewiseUniform(((1.0, 2.0, 0.5), (3.0, 4.0, 0.5)))
    return MixtureSpec((0.5, 0.5), ((even, even), (odd, odd)))


def independent_uniform_spec(n_variates=2):
    return MixtureSpec((1.0,), ((Uniform(0.0, 1.0),) * n_variates,))


def identical_components_spec():
    """Two components with identical per-variate distributions (not identifiable)."""
    d = Normal(0.0, 1.0)
    return MixtureSpec((0.4, 0.6), ((d, d), (d, d)))


def sample_mixture(spec, n, seed):
    """Draw ``n`` points: component labels first, then each variate independently."""
    if n < 1:
        raise ConfigError("number of samples must be at least 1")
    rng = make_rng(seed)
    labels = rng.choice(spec.n_components, size=n, p=np.asarray(spec.weights))
    variates = []
    for v in range(spec.n_variates):
        col = np.empty(n)
        for i in range(spec.n_components):
            mask = labels == i
            col[mask] = spec.components[i][v].sample(rng, int(mask.sum()))
        variates.append(col[:, None])
    return GeneratedDataset(Dataset(variates, labels), spec, seed)


def sample_checkerboard(n, seed):
    return sample_mixture(checkerboard_spec(), n, seed)


def checkerboard_component(x, y):
    """Component (0 or 1) of a point on a bright cell; -1 on dark cells.

    Cell boundaries belong to the cell on the right (top).
    """
    cx = np.floor(np.asarray(x, dtype=np.float64)).astype(np.int64) % 2
    cy = np.floor(np.asarray(y, dtype=np.float64)).astype(np.int64) % 2
    return np.where(cx == cy, cx, -1)


def oracle_true_classifier(spec, v, x):
    """Posterior component probabilities given variate ``v`` alone.

    Raises ``ValueError`` where every component density vanishes.
    """
    weighted = spec.component_pdfs(v, x) * np.asarray(spec.weights)
    total = weighted.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("all component densities are zero at a requested point")
    return weighted / total


def make_blob_pool(n_per_class, n_classes=10, dim=16, separation=4.0, seed=0):
    """Labeled pool of isotropic unit Gaussian blobs.

    Class means sit on scaled coordinate axes, so every pair of means is
    ``separation`` apart. Requires ``dim >= n_classes``.
    """
    if dim < n_classes:
        raise ConfigError("blob dimension must be at least the number of classes")
    rng = make_rng(seed)
    means = np.zeros((n_classes, dim))
    means[np.arange(n_classes), np.arange(n_classes)] = separation / np.sqrt(2.0)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    items = means[labels] + rng.normal(size=(labels.size, dim))
    return items, labels


def build_paired_corpus(items, labels, n, seed, n_classes=None):
    """Pairs of same-class items: class uniform, then two items drawn with replacement."""
    items = np.asarray(items, dtype=np.float64)
    if items.ndim == 1:
        items = items[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    members = [np.flatnonzero(labels == c) for c in range(n_classes)]
    empty = [c for c, m in enumerate(members) if m.size == 0]
    if empty:
        raise ConfigError(f"classes {empty} have no items in the pool")
    if n < 1:
        raise ConfigError("number of pairs must be at least 1")
    rng = make_rng(seed)
    cls = rng.integers(0, n_classes, size=n)
    first = np.empty(n, dtype=np.int64)
    second = np.empty(n, dtype=np.int64)
    for c in range(n_classes):
        mask = cls == c
        k = int(mask.sum())
        first[mask] = members[c][rng.integers(0, members[c].size, size=k)]
        second[mask] = members[c][rng.integers(0, members[c].size, size=k)]
    return GeneratedDataset(Dataset([items[first], items[second]], cls), None, seed)
