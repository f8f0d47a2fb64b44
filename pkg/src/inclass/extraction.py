"""Turn a trained InClass net into an explicit mixture model.

The net's per-variate outputs ``beta`` and their data means ``phi`` define
mixture weights, per-variate component classifiers, component densities and
an aggregate classifier over the full datapoint. Densities need an estimate
of each variate's marginal; see :func:`fit_marginal`.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .costs import EPS_PHI, _csum, batch_pseudo_weights, unnormalized_weights
from .exceptions import ConfigError, DegenerateComponentError, DimensionError, InvalidInputError
from .nn import as_tensor2

MARGINAL_KINDS = ("histogram", "kde", "analytic")


@dataclass
class PseudoWeights:
    """``phi[i, v]`` is the mean output of class ``i`` on variate ``v``."""

    phi: np.ndarray
    w_tilde: np.ndarray = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.ndim != 2:
            raise DimensionError("phi must be a C x V matrix")
        if np.any(self.phi < 0) or np.any(np.abs(self.phi.sum(axis=0) - 1.0) > 1e-9):
            raise InvalidInputError("every phi column must lie on the simplex")
        if self.w_tilde is None:
            with np.errstate(divide="ignore"):
                self.w_tilde = unnormalized_weights(self.phi)
        self.w_tilde = np.asarray(self.w_tilde, dtype=np.float64)

    @property
    def n_components(self):
        return self.phi.shape[0]

    @property
    def n_variates(self):
        return self.phi.shape[1]


def _variates_of(data):
    return data.variates if hasattr(data, "variates") else list(data)


def estimate_pseudo_weights(net, data):
    """Pseudo weights from the net's outputs averaged over ``data``."""
    variates = _variates_of(data)
    if len(variates) == 0 or len(variates[0]) == 0:
        raise InvalidInputError("data must be nonempty")
    return PseudoWeights(batch_pseudo_weights(net.forward(variates)))


def _check_phi(pw, variates=None):
    cols = range(pw.n_variates) if variates is None else variates
    for v in cols:
        bad = np.flatnonzero(pw.phi[:, v] < EPS_PHI)
        if bad.size:
            raise DegenerateComponentError(int(bad[0]), int(v), float(pw.phi[bad[0], v]))


def mixture_weights(pw):
    """Normalized geometric-mean weights ``w = w_tilde / sum(w_tilde)``."""
    zero = np.flatnonzero(pw.w_tilde <= 0)
    if zero.size:
        i = int(zero[0])
        v = int(np.argmin(pw.phi[i]))
        raise DegenerateComponentError(i, v, float(pw.phi[i, v]))
    return pw.w_tilde / _csum(pw.w_tilde)


def cic_from_outputs(beta, pw, v):
    """Per-variate classifier ``alpha_v`` from raw outputs ``beta`` of variate ``v``."""
    _check_phi(pw, [v])
    raw = np.asarray(beta, dtype=np.float64) * (pw.w_tilde / pw.phi[:, v])
    return raw / _csum(raw, axis=-1)[..., None]


def cic_classifier(net, pw, v, x_v):
    """``alpha_v(x_v)``: rows on the simplex, one per input row."""
    return cic_from_outputs(_variate_forward(net, v, x_v), pw, v)


def aggregate_from_outputs(betas, pw):
    """Membership given all variates: proportional to ``w_tilde**(1-V) * prod(beta)``."""
    _check_phi(pw)
    V = len(betas)
    prod = np.asarray(betas[0], dtype=np.float64).copy()
    for b in betas[1:]:
        prod = prod * b
    raw = prod * pw.w_tilde ** (1.0 - V)
    total = _csum(raw, axis=-1)[..., None]
    # rows where the variates vote for disjoint components carry no information
    C = raw.shape[-1]
    return np.where(total > 0, raw / np.where(total > 0, total, 1.0), 1.0 / C)


def aggregate_classifier(net, pw, variates):
    return aggregate_from_outputs(net.forward(list(variates)), pw)


def _variate_forward(net, v, x):
    return net.forward_variate(v, x)


# ---------------------------------------------------------------------------
# marginal estimation


@dataclass
class MarginalEstimator:
    """Density estimate of one 1-d variate.

    ``kind`` is ``histogram`` (``edges`` and ``heights``), ``kde`` (a
    Gaussian KDE with ``bandwidth``) or ``analytic`` (a user ``pdf``).
    """

    kind: str
    edges: np.ndarray = None
    heights: np.ndarray = None
    bandwidth: float = None
    pdf: object = field(default=None, repr=False)
    _kde: object = field(default=None, repr=False)

    def density(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "histogram":
            k = np.searchsorted(self.edges, x, side="right") - 1
            k = np.where(x == self.edges[-1], len(self.heights) - 1, k)
            inside = (k >= 0) & (k < len(self.heights))
            return np.where(inside, self.heights[np.clip(k, 0, len(self.heights) - 1)], 0.0)
        if self.kind == "kde":
            flat = x.ravel()
            out = np.concatenate([self._kde(flat[s:s + 4096])
                                  for s in range(0, flat.size, 4096)]) if flat.size else flat
            return out.reshape(x.shape)
        return np.asarray(self.pdf(x), dtype=np.float64)

    def integral(self, grid=None):
        """Total mass (exact for histograms, trapezoid on ``grid`` otherwise)."""
        if self.kind == "histogram":
            return float(np.sum(self.heights * np.diff(self.edges)))
        return float(np.trapezoid(self.density(grid), grid))


def rice_bins(n):
    return int(math.ceil(2.0 * n ** (1.0 / 3.0)))


def silverman_bandwidth(column):
    """Rule-of-thumb ``0.9 * min(sd, IQR/1.34) * n**(-1/5)``."""
    column = np.asarray(column, dtype=np.float64)
    sd = column.std(ddof=1)
    iqr = np.subtract(*np.percentile(column, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * column.size ** (-0.2)


def fit_marginal(column, kind="histogram", bins=None, bandwidth=None, pdf=None):
    """Estimate the density of a 1-d data column.

    Histograms default to the Rice rule for the bin count; KDE defaults to
    Silverman's bandwidth. ``analytic`` wraps a given ``pdf`` callable.
    """
    if kind not in MARGINAL_KINDS:
        raise ConfigError(f"unknown marginal kind {kind!r}")
    if kind == "analytic":
        if pdf is None:
            raise ConfigError("analytic marginal needs a pdf")
        return MarginalEstimator("analytic", pdf=pdf)
    col = np.asarray(column, dtype=np.float64)
    if col.ndim == 2 and col.shape[1] == 1:
        col = col[:, 0]
    if col.ndim != 1:
        raise DimensionError("marginals are estimated for 1-d variates only")
    if col.size == 0:
        raise InvalidInputError("cannot estimate a marginal from an empty column")
    if not np.all(np.isfinite(col)):
        raise InvalidInputError("column contains NaN or Inf")
    if kind == "histogram":
        heights, edges = np.histogram(col, bins=bins or rice_bins(col.size), density=True)
        return MarginalEstimator("histogram", edges=edges, heights=heights)
    h = float(bandwidth) if bandwidth is not None else silverman_bandwidth(col)
    if not h > 0:
        raise InvalidInputError("KDE bandwidth must be positive (constant column?)")
    kde = stats.gaussian_kde(col, bw_method=h / col.std(ddof=1))
    return MarginalEstimator("kde", bandwidth=h, _kde=kde)


def default_grid(column, n_points=201):
    """Evenly spaced points over the empirical 0.1%..99.9% quantile range."""
    lo, hi = np.quantile(np.asarray(column, dtype=np.float64).ravel(), [0.001, 0.999])
    return np.linspace(lo, hi, n_points)


def component_density(net, pw, marginal, v, grid):
    """``(len(grid), C)`` array ``f_v^(i)(x) = P_v(x) * beta^(i)(x) / phi^(i)_v``."""
    _check_phi(pw, [v])
    grid = np.asarray(grid, dtype=np.float64).ravel()
    beta = _variate_forward(net, v, grid)
    return marginal.density(grid)[:, None] * beta / pw.phi[:, v]


def model_marginal(net, pw, marginal, v, grid):
    """Marginal of variate ``v`` implied by the learned model."""
    _check_phi(pw, [v])
    grid = np.asarray(grid, dtype=np.float64).ravel()
    beta = _variate_forward(net, v, grid)
    mix = _csum(beta * (pw.w_tilde / pw.phi[:, v]), axis=1) / _csum(pw.w_tilde)
    return marginal.density(grid) * mix


# ---------------------------------------------------------------------------
# assembled model


@dataclass
class VariateCurves:
    grid: np.ndarray
    densities: np.ndarray  # (G, C)
    classifiers: np.ndarray  # (G, C)
    model_marginal: np.ndarray
    fitted_marginal: np.ndarray


@dataclass
class ExtractedModel:
    """Learned mixture: weights, pseudo weights, classifiers and grid curves.

    ``curves[v]`` is ``None`` for multi-dimensional variates, whose densities
    are not extracted.
    """

    weights: np.ndarray
    pseudo: PseudoWeights
    net: object = field(repr=False)
    marginals: list = field(repr=False)
    curves: list = field(repr=False)

    @property
    def n_components(self):
        return self.weights.size

    def classifier(self, v, x):
        return cic_classifier(self.net, self.pseudo, v, x)

    def aggregate(self, variates):
        return aggregate_classifier(self.net, self.pseudo, variates)

    def density(self, v, x):
        """Component densities of variate ``v`` at arbitrary points."""
        if self.marginals[v] is None:
            raise DimensionError(f"variate {v} is multi-dimensional; no density extracted")
        return component_density(self.net, self.pseudo, self.marginals[v], v, x)

    def to_text(self):
        """Plot-ready text: a weights block, a phi block and one CSV block per 1-d variate."""
        out = io.StringIO()
        C = self.n_components
        out.write("[weights]\ncomponent,weight,w_tilde\n")
        for i in range(C):
            out.write(f"{i},{float(self.weights[i])!r},{float(self.pseudo.w_tilde[i])!r}\n")
        V = self.pseudo.n_variates
        out.write("\n[phi]\ncomponent," + ",".join(f"v{v}" for v in range(V)) + "\n")
        for i in range(C):
            out.write(f"{i}," + ",".join(repr(float(p)) for p in self.pseudo.phi[i]) + "\n")
        for v, c in enumerate(self.curves):
            if c is None:
                continue
            out.write(f"\n[variate {v}]\n")
            cols = ["x"] + [f"f{i}" for i in range(C)] + [f"alpha{i}" for i in range(C)]
            out.write(",".join(cols + ["P_model", "P_fitted"]) + "\n")
            for g in range(c.grid.size):
                row = [c.grid[g], *c.densities[g], *c.classifiers[g],
                       c.model_marginal[g], c.fitted_marginal[g]]
                out.write(",".join(repr(float(r)) for r in row) + "\n")
        return out.getvalue()


def read_model_text(text):
    """Parse :meth:`ExtractedModel.to_text` output into ``{block name: 2-D array}``."""
    blocks = {}
    for chunk in text.strip().split("\n\n"):
        lines = chunk.strip().splitlines()
        name = lines[0].strip("[]")
        header = lines[1].split(",")
        rows = [[float(t) for t in line.split(",")] for line in lines[2:]]
        blocks[name] = (header, np.array(rows))
    return blocks


def extract_model(net, data, marginal="histogram", bins=None, bandwidth=None, pdfs=None,
                  grids=None, grid_points=201):
    """Run the whole extraction on a trained net.

    Parameters
    ----------
    marginal : {"histogram", "kde", "analytic"}
        How 1-d marginals are estimated. ``analytic`` takes ``pdfs[v]``.
    grids : list of arrays, optional
        Evaluation grid per variate; defaults to :func:`default_grid`.
    """
    variates = [as_tensor2(x) for x in _variates_of(data)]
    pw = estimate_pseudo_weights(net, variates)
    w = mixture_weights(pw)
    _check_phi(pw)
    marginals, curves = [], []
    for v, x in enumerate(variates):
        if x.shape[1] != 1:
            marginals.append(None)
            curves.append(None)
            continue
        m = fit_marginal(x[:, 0], marginal, bins=bins, bandwidth=bandwidth,
                         pdf=None if pdfs is None else pdfs[v])
        grid = default_grid(x, grid_points) if grids is None else \
            np.asarray(grids[v], dtype=np.float64)
        curves.append(VariateCurves(
            grid=grid,
            densities=component_density(net, pw, m, v, grid),
            classifiers=cic_classifier(net, pw, v, grid),
            model_marginal=model_marginal(net, pw, m, v, grid),
            fitted_marginal=m.density(grid)))
        marginals.append(m)
    return ExtractedModel(w, pw, net, marginals, curves)
