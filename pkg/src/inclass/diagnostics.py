"""Identifiability checks, total-correlation estimators and evaluation metrics."""

import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import costs
from .exceptions import (DimensionError, EstimatorFailedError, InvalidInputError,
                         OptimizerError, TableSizeError)
from .nn import AdamState, MLPClassifier, adam_step, as_tensor2
from .trainer import make_rng

TAU_ID = 0.02
DEFAULT_QUANTILE = 0.999
MAX_TABLE_CELLS = 10_000_000


def _variates_of(data):
    return [as_tensor2(x) for x in (data.variates if hasattr(data, "variates") else data)]


def _classifier_outputs(model, variates):
    """``alpha[v]``: ``(N, C)`` outputs of ``model.classifier(v, x)`` for each variate."""
    out = []
    for v, x in enumerate(variates):
        a = np.asarray(model.classifier(v, x if x.shape[1] > 1 else x[:, 0]), dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != x.shape[0]:
            raise DimensionError(f"classifier for variate {v} returned shape {a.shape}")
        out.append(a)
    return out


@dataclass
class DiagnosticsReport:
    """Finite-sample identifiability quantities.

    ``mu[i, v]`` is the upper ``q`` quantile of ``alpha_v^(i)``;
    ``pairwise_mu[v][i, j]`` that of ``alpha^(i) / (alpha^(i) + alpha^(j))``.
    Margins are the distances of these values above ``1 - tau``.
    """

    q: float
    tau: float
    mu: np.ndarray = None
    pairwise_mu: list = None
    tc_direct: float = None
    tc_classifier: float = None

    @property
    def sufficient_margin(self):
        return None if self.mu is None else self.mu - (1.0 - self.tau)

    @property
    def sufficient_ok(self):
        return None if self.mu is None else bool(np.all(self.sufficient_margin >= 0))

    @property
    def necessary_margin(self):
        if self.pairwise_mu is None:
            return None
        out = []
        for m in self.pairwise_mu:
            m = m - (1.0 - self.tau)
            np.fill_diagonal(m, np.nan)
            out.append(m)
        return out

    @property
    def necessary_ok(self):
        if self.pairwise_mu is None:
            return None
        ok = True
        for m in self.necessary_margin:
            off = m[~np.eye(m.shape[0], dtype=bool)]
            ok &= bool(np.all(off >= 0))  # NaN (no usable points) counts as failure
        return ok

    def merged(self, other):
        """Combine two partial reports computed with the same ``q`` and ``tau``."""
        pick = lambda a, b: a if a is not None else b  # noqa: E731
        return DiagnosticsReport(self.q, self.tau, pick(self.mu, other.mu),
                                 pick(self.pairwise_mu, other.pairwise_mu),
                                 pick(self.tc_direct, other.tc_direct),
                                 pick(self.tc_classifier, other.tc_classifier))

    def to_text(self):
        out = io.StringIO()
        out.write("[summary]\nkey,value\n")
        out.write(f"q,{self.q!r}\ntau,{self.tau!r}\n")
        for key in ("sufficient_ok", "necessary_ok", "tc_direct", "tc_classifier"):
            val = getattr(self, key)
            if val is not None and not isinstance(val, bool):
                val = float(val)
            out.write(f"{key},{'' if val is None else repr(val)}\n")
        if self.mu is not None:
            C, V = self.mu.shape
            out.write("\n[mu]\ncomponent," + ",".join(f"v{v}" for v in range(V)) + "\n")
            for i in range(C):
                out.write(f"{i}," + ",".join(repr(float(m)) for m in self.mu[i]) + "\n")
        if self.pairwise_mu is not None:
            for v, m in enumerate(self.pairwise_mu):
                C = m.shape[0]
                out.write(f"\n[pairwise_mu v{v}]\ncomponent,"
                          + ",".join(f"c{j}" for j in range(C)) + "\n")
                for i in range(C):
                    out.write(f"{i}," + ",".join("" if i == j else repr(float(m[i, j]))
                                                 for j in range(C)) + "\n")
        return out.getvalue()


def check_sufficient(model, data, q=DEFAULT_QUANTILE, tau=TAU_ID):
    """Estimate ``esssup alpha_v^(i)`` by an upper quantile for every component and variate.

    ``model`` is anything with ``classifier(v, x)``, e.g. an extracted model
    or a :class:`~inclass.synthetic.MixtureSpec`.
    """
    alphas = _classifier_outputs(model, _variates_of(data))
    mu = np.stack([np.quantile(a, q, axis=0) for a in alphas], axis=1)
    return DiagnosticsReport(q, tau, mu=np.clip(mu, 0.0, 1.0))


def check_necessary(model, data, q=DEFAULT_QUANTILE, tau=TAU_ID):
    """Pairwise version: points where both classifiers vanish are skipped."""
    alphas = _classifier_outputs(model, _variates_of(data))
    pairwise = []
    for a in alphas:
        C = a.shape[1]
        m = np.full((C, C), np.nan)
        for i in range(C):
            for j in range(C):
                if i == j:
                    continue
                s = a[:, i] + a[:, j]
                keep = s > 0
                if keep.any():
                    m[i, j] = np.quantile(a[keep, i] / s[keep], q)
        pairwise.append(m)
    return DiagnosticsReport(q, tau, pairwise_mu=pairwise)


def diagnose(model, data, q=DEFAULT_QUANTILE, tau=TAU_ID, bins=20, tc_classifier=False,
             **classifier_kw):
    """Both identifiability checks plus the direct (and optionally classifier) TC estimate."""
    report = check_sufficient(model, data, q, tau).merged(check_necessary(model, data, q, tau))
    variates = _variates_of(data)
    if all(x.shape[1] == 1 for x in variates):
        report.tc_direct = total_correlation_direct(variates, bins)
    if tc_classifier:
        report.tc_classifier = total_correlation_classifier(variates, **classifier_kw)
    return report


# ---------------------------------------------------------------------------
# total correlation


def total_correlation_direct(data, bins=20):
    """Plug-in total correlation from an equal-width histogram of every variate."""
    variates = _variates_of(data)
    if any(x.shape[1] != 1 for x in variates):
        raise DimensionError("direct estimate needs 1-d variates")
    V = len(variates)
    if bins ** V > MAX_TABLE_CELLS:
        raise TableSizeError(f"{bins}^{V} histogram cells exceed the limit of {MAX_TABLE_CELLS}")
    sample = np.hstack(variates)
    if sample.shape[0] == 0:
        raise InvalidInputError("data must be nonempty")
    joint, _ = np.histogramdd(sample, bins=bins)
    joint /= joint.sum()
    prod = np.ones_like(joint)
    for v in range(V):
        axes = tuple(w for w in range(V) if w != v)
        shape = [1] * V
        shape[v] = bins
        prod = prod * joint.sum(axis=axes).reshape(shape)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / prod[nz])))


def product_resample(variates, rng):
    """Shuffle every variate independently: a sample of the product of marginals."""
    n = variates[0].shape[0]
    return [x[rng.permutation(n)] for x in variates]


def total_correlation_classifier(data, hidden=(64, 64, 64), epochs=30, batch_size=512,
                                 lr=1e-2, seed=0, holdout=0.5, validation=0.2,
                                 final_lr_fraction=0.01):
    """Total correlation from a classifier telling data apart from its product resample.

    A binary net is trained on part of the data (label 1) against a product
    resample of that part (label 0), keeping the parameters with the lowest
    cross-entropy on a validation split. The estimate is the mean logit of
    the held-out data minus ``log(n_data / n_resampled)``.
    """
    variates = _variates_of(data)
    rng = make_rng(seed)
    n = variates[0].shape[0]
    n_test = int(round(n * holdout))
    if n - n_test < 4 or n_test < 1:
        raise InvalidInputError("not enough points for a train/held-out split")
    order = rng.permutation(n)
    test_idx, fit_idx = order[:n_test], order[n_test:]
    P = np.hstack([x[fit_idx] for x in variates])
    Q = np.hstack(product_resample([x[fit_idx] for x in variates], rng))
    P_test = np.hstack([x[test_idx] for x in variates])
    center = P.mean(axis=0)
    scale = P.std(axis=0)
    scale[scale == 0] = 1.0
    X = (np.vstack([P, Q]) - center) / scale
    y = np.concatenate([np.ones(len(P), np.int64), np.zeros(len(Q), np.int64)])
    perm = rng.permutation(len(X))
    n_val = max(1, int(round(len(X) * validation)))
    val, train_rows = perm[:n_val], perm[n_val:]
    net = MLPClassifier.initialized((X.shape[1], *hidden, 2), rng)
    opt = AdamState(net.n_params, lr=lr)
    best_loss, best_params = costs.cross_entropy_supervised(net.forward(X[val]), y[val]), \
        net.params.copy()
    for epoch in range(epochs):
        # linear decay of the step size towards lr * final_lr_fraction
        opt.lr = lr * (1.0 - (1.0 - final_lr_fraction) * epoch / max(epochs - 1, 1))
        shuffled = train_rows[rng.permutation(train_rows.size)]
        for s in range(0, shuffled.size, batch_size):
            idx = shuffled[s:s + batch_size]
            target = y[idx]
            _, grad, loss = net.forward_backward(
                X[idx], lambda p: costs._cross_entropy(p, target)[::-1])
            if not np.isfinite(loss):
                raise EstimatorFailedError(f"classifier loss diverged in epoch {epoch}")
            try:
                net.set_params(adam_step(opt, net.params, grad))
            except OptimizerError as err:
                raise EstimatorFailedError(str(err)) from None
        val_loss = costs.cross_entropy_supervised(net.forward(X[val]), y[val])
        if val_loss < best_loss:
            best_loss, best_params = val_loss, net.params.copy()
    net.set_params(best_params)
    logits = net._forward_cached((P_test - center) / scale)[1][-1]
    estimate = float(np.mean(logits[:, 1] - logits[:, 0]) - np.log(len(P) / len(Q)))
    if not np.isfinite(estimate):
        raise EstimatorFailedError("non-finite total correlation estimate")
    return estimate


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class MatchResult:
    """``permutation[i]`` is the learned component matched to true component ``i``."""

    permutation: tuple
    weight_error: float
    agreement: np.ndarray = field(default=None)
    greedy: bool = False


def _agreement_matrix(learned, data):
    """``A[i, j]``: mean aggregate probability of learned ``j`` over points labeled ``i``."""
    probs = learned.aggregate(data.variates)
    return confusion_matrix(probs, data.labels, probs.shape[1])


def match_components(learned, truth, data=None):
    """Align learned components with the true ones.

    ``learned`` is an extracted model (or a plain weight vector) and
    ``truth`` a mixture spec, a true weight vector or a label array. With
    labeled ``data`` and a model that has an aggregate classifier, the score
    of a matching is the summed weight overlap ``min(w_i, w'_sigma(i))`` plus
    the summed classifier agreement; otherwise overlap alone. Every
    permutation is tried for ``C <= 8``; larger ``C`` falls back to a greedy
    choice.
    """
    w_learned = np.asarray(getattr(learned, "weights", learned), dtype=np.float64)
    if hasattr(truth, "weights"):
        w_true = np.asarray(truth.weights, dtype=np.float64)
    else:
        truth = np.asarray(truth)
        if truth.dtype.kind in "iu":
            w_true = np.bincount(truth, minlength=w_learned.size) / truth.size
        else:
            w_true = truth.astype(np.float64)
    C = w_learned.size
    if w_true.size != C:
        raise DimensionError(f"learned model has {C} components, truth has {w_true.size}")
    score = np.minimum(w_true[:, None], w_learned[None, :])
    agreement = None
    if data is not None and data.labels is not None and hasattr(learned, "aggregate"):
        agreement = _agreement_matrix(learned, data)
        score = score + np.nan_to_num(agreement)
    if C <= 8:
        rows = np.arange(C)
        best, best_perm = -np.inf, None
        for perm in itertools.permutations(range(C)):
            s = score[rows, perm].sum()
            if s > best + 1e-15:
                best, best_perm = s, perm
        perm, greedy = tuple(int(p) for p in best_perm), False
    else:
        perm = [-1] * C
        free_rows, free_cols = set(range(C)), set(range(C))
        for _ in range(C):
            i, j = max(((i, j) for i in free_rows for j in free_cols), key=lambda t: score[t])
            perm[i] = j
            free_rows.discard(i)
            free_cols.discard(j)
        perm, greedy = tuple(perm), True
    err = float(np.max(np.abs(w_true - w_learned[list(perm)])))
    return MatchResult(perm, err, agreement, greedy)


def confusion_matrix(classifier, labels, n_classes=None, variates=None):
    """Row ``r``: mean predicted probability vector over points whose true class is ``r``.

    ``classifier`` is an ``(N, C)`` probability array, or a callable applied
    to ``variates``. Rows of absent classes are NaN.
    """
    probs = classifier(variates) if callable(classifier) else classifier
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise DimensionError("need an (N, C) probability array and N labels")
    C = n_classes or probs.shape[1]
    out = np.full((C, probs.shape[1]), np.nan)
    for r in range(C):
        mask = labels == r
        if mask.any():
            out[r] = probs[mask].mean(axis=0)
    return out


def undefined_rows(matrix):
    return [int(r) for r in np.flatnonzero(np.isnan(matrix).all(axis=1))]


def mean_diagonal(matrix):
    return float(np.nanmean(np.diag(matrix)))


def density_l1(estimate, truth, grid):
    """Trapezoid-rule L1 distance between two densities sampled on ``grid``."""
    return float(np.trapezoid(np.abs(np.asarray(estimate) - np.asarray(truth)), grid))
