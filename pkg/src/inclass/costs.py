"""Training objectives for independent classifier networks.

Every cost takes ``betas``: a list with one ``(N, C)`` array of classifier
outputs per variate (rows on the simplex). Expectations over the data are
replaced by batch means, and gradients are taken *through* those means, so
the functions ending in ``_grads`` return the exact derivative of the batch
estimate with respect to every output entry.

Pseudo weights are stored component-major: ``phi[i, v]`` is the mean output
of class ``i`` for variate ``v``.
"""

import string
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DegenerateComponentError, DimensionError

EPS_PHI = 1e-6
EPS_LOG = 1e-12

COSTS = ("neg_ctc", "neg_cmi", "unnorm_neg_ctc", "unnorm_neg_cmi", "neg_tc", "neg_mi")
REGULARIZERS = ("none", "tikhonov", "shannon", "known_weights")


def _as_outputs(betas, same_width=True):
    betas = [np.asarray(b, dtype=np.float64) for b in betas]
    if not betas:
        raise DimensionError("need at least one variate")
    n = betas[0].shape[0]
    for b in betas:
        if b.ndim != 2 or b.shape[0] != n:
            raise DimensionError("all output matrices must be 2-D with the same row count")
    if same_width and len({b.shape[1] for b in betas}) != 1:
        raise DimensionError("all variates must have the same number of components")
    return betas


# Reductions that touch the component axis run in a canonical order, so that
# relabeling components permutes every intermediate exactly and the costs are
# bitwise invariant: column means go over contiguous copies of the columns,
# sums across components go over sorted values.

def _col_means(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).T).mean(axis=1)


def _csum(x, axis=-1):
    return np.sort(x, axis=axis).sum(axis=axis)


def batch_pseudo_weights(betas):
    """``phi[i, v]``: batch mean of output ``i`` of variate ``v``."""
    betas = _as_outputs(betas)
    return np.stack([_col_means(b) for b in betas], axis=1)


def check_pseudo_weights(phi, floor=EPS_PHI):
    bad = np.argwhere(phi < floor)
    if bad.size:
        i, v = bad[0]
        raise DegenerateComponentError(int(i), int(v), float(phi[i, v]))


def unnormalized_weights(phi):
    """Geometric mean of the pseudo weights over variates, one per component."""
    return np.exp(np.log(phi).mean(axis=1))


@dataclass
class RegularizerConfig:
    kind: str = "none"
    lam: float = 0.0
    target_weights: object = None

    def __post_init__(self):
        if self.kind not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {self.kind!r}")
        if not np.isfinite(self.lam):
            raise ConfigError("regularizer strength must be finite")
        if self.kind == "known_weights":
            if self.target_weights is None:
                raise ConfigError("known_weights regularizer needs target_weights")
            t = np.asarray(self.target_weights, dtype=np.float64)
            if np.any(t < 0) or abs(t.sum() - 1.0) > 1e-9:
                raise ConfigError("target_weights must lie on the simplex")
            self.target_weights = t


def regularizer_term(weights, cfg):
    """Penalty added to the cost for mixture weights ``weights``.

    tikhonov: ``-lam * sum(w**2)``; shannon: ``lam * sum(w log w)``;
    known_weights: ``-lam * sum(w_true log w)``.
    """
    return _regularizer(np.asarray(weights, dtype=np.float64), cfg)[0]


def _regularizer(w, cfg):
    """Value and gradient with respect to ``w``."""
    if cfg is None or cfg.kind == "none":
        return 0.0, np.zeros_like(w)
    lam = cfg.lam
    if cfg.kind == "tikhonov":
        return -lam * _csum(w * w), -2.0 * lam * w
    if cfg.kind == "shannon":
        pos = w > 0
        logw = np.where(pos, np.log(np.where(pos, w, 1.0)), 0.0)
        grad = np.where(pos, lam * (logw + 1.0), 0.0)
        return lam * _csum(w * logw), grad
    target = cfg.target_weights
    if target.shape != w.shape:
        raise DimensionError("target_weights length differs from the component count")
    if np.any((w <= 0) & (target > 0)):
        raise FloatingPointError("known_weights regularizer diverges: a weight is zero "
                                 "where the target is positive")
    nz = target > 0
    value = -lam * _csum(np.where(nz, target * np.log(np.where(nz, w, 1.0)), 0.0))
    grad = np.zeros_like(w)
    grad[nz] = -lam * target[nz] / w[nz]
    return value, grad


# ---------------------------------------------------------------------------
# cross total correlation family


def _ctc_terms(betas, phi):
    V = len(betas)
    a = (1.0 - V) / V
    logphi = np.log(phi)
    scale = np.exp(a * logphi.sum(axis=1))
    prod = betas[0].copy()
    for b in betas[1:]:
        prod *= b
    terms = prod * scale
    num = _csum(terms, axis=1)
    w_tilde = np.exp(logphi.mean(axis=1))
    return terms, num, scale, w_tilde


def neg_ctc_cost(betas):
    """Negative cross total correlation of a batch of outputs."""
    betas = _as_outputs(betas)
    phi = batch_pseudo_weights(betas)
    check_pseudo_weights(phi)
    _, num, _, w_tilde = _ctc_terms(betas, phi)
    return -np.mean(np.log(np.maximum(num, EPS_LOG))) + np.log(_csum(w_tilde))


def unnorm_neg_ctc_cost(betas):
    """Surrogate of :func:`neg_ctc_cost` without the normalizing denominator."""
    betas = _as_outputs(betas)
    phi = batch_pseudo_weights(betas)
    check_pseudo_weights(phi)
    _, num, _, _ = _ctc_terms(betas, phi)
    return -np.mean(np.log(np.maximum(num, EPS_LOG)))


def _bivariate(betas):
    betas = _as_outputs(betas)
    if len(betas) != 2:
        raise DimensionError(f"bivariate cost needs exactly 2 variates, got {len(betas)}")
    bx, by = betas
    phi = batch_pseudo_weights(betas)
    check_pseudo_weights(phi)
    root = np.sqrt(phi[:, 0] * phi[:, 1])
    num = _csum(bx * by / root, axis=1)
    return num, root


def neg_cmi_cost(betas):
    """Negative cross mutual information: the two-variate case of :func:`neg_ctc_cost`."""
    num, root = _bivariate(betas)
    return -np.mean(np.log(np.maximum(num, EPS_LOG)) - np.log(_csum(root)))


def unnorm_neg_cmi_cost(betas):
    num, _ = _bivariate(betas)
    return -np.mean(np.log(np.maximum(num, EPS_LOG)))


def ctc_output_grads(betas, normalized=True, regularizer=None, phi=None, aux=None):
    """Cost value and its gradient with respect to every output entry.

    With ``phi`` and ``aux`` left as ``None`` the batch means are used and
    differentiated through, giving the exact gradient of the batch cost.
    Passing externally maintained estimates (see :func:`cost_gradient_moving`)
    substitutes them for the batch means; the gradient keeps the same three
    terms: the per-row term, the term through the numerator's dependence on
    the pseudo weights (weighted by ``aux``) and the term through the
    denominator.

    Returns
    -------
    cost : float
    grads : list of arrays, same shapes as ``betas``
    extra : dict with ``phi``, ``aux`` (batch mean responsibilities),
        ``w_tilde`` and the regularizer value
    """
    betas = _as_outputs(betas)
    n = betas[0].shape[0]
    V = len(betas)
    a = (1.0 - V) / V
    if phi is None:
        phi = batch_pseudo_weights(betas)
    check_pseudo_weights(phi)
    terms, num, scale, w_tilde = _ctc_terms(betas, phi)
    active = num > EPS_LOG
    inv_num = np.where(active, 1.0 / np.maximum(num, EPS_LOG), 0.0)
    resp = terms * inv_num[:, None]
    batch_aux = _col_means(resp)
    if aux is None:
        aux = batch_aux
    d_sum = _csum(w_tilde)

    cost = -np.mean(np.log(np.maximum(num, EPS_LOG)))
    g_phi = -a * aux[:, None] / phi
    if normalized:
        cost += np.log(d_sum)
        g_phi = g_phi + (w_tilde / (V * d_sum))[:, None] / phi
    reg_value = 0.0
    if regularizer is not None and regularizer.kind != "none":
        w = w_tilde / d_sum
        reg_value, g_w = _regularizer(w, regularizer)
        g_wt = (g_w - np.dot(g_w, w)) / d_sum
        g_phi = g_phi + (g_wt * w_tilde / V)[:, None] / phi
        cost += reg_value

    grads = []
    for u in range(V):
        others = np.ones_like(betas[u])
        for v in range(V):
            if v != u:
                others *= betas[v]
        direct = -others * scale * inv_num[:, None]
        grads.append((direct + g_phi[:, u]) / n)
    extra = {"phi": phi, "aux": batch_aux, "w_tilde": w_tilde, "regularizer": reg_value}
    return cost, grads, extra


# ---------------------------------------------------------------------------
# multi-label total correlation


def _einsum_spec(V):
    letters = string.ascii_lowercase.replace("n", "")
    if V > len(letters):
        raise DimensionError("too many variates for the joint table")
    idx = letters[:V]
    return idx, ",".join("n" + c for c in idx) + "->" + idx


def _joint_means(alphas, chunk_cells=1 << 22):
    """Batch mean of every product ``alpha_1[i1] * ... * alpha_V[iV]`` as a table."""
    n = alphas[0].shape[0]
    shape = tuple(a.shape[1] for a in alphas)
    cells = int(np.prod(shape))
    total = np.zeros(cells)
    step = max(1, chunk_cells // cells)
    for s in range(0, n, step):
        prod = alphas[0][s:s + step]
        for a in alphas[1:]:
            part = a[s:s + step]
            prod = (prod[:, :, None] * part[:, None, :]).reshape(len(part), -1)
        total += np.ascontiguousarray(prod.T).sum(axis=1)
    return (total / n).reshape(shape)


def _tc_table(alphas):
    joint = _joint_means(alphas)
    margs = [_col_means(a) for a in alphas]
    prod = margs[0]
    for m in margs[1:]:
        prod = np.multiply.outer(prod, m)
    return joint, margs, prod


def _tc_sum(joint, prod):
    mask = joint > EPS_PHI
    safe = np.where(mask, joint, 1.0)
    ratio = safe / np.where(mask, prod, 1.0)
    return _csum(np.where(mask, joint * np.log(ratio), 0.0).ravel())


def neg_tc_cost(alphas):
    """Negative total correlation between the predicted class labels.

    Variates may have different class counts. Table entries whose joint
    probability is below the floor contribute zero.
    """
    alphas = _as_outputs(alphas, same_width=False)
    joint, _, prod = _tc_table(alphas)
    return -_tc_sum(joint, prod)


def neg_mi_cost(alphas):
    """Two-variate :func:`neg_tc_cost`, written out explicitly."""
    alphas = _as_outputs(alphas, same_width=False)
    if len(alphas) != 2:
        raise DimensionError("neg_mi_cost needs exactly 2 variates")
    ax, ay = alphas
    joint = _joint_means([ax, ay])
    outer = np.outer(_col_means(ax), _col_means(ay))
    return -_tc_sum(joint, outer)


def tc_output_grads(alphas):
    alphas = _as_outputs(alphas, same_width=False)
    V = len(alphas)
    n = alphas[0].shape[0]
    joint, margs, prod = _tc_table(alphas)
    mask = joint > EPS_PHI
    safe = np.where(mask, joint, 1.0)
    cost = -_tc_sum(joint, prod)
    g_joint = np.where(mask, -(np.log(safe / np.where(mask, prod, 1.0)) + 1.0), 0.0)
    masked_joint = np.where(mask, joint, 0.0)
    idx, _ = _einsum_spec(V)
    grads = []
    for v in range(V):
        others = [alphas[w] for w in range(V) if w != v]
        operands = "".join(idx) + "".join("," + "n" + idx[w] for w in range(V) if w != v)
        direct = np.einsum(operands + "->n" + idx[v], g_joint, *others)
        axes = tuple(w for w in range(V) if w != v)
        g_marg = masked_joint.sum(axis=axes) / margs[v]
        grads.append((direct + g_marg) / n)
    return cost, grads, {}


# ---------------------------------------------------------------------------
# supervised seeding


def cross_entropy_supervised(outputs, labels):
    """Mean ``-log p[label]`` with probabilities floored at ``EPS_LOG``."""
    return _cross_entropy(outputs, labels)[0]


def _cross_entropy(outputs, labels):
    outputs = np.asarray(outputs, dtype=np.float64)
    labels = np.asarray(labels)
    if outputs.ndim != 2 or labels.shape != (outputs.shape[0],):
        raise DimensionError("need an (N, C) output matrix and N labels")
    if labels.size and (labels.min() < 0 or labels.max() >= outputs.shape[1]):
        raise DimensionError("labels out of range")
    n = outputs.shape[0]
    picked = outputs[np.arange(n), labels]
    floored = np.maximum(picked, EPS_LOG)
    grad = np.zeros_like(outputs)
    grad[np.arange(n), labels] = np.where(picked > EPS_LOG, -1.0 / (n * floored), 0.0)
    return -np.mean(np.log(floored)), grad


# ---------------------------------------------------------------------------
# dispatch


def cost_value(name, betas):
    """Evaluate the named cost on a batch of outputs."""
    funcs = {
        "neg_ctc": neg_ctc_cost,
        "neg_cmi": neg_cmi_cost,
        "unnorm_neg_ctc": unnorm_neg_ctc_cost,
        "unnorm_neg_cmi": unnorm_neg_cmi_cost,
        "neg_tc": neg_tc_cost,
        "neg_mi": neg_mi_cost,
    }
    if name not in funcs:
        raise ConfigError(f"unknown cost {name!r}")
    return funcs[name](betas)


def output_grads(name, betas, regularizer=None):
    """``(cost, per-variate output gradients, extra)`` for the named cost."""
    if name not in COSTS:
        raise ConfigError(f"unknown cost {name!r}")
    if name in ("neg_cmi", "unnorm_neg_cmi", "neg_mi") and len(betas) != 2:
        raise DimensionError(f"{name} needs exactly 2 variates")
    if name in ("neg_tc", "neg_mi"):
        if regularizer is not None and regularizer.kind != "none":
            raise ConfigError("weight regularizers apply to the mixture costs only")
        return tc_output_grads(betas)
    return ctc_output_grads(betas, normalized=not name.startswith("unnorm"),
                            regularizer=regularizer)


def cost_gradient_batch(net, variates, cost="neg_ctc", regularizer=None):
    """Cost on a batch and its exact gradient with respect to all network parameters.

    ``net`` is an :class:`~inclass.trainer.InClassNet`.
    """
    def grad_fn(betas):
        value, grads, extra = output_grads(cost, betas, regularizer)
        return grads, (value, extra)

    _, grad, (value, _) = net.forward_backward(variates, grad_fn)
    return value, grad


@dataclass
class MovingEstimates:
    """Running estimates of the pseudo weights and of the mean responsibilities."""

    phi_hat: np.ndarray
    aux: np.ndarray
    decay: float = 0.5
    n_updates: int = field(default=0)

    @classmethod
    def uniform(cls, n_components, n_variates, decay=0.5):
        c = n_components
        return cls(np.full((c, n_variates), 1.0 / c), np.full(c, 1.0 / c), decay)

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ConfigError("decay must lie in [0, 1)")


def cost_gradient_moving(net, variates, est, normalized=True, regularizer=None):
    """Minibatch gradient using moving estimates in place of full-data means.

    The estimates are first blended with the current minibatch (exponential
    moving average with ``est.decay``), then the gradient is evaluated with
    them held fixed. With ``decay=0`` on the full batch this is exactly the
    batch gradient. ``est`` is updated in place and also returned.
    """
    def grad_fn(betas):
        d = est.decay
        batch_phi = batch_pseudo_weights(betas)
        phi_hat = d * est.phi_hat + (1.0 - d) * batch_phi
        check_pseudo_weights(phi_hat)
        terms, num, _, _ = _ctc_terms(betas, phi_hat)
        resp = terms * np.where(num > EPS_LOG, 1.0 / np.maximum(num, EPS_LOG), 0.0)[:, None]
        aux = d * est.aux + (1.0 - d) * _col_means(resp)
        value, grads, _ = ctc_output_grads(betas, normalized, regularizer, phi_hat, aux)
        est.phi_hat = phi_hat
        est.aux = aux
        est.n_updates += 1
        return grads, value

    _, grad, value = net.forward_backward(variates, grad_fn)
    return value, grad, est
