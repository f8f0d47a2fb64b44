"""Shared oracles for the test suite."""

import numpy as np

from inclass.trainer import build_inclass_net


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at flat vector ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for k in range(x.size):
        old = x[k]
        x[k] = old + h
        up = f(x)
        x[k] = old - h
        down = f(x)
        x[k] = old
        g[k] = (up - down) / (2 * h)
    return g


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest per-entry |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def random_simplex(rng, n, c):
    return rng.dirichlet(np.ones(c), size=n)


def small_net(seed, dims=(1, 1), hidden=(8,), C=2, sharing=None):
    net = build_inclass_net(dims, hidden, C, sharing, seed=seed)
    # non-zero biases so no unit sits exactly on a ReLU kink
    rng = np.random.default_rng(seed + 1000)
    net.set_params(net.params + 0.1 * rng.standard_normal(net.n_params))
    return net


def normal_pdf(x, mean, sd):
    return np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
