import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import central_difference, max_relative_error, random_simplex, small_net
from inclass import costs
from inclass.costs import (MovingEstimates, RegularizerConfig, cost_gradient_batch,
                           cost_gradient_moving, cost_value, cross_entropy_supervised,
                           neg_cmi_cost, neg_ctc_cost, neg_mi_cost, neg_tc_cost,
                           regularizer_term, unnorm_neg_cmi_cost, unnorm_neg_ctc_cost)
from inclass.exceptions import ConfigError, DegenerateComponentError, DimensionError
from inclass.synthetic import checkerboard_component, sample_checkerboard

LN2 = np.log(2.0)


def one_hot(labels, C):
    return np.eye(C)[labels]


@pytest.mark.parametrize("V,C", [(2, 2), (2, 5), (3, 3), (4, 2)])
def test_uniform_outputs_cost_zero(V, C):
    betas = [np.full((17, C), 1.0 / C)] * V
    assert neg_ctc_cost(betas) == pytest.approx(0.0, abs=1e-15)
    assert unnorm_neg_ctc_cost(betas) == pytest.approx(0.0, abs=1e-15)


def test_single_component_cost_zero():
    assert neg_ctc_cost([np.ones((9, 1))] * 3) == 0.0


def test_checkerboard_hard_labels():
    gen = sample_checkerboard(10_000, seed=1)
    x, y = (v[:, 0] for v in gen.data.variates)
    bx = one_hot(np.floor(x).astype(int) % 2, 2)
    by = one_hot(np.floor(y).astype(int) % 2, 2)
    assert np.array_equal(checkerboard_component(x, y), gen.labels)
    assert neg_ctc_cost([bx, by]) == pytest.approx(-LN2, abs=0.02)
    assert neg_cmi_cost([bx, by]) == pytest.approx(-LN2, abs=0.02)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(1, 80))
def test_bivariate_forms_agree(seed, C, n):
    rng = np.random.default_rng(seed)
    b = [random_simplex(rng, n, C) for _ in range(2)]
    assert neg_cmi_cost(b) == pytest.approx(neg_ctc_cost(b), abs=1e-12)
    assert unnorm_neg_cmi_cost(b) == pytest.approx(unnorm_neg_ctc_cost(b), abs=1e-12)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(2, 4), st.integers(1, 100))
def test_unnormalized_dominates(seed, C, V, n):
    rng = np.random.default_rng(seed)
    b = [random_simplex(rng, n, C) for _ in range(V)]
    assert unnorm_neg_ctc_cost(b) - neg_ctc_cost(b) >= -1e-12


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7), st.integers(2, 3))
def test_permutation_invariance_is_bitwise(seed, C, V):
    rng = np.random.default_rng(seed)
    b = [random_simplex(rng, 40, C) for _ in range(V)]
    perm = rng.permutation(C)
    bp = [x[:, perm] for x in b]
    names = ["neg_ctc", "unnorm_neg_ctc", "neg_tc"] + (
        ["neg_cmi", "unnorm_neg_cmi", "neg_mi"] if V == 2 else [])
    for name in names:
        assert cost_value(name, b) == cost_value(name, bp)


def test_row_constant_outputs_zero_and_nonneg_when_rows_differ(rng):
    row = random_simplex(rng, 1, 3)
    same = [np.repeat(row, 20, axis=0)] * 2
    assert neg_ctc_cost(same) == pytest.approx(0.0, abs=1e-15)
    # variate-wise constant but different rows: no information shared
    other = [np.repeat(row, 20, axis=0), np.repeat(random_simplex(rng, 1, 3), 20, axis=0)]
    assert neg_ctc_cost(other) >= -1e-15


def test_degenerate_component_identified():
    bx = np.tile([1.0, 0.0], (10, 1))
    by = np.tile([0.5, 0.5], (10, 1))
    with pytest.raises(DegenerateComponentError) as err:
        neg_ctc_cost([bx, by])
    assert (err.value.component, err.value.variate) == (1, 0)


def test_shape_errors():
    with pytest.raises(DimensionError):
        neg_ctc_cost([np.full((3, 2), 0.5), np.full((4, 2), 0.5)])
    with pytest.raises(DimensionError):
        neg_cmi_cost([np.full((3, 2), 0.5)] * 3)
    with pytest.raises(ConfigError):
        cost_value("nope", [np.full((3, 2), 0.5)] * 2)


# ---------------------------------------------------------------------------
# regularizers


def test_regularizer_examples():
    u = np.full(4, 0.25)
    assert regularizer_term(u, RegularizerConfig("shannon", 2.0)) == pytest.approx(-2 * np.log(4))
    assert regularizer_term(u, RegularizerConfig("tikhonov", 2.0)) == pytest.approx(-2 / 4)
    kw = RegularizerConfig("known_weights", 1.0, target_weights=(0.4, 0.6))
    assert regularizer_term(np.array([0.4, 0.6]), kw) == pytest.approx(0.67301, abs=1e-5)
    assert regularizer_term(u, RegularizerConfig()) == 0.0


def test_shannon_zero_weight_convention():
    assert regularizer_term(np.array([0.0, 1.0]), RegularizerConfig("shannon", 1.0)) == 0.0


def test_known_weights_divergence():
    kw = RegularizerConfig("known_weights", 1.0, target_weights=(0.5, 0.5))
    with pytest.raises(FloatingPointError):
        regularizer_term(np.array([0.0, 1.0]), kw)


def test_regularizer_config_validation():
    with pytest.raises(ConfigError):
        RegularizerConfig("known_weights", 1.0)
    with pytest.raises(ConfigError):
        RegularizerConfig("known_weights", 1.0, target_weights=(0.3, 0.3))
    with pytest.raises(ConfigError):
        RegularizerConfig("bogus")
    with pytest.raises(ConfigError):
        RegularizerConfig("tikhonov", float("inf"))


# ---------------------------------------------------------------------------
# multi-label total correlation


def test_tc_constant_rows_zero(rng):
    a = [np.repeat(random_simplex(rng, 1, 2), 30, 0), np.repeat(random_simplex(rng, 1, 3), 30, 0)]
    assert neg_tc_cost(a) == pytest.approx(0.0, abs=1e-15)


def test_tc_perfect_coupling(rng):
    labels = rng.integers(0, 2, size=10_000)
    a = [one_hot(labels, 2)] * 2
    assert neg_tc_cost(a) == pytest.approx(-LN2, abs=0.02)
    assert neg_mi_cost(a) == pytest.approx(-LN2, abs=0.02)


def test_tc_independent_labels_different_widths(rng):
    a = [one_hot(rng.integers(0, 2, 50_000), 2), one_hot(rng.integers(0, 3, 50_000), 3)]
    assert neg_tc_cost(a) == pytest.approx(0.0, abs=0.01)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.integers(2, 4))
def test_tc_bivariate_matches_mi_and_is_nonpositive(seed, cx, cy):
    rng = np.random.default_rng(seed)
    a = [random_simplex(rng, 60, cx), random_simplex(rng, 60, cy)]
    assert neg_tc_cost(a) == pytest.approx(neg_mi_cost(a), abs=1e-12)
    assert neg_tc_cost(a) <= 1e-12


# ---------------------------------------------------------------------------
# supervised seeding


def test_cross_entropy_examples():
    assert cross_entropy_supervised(np.array([[0.25, 0.75]]), [1]) == pytest.approx(0.28768, abs=1e-5)
    assert cross_entropy_supervised(np.full((5, 4), 0.25), [0, 1, 2, 3, 0]) == pytest.approx(np.log(4))
    assert cross_entropy_supervised(np.eye(3), [0, 1, 2]) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DimensionError):
        cross_entropy_supervised(np.eye(3), [0, 1, 3])


# ---------------------------------------------------------------------------
# gradients


def _cost_of(net, batch, name, reg=None):
    def f(p):
        trial = net.copy()
        trial.set_params(p)
        betas = trial.forward(batch)
        value = cost_value(name, betas)
        if reg is not None and reg.kind != "none":
            pw = costs.batch_pseudo_weights(betas)
            wt = costs.unnormalized_weights(pw)
            value += regularizer_term(wt / wt.sum(), reg)
        return value
    return f


@pytest.mark.parametrize("name", costs.COSTS)
def test_batch_gradient_finite_differences(name):
    # spec example: 2 variates, C=2, width-8 net, 256-row batch
    net = small_net(3, hidden=(8,))
    rng = np.random.default_rng(4)
    x = rng.normal(size=(256, 1))
    batch = [x + 0.3 * rng.normal(size=(256, 1)), x + 0.3 * rng.normal(size=(256, 1))]
    value, grad = cost_gradient_batch(net, batch, name)
    assert value == pytest.approx(cost_value(name, net.forward(batch)), abs=1e-14)
    numeric = central_difference(_cost_of(net, batch, name), net.params, h=1e-6)
    assert max_relative_error(grad, numeric) < 1e-4


@pytest.mark.parametrize("reg", [RegularizerConfig("tikhonov", 0.5),
                                 RegularizerConfig("shannon", 0.5),
                                 RegularizerConfig("known_weights", 0.5, (0.3, 0.7))])
def test_regularized_gradient_finite_differences(reg):
    net = small_net(5, hidden=(6,))
    rng = np.random.default_rng(6)
    x = rng.normal(size=(128, 1))
    batch = [x, x + rng.normal(size=(128, 1))]
    _, grad = cost_gradient_batch(net, batch, "neg_ctc", reg)
    numeric = central_difference(_cost_of(net, batch, "neg_ctc", reg), net.params, h=1e-6)
    assert max_relative_error(grad, numeric) < 1e-4


def test_moving_gradient_at_decay_zero_equals_batch():
    net = small_net(7, dims=(1, 1, 1), hidden=(8,), C=3)
    rng = np.random.default_rng(8)
    batch = [rng.normal(size=(200, 1)) for _ in range(3)]
    for name, normalized in (("neg_ctc", True), ("unnorm_neg_ctc", False)):
        v_batch, g_batch = cost_gradient_batch(net, batch, name)
        est = MovingEstimates.uniform(3, 3, decay=0.0)
        v_mov, g_mov, _ = cost_gradient_moving(net, batch, est, normalized=normalized)
        assert v_mov == pytest.approx(v_batch, abs=1e-12)
        np.testing.assert_allclose(g_mov, g_batch, rtol=0, atol=1e-10)


def test_moving_fixed_point_is_stationary():
    net = small_net(9, hidden=(8,))
    rng = np.random.default_rng(10)
    batch = [rng.normal(size=(300, 1)) for _ in range(2)]
    est = MovingEstimates.uniform(2, 2, decay=0.9)
    for _ in range(400):
        cost_gradient_moving(net, batch, est)
    _, g1, _ = cost_gradient_moving(net, batch, est)
    _, g2, _ = cost_gradient_moving(net, batch, est)
    np.testing.assert_allclose(g1, g2, rtol=0, atol=1e-10)
    np.testing.assert_allclose(est.phi_hat.sum(axis=0), 1.0, atol=1e-6)
    assert est.n_updates == 402


def test_moving_estimate_validation():
    with pytest.raises(ConfigError):
        MovingEstimates.uniform(2, 2, decay=1.0)


def test_uniform_net_has_zero_final_bias_gradient():
    net = small_net(11, hidden=(8,))
    for sub in net.nets:
        sub.layers[-1].weights[...] = 0.0
        sub.layers[-1].bias[...] = 0.0
    rng = np.random.default_rng(12)
    batch = [rng.normal(size=(64, 1)) for _ in range(2)]
    _, grad = cost_gradient_batch(net, batch)
    pos = 0
    for sub in net.nets:
        pos += sub.n_params
        np.testing.assert_allclose(grad[pos - 2:pos], 0.0, atol=1e-15)


def test_gradient_invariant_to_row_order():
    net = small_net(13, hidden=(8,))
    rng = np.random.default_rng(14)
    batch = [rng.normal(size=(100, 1)) for _ in range(2)]
    perm = rng.permutation(100)
    _, g1 = cost_gradient_batch(net, batch)
    _, g2 = cost_gradient_batch(net, [x[perm] for x in batch])
    np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-15)
