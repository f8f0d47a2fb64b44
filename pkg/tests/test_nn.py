import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import central_difference, max_relative_error
from inclass.exceptions import DimensionError, InvalidInputError, OptimizerError
from inclass.nn import AdamState, MLPClassifier, adam_step, as_tensor2, softmax

finite = st.floats(-50, 50, allow_nan=False)


def test_softmax_examples():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([7.0, 7.0, 7.0]), [1 / 3] * 3, rtol=0, atol=1e-15)
    np.testing.assert_allclose(softmax([np.log(1.0), np.log(3.0)]), [0.25, 0.75], atol=1e-15)


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        softmax([0.0, np.inf])
    with pytest.raises(InvalidInputError):
        softmax([np.nan, 1.0])


def test_softmax_large_logits_do_not_overflow():
    out = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out))
    assert out[0] == 1.0


@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(-50, 50))
def test_softmax_simplex_and_shift_invariance(z, c):
    p = softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(softmax(z + c), p, rtol=0, atol=1e-12)


def test_as_tensor2_promotes_vectors_and_rejects_nan():
    assert as_tensor2([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(InvalidInputError):
        as_tensor2([[np.nan]])
    with pytest.raises(DimensionError):
        as_tensor2(np.zeros((2, 2, 2)))


def test_zero_final_layer_gives_uniform_rows(rng):
    net = MLPClassifier.initialized((3, 5, 4), rng)
    net.layers[-1].weights[...] = 0.0
    net.layers[-1].bias[...] = 0.0
    out = net.forward(rng.normal(size=(10, 3)))
    np.testing.assert_array_equal(out, np.full((10, 4), 0.25))


def test_single_row_matches_batch(rng):
    net = MLPClassifier.initialized((2, 6, 6, 3), rng)
    X = rng.normal(size=(7, 2))
    batch = net.forward(X)
    for k in range(7):
        np.testing.assert_allclose(net.forward(X[k:k + 1])[0], batch[k], rtol=0, atol=1e-15)


def test_seeded_net_is_bitwise_deterministic():
    a = MLPClassifier.initialized((2, 4, 2), np.random.Generator(np.random.Philox(3)))
    b = MLPClassifier.initialized((2, 4, 2), np.random.Generator(np.random.Philox(3)))
    x = np.array([[1.0, 0.0]])
    assert a.forward(x).tobytes() == a.forward(x).tobytes() == b.forward(x).tobytes()


def test_forward_shape_mismatch():
    net = MLPClassifier((3, 2))
    with pytest.raises(DimensionError):
        net.forward(np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        net.backward(np.zeros((4, 3)), np.zeros((4, 3)))


def test_initialization_ranges(rng):
    net = MLPClassifier.initialized((4, 32, 3), rng)
    hidden, last = net.layers
    assert np.abs(hidden.weights).max() <= np.sqrt(6 / 4)
    assert np.abs(last.weights).max() <= np.sqrt(6 / 35)
    assert not hidden.bias.any() and not last.bias.any()


def test_zero_upstream_gives_zero_gradient(rng):
    net = MLPClassifier.initialized((2, 5, 3), rng)
    g = net.backward(rng.normal(size=(6, 2)), np.zeros((6, 3)))
    assert not g.any()


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    widths = (3, *rng.integers(2, 33, size=rng.integers(1, 4)), int(rng.integers(2, 5)))
    net = MLPClassifier.initialized(widths, rng)
    net.set_params(net.params + 0.05 * rng.standard_normal(net.n_params))
    X = rng.normal(size=(5, 3))
    U = rng.normal(size=(5, widths[-1]))

    def f(p):
        return float(np.sum(U * MLPClassifier(widths, params=p).forward(X)))

    numeric = central_difference(f, net.params, h=1e-6)
    assert max_relative_error(net.backward(X, U), numeric) < 1e-4


def test_linear_layer_gradient_is_outer_product(rng):
    # one linear layer: dL/dW[j, k] = sum_n delta[n, j] * x[n, k], where delta is
    # the upstream gradient pulled back through the softmax
    net = MLPClassifier((3, 2), activations=("linear",), params=rng.normal(size=8))
    X = rng.normal(size=(4, 3))
    U = rng.normal(size=(4, 2))
    probs = net.forward(X)
    delta = probs * (U - np.sum(U * probs, axis=1, keepdims=True))
    g = net.backward(X, U)
    for j in range(2):
        for k in range(3):
            assert g[j * 3 + k] == pytest.approx(np.sum(delta[:, j] * X[:, k]), rel=1e-12)
    np.testing.assert_allclose(g[6:], delta.sum(axis=0), rtol=1e-12)


def test_param_views_share_memory(rng):
    net = MLPClassifier.initialized((2, 3, 2), rng)
    net.params[0] = 42.0
    assert net.layers[0].weights[0, 0] == 42.0
    copy = net.copy()
    copy.params[0] = 0.0
    assert net.params[0] == 42.0


def test_adam_zero_gradient_leaves_params():
    s = AdamState(3)
    p = np.array([1.0, -2.0, 3.0])
    out = adam_step(s, p, np.zeros(3))
    np.testing.assert_array_equal(out, p)
    assert s.step_count == 1


@given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_adam_first_step_moves_by_lr(g):
    s = AdamState(1)
    out = adam_step(s, np.zeros(1), np.array([g]))
    # m_hat = g, v_hat = g^2 at t=1
    expected = -1e-3 * g / (abs(g) + 1e-7)
    assert out[0] == pytest.approx(expected, rel=1e-12)
    assert out[0] == pytest.approx(-1e-3 * np.sign(g), rel=1e-4)


def test_adam_two_steps_are_monotone():
    s = AdamState(1)
    p0 = np.zeros(1)
    p1 = adam_step(s, p0, np.array([0.5]))
    p2 = adam_step(s, p1, np.array([0.5]))
    assert p2[0] < p1[0] < p0[0]


def test_adam_rejects_non_finite_gradient_with_index():
    s = AdamState(3)
    with pytest.raises(OptimizerError) as err:
        adam_step(s, np.zeros(3), np.array([0.0, np.nan, 1.0]))
    assert err.value.index == 1


def test_adam_clip_norm(rng):
    a, b = AdamState(4), AdamState(4)
    g = rng.normal(size=4) * 100
    adam_step(a, np.zeros(4), g, clip_norm=1.0)
    adam_step(b, np.zeros(4), g / np.linalg.norm(g))
    np.testing.assert_allclose(a.first_moment, b.first_moment, rtol=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_forward_rows_on_simplex(seed, n):
    rng = np.random.default_rng(seed)
    net = MLPClassifier.initialized((2, 8, 8, 3), rng)
    out = net.forward(rng.normal(scale=10, size=(n, 2)))
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
