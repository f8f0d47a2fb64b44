"""Minimal dense-network engine.

Dense ReLU layers followed by a linear layer and a softmax head, trained with
Adam. All numbers are float64. A network keeps its parameters in one flat
vector; the per-layer weight and bias arrays are views into it, so the
optimizer and the checkpoint writer can work on the flat vector directly.

Matrices follow the ``(rows, cols)`` row-major convention of numpy: a batch
is ``N x d``, a layer weight is ``out x in``.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, InvalidInputError, OptimizerError

ACTIVATIONS = ("relu", "linear")


def as_tensor2(x, name="array"):
    """Return ``x`` as a finite 2-D float64 array (a 1-D input becomes a column)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def softmax(logits):
    """Softmax over the last axis, shifted by the row maximum for stability.

    Accepts a single logit vector or a batch of them.

    >>> softmax([0.0, 0.0])
    array([0.5, 0.5])
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    # sorted sum: reordering the classes permutes the output bitwise
    return e / np.sort(e, axis=-1).sum(axis=-1, keepdims=True)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError("bias length must equal the weight row count")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


class MLPClassifier:
    """Stack of dense layers ending in a softmax over ``output_dim`` classes.

    Parameters
    ----------
    widths : sequence of int
        Layer widths including input and output, e.g. ``(1, 32, 32, 32, 2)``.
    activations : sequence of str, optional
        One per layer. Defaults to ReLU for hidden layers and linear for the
        last one (the softmax is applied on top of it).
    params : array, optional
        Flat parameter vector; zeros when omitted.
    """

    def __init__(self, widths, activations=None, params=None):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"invalid layer widths {widths}")
        n_layers = len(widths) - 1
        if activations is None:
            activations = ("relu",) * (n_layers - 1) + ("linear",)
        if len(activations) != n_layers:
            raise ValueError("need one activation per layer")
        self.widths = widths
        self.activations = tuple(activations)
        n = sum(o * i + o for i, o in zip(widths[:-1], widths[1:]))
        if params is None:
            self.params = np.zeros(n)
        else:
            params = np.array(params, dtype=np.float64)
            if params.shape != (n,):
                raise DimensionError(f"expected {n} parameters, got {params.shape}")
            self.params = params
        self._build_views()

    def _build_views(self):
        self.layers = []
        pos = 0
        for (i, o), act in zip(zip(self.widths[:-1], self.widths[1:]), self.activations):
            w = self.params[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = self.params[pos:pos + o]
            pos += o
            self.layers.append(DenseLayer(w, b, act))

    @classmethod
    def initialized(cls, widths, rng, activations=None):
        """He-uniform for ReLU layers, Glorot-uniform for linear ones, zero biases."""
        net = cls(widths, activations)
        for layer in net.layers:
            fan_in, fan_out = layer.in_dim, layer.out_dim
            if layer.activation == "relu":
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            layer.weights[...] = rng.uniform(-limit, limit, size=layer.weights.shape)
        return net

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    @property
    def n_params(self):
        return self.params.size

    def set_params(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != self.params.shape:
            raise DimensionError("parameter vector has the wrong length")
        self.params[...] = params

    def copy(self):
        return MLPClassifier(self.widths, self.activations, self.params.copy())

    def _check_batch(self, X):
        X = as_tensor2(X, "batch")
        if X.shape[1] != self.input_dim:
            raise DimensionError(
                f"batch has {X.shape[1]} columns, network expects {self.input_dim}")
        return X

    def _forward_cached(self, X):
        acts = [X]
        h = X
        for layer in self.layers:
            h = h @ layer.weights.T + layer.bias
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
            acts.append(h)
        return softmax(h), acts

    def forward(self, X):
        """Class probabilities, shape ``(N, output_dim)``."""
        return self._forward_cached(self._check_batch(X))[0]

    def backward(self, X, upstream):
        """Gradient of ``sum(upstream * forward(X))`` with respect to ``params``."""
        X = self._check_batch(X)
        probs, acts = self._forward_cached(X)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != probs.shape:
            raise DimensionError(
                f"upstream gradient shape {upstream.shape} != output shape {probs.shape}")
        return self._backprop(probs, acts, upstream)

    def forward_backward(self, X, grad_fn):
        """Run a forward pass, call ``grad_fn(probs)`` for the output gradient, backprop.

        Returns ``(probs, param_grad, extra)`` where ``extra`` is whatever
        ``grad_fn`` returned alongside the gradient.
        """
        probs, acts = self._forward_cached(self._check_batch(X))
        upstream, extra = grad_fn(probs)
        return probs, self._backprop(probs, acts, upstream), extra

    def _backprop(self, probs, acts, upstream):
        grad = np.empty_like(self.params)
        # softmax Jacobian-vector product
        delta = probs * (upstream - np.sum(upstream * probs, axis=1, keepdims=True))
        pos = self.params.size
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.activation == "relu":
                delta = delta * (acts[k + 1] > 0.0)
            o, i = layer.weights.shape
            grad[pos - o:pos] = delta.sum(axis=0)
            pos -= o
            grad[pos - o * i:pos] = (delta.T @ acts[k]).ravel()
            pos -= o * i
            if k:
                delta = delta @ layer.weights
        return grad


@dataclass
class AdamState:
    """Adam moments for a flat parameter vector (defaults match common frameworks)."""

    n_params: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step_count: int = 0
    first_moment: np.ndarray = field(default=None)
    second_moment: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.first_moment is None:
            self.first_moment = np.zeros(self.n_params)
        if self.second_moment is None:
            self.second_moment = np.zeros(self.n_params)
        if self.first_moment.shape != (self.n_params,) or \
                self.second_moment.shape != (self.n_params,):
            raise DimensionError("Adam moments must match the parameter count")


def adam_step(state, params, grads, clip_norm=None):
    """Apply one bias-corrected Adam update; returns the new parameter vector.

    ``state`` is updated in place. ``clip_norm`` rescales the gradient to at
    most that global L2 norm before the update.
    """
    grads = np.asarray(grads, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if grads.shape != params.shape or params.shape != (state.n_params,):
        raise DimensionError("params, grads and optimizer state disagree in length")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise OptimizerError(f"non-finite gradient at parameter {bad[0]}", int(bad[0]))
    if clip_norm is not None:
        norm = np.sqrt(np.dot(grads, grads))
        if norm > clip_norm:
            grads = grads * (clip_norm / norm)
    state.step_count += 1
    t = state.step_count
    m = state.first_moment
    v = state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * grads
    v *= state.beta2
    v += (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
