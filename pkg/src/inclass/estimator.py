"""scikit-learn style wrapper around training and extraction."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .costs import RegularizerConfig, cost_value
from .exceptions import ConfigError
from .extraction import aggregate_classifier, estimate_pseudo_weights, mixture_weights
from .trainer import Dataset, TrainConfig, build_inclass_net, train


class InClassMixture(BaseEstimator):
    """Unsupervised mixture estimation with independent classifier networks.

    ``X`` is a 2-D array whose columns are split into variates by
    ``variate_dims`` (default: one column per variate). After ``fit``,
    ``weights_`` holds the mixture weights and ``predict_proba`` the
    aggregate membership probabilities.

    Parameters
    ----------
    n_components : int
    variate_dims : tuple of int or None
    hidden : tuple of int
        Hidden widths of every per-variate classifier.
    epochs, batch_size, lr, cost, gradient_mode, decay : training settings
    regularizer, reg_strength : str, float
        Weight regularizer kind and strength.
    random_state : int
    """

    def __init__(self, n_components=2, variate_dims=None, hidden=(32, 32, 32), epochs=15,
                 batch_size=50, lr=1e-3, cost="neg_ctc", gradient_mode="batch", decay=0.5,
                 regularizer="none", reg_strength=0.0, random_state=0):
        self.n_components = n_components
        self.variate_dims = variate_dims
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.cost = cost
        self.gradient_mode = gradient_mode
        self.decay = decay
        self.regularizer = regularizer
        self.reg_strength = reg_strength
        self.random_state = random_state

    def _split(self, X):
        X = check_array(X, dtype=np.float64)
        dims = self.variate_dims or (1,) * X.shape[1]
        if sum(dims) != X.shape[1]:
            raise ConfigError(f"variate_dims {tuple(dims)} do not add up to "
                              f"{X.shape[1]} columns")
        bounds = np.cumsum((0,) + tuple(dims))
        return [X[:, a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    def fit(self, X, y=None):
        variates = self._split(X)
        if len(variates) < 2:
            raise ConfigError("need at least two variates")
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          min_batch_for_means=min(50, self.batch_size), cost=self.cost,
                          gradient_mode=self.gradient_mode, decay=self.decay, lr=self.lr,
                          regularizer=RegularizerConfig(self.regularizer, self.reg_strength),
                          seed=self.random_state)
        net = build_inclass_net([v.shape[1] for v in variates], self.hidden,
                                self.n_components, seed=self.random_state)
        result = train(net, Dataset(variates), cfg)
        self.net_ = result.net
        self.training_log_ = result.log
        self.pseudo_weights_ = estimate_pseudo_weights(self.net_, variates)
        self.weights_ = mixture_weights(self.pseudo_weights_)
        self.n_features_in_ = X.shape[1] if hasattr(X, "shape") else sum(
            v.shape[1] for v in variates)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        return aggregate_classifier(self.net_, self.pseudo_weights_, self._split(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y=None):
        """Negative cost on ``X`` (higher is better); estimates the total correlation."""
        check_is_fitted(self, "net_")
        return -cost_value(self.cost, self.net_.forward(self._split(X)))
