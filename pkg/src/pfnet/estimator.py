"""scikit-learn wrappers around the filter bank and the full frame classifier.

Both take ``X`` as a 2-D array of raw waveform frames, one row per frame.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import filters as flt
from .errors import ConfigError
from .filters import FilterSpec
from .model import build_network, predict_proba, train_epoch
from .nn import HeadConfig, OptimizerConfig, RMSprop


class FilterBankTransformer(TransformerMixin, BaseEstimator):
    """Filter frames with a Mel-initialized piecewise-linear filter bank.

    ``fit`` only draws the initial bank (it ignores ``y``).  ``transform``
    returns ``(n_frames, num_filters * (T - kernel_len + 1))`` or, with
    ``flatten=False``, the 3-D filter outputs.
    """

    def __init__(self, num_filters=32, kernel_len=251, num_deform_points=5, sample_rate=8000,
                 window_convention="denominator_L_minus_1", seed=0, flatten=True):
        self.num_filters = num_filters
        self.kernel_len = kernel_len
        self.num_deform_points = num_deform_points
        self.sample_rate = sample_rate
        self.window_convention = window_convention
        self.seed = seed
        self.flatten = flatten

    def _spec(self):
        return FilterSpec(self.num_filters, self.kernel_len, self.num_deform_points, self.sample_rate,
                          window_convention=self.window_convention)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        spec = self._spec()
        if X.shape[1] < spec.kernel_len:
            raise ValueError(f"frames have {X.shape[1]} samples, fewer than kernel_len={spec.kernel_len}")
        self.spec_ = spec
        self.params_ = flt.init_filterbank(spec, self.seed)
        self.kernels_ = flt.filterbank_kernels(self.params_, spec)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} samples per frame, got {X.shape[1]}")
        y, _ = flt.filterbank_forward(X[:, None, :], self.params_, self.spec_)
        return y.reshape(len(X), -1) if self.flatten else y


class PFNetClassifier(ClassifierMixin, BaseEstimator):
    """Frame classifier: learnable filter bank, CNN head, RMSprop training."""

    def __init__(self, front_end="pfnet", num_filters=32, kernel_len=251, num_deform_points=5,
                 sample_rate=8000, conv_layers=2, conv_channels=16, conv_kernel=5, pool_width=3,
                 dense_layers=3, dense_width=128, lrelu_slope=0.2, epochs=12, lr=1e-3, alpha=0.95,
                 epsilon=1e-7, batch_size=32, dtype="float32", seed=0):
        self.front_end = front_end
        self.num_filters = num_filters
        self.kernel_len = kernel_len
        self.num_deform_points = num_deform_points
        self.sample_rate = sample_rate
        self.conv_layers = conv_layers
        self.conv_channels = conv_channels
        self.conv_kernel = conv_kernel
        self.pool_width = pool_width
        self.dense_layers = dense_layers
        self.dense_width = dense_width
        self.lrelu_slope = lrelu_slope
        self.epochs = epochs
        self.lr = lr
        self.alpha = alpha
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.dtype = dtype
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        labels = np.searchsorted(self.classes_, y)
        S = self.num_deform_points if self.front_end == "pfnet" else 0
        spec = FilterSpec(self.num_filters, self.kernel_len, S, self.sample_rate)
        head = HeadConfig(self.conv_layers, self.conv_channels, self.conv_kernel, self.pool_width,
                          self.dense_layers, self.dense_width, self.lrelu_slope, len(self.classes_))
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        self.network_ = build_network(self.front_end, spec, head, X.shape[1], self.seed, np.dtype(self.dtype))
        opt = RMSprop(OptimizerConfig(self.lr, self.alpha, self.epsilon, self.batch_size))
        frames = X[:, None, :]
        self.loss_curve_ = [
            train_epoch(self.network_, opt, frames, labels, np.random.default_rng([self.seed, 2, epoch]))
            for epoch in range(1, self.epochs + 1)
        ]
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} samples per frame, got {X.shape[1]}")
        return predict_proba(self.network_, X[:, None, :])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


__all__ = ["FilterBankTransformer", "PFNetClassifier"]
