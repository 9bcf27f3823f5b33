"""Small differentiable layers and the RMSprop optimizer, in plain numpy.

Every operation comes as a ``*_forward`` / ``*_backward`` pair working on
arrays; the ``Layer`` subclasses bind parameters and caches to those pairs
so a network is just a list of layers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheError, ConfigError, DataError, DivergenceError, ShapeError

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class HeadConfig:
    """Layers after the filter bank.  Defaults follow the full-size recipe."""

    conv_layers: int = 2
    conv_channels: int = 60
    conv_kernel: int = 5
    pool_width: int = 3  # 0 or 1 disables pooling
    dense_layers: int = 3
    dense_width: int = 2048
    lrelu_slope: float = 0.2
    num_classes: int = 10

    def __post_init__(self):
        for name in ("conv_layers", "dense_layers"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("conv_channels", "conv_kernel", "dense_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.pool_width < 0:
            raise ConfigError("pool_width must be >= 0")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    alpha: float = 0.95
    epsilon: float = 1e-7
    batch_size: int = 128

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


def kaiming_uniform(rng, shape, fan_in, slope):
    gain = math.sqrt(2.0 / (1.0 + slope**2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# -- functional ops ----------------------------------------------------------------


def conv1d_forward(x, w, b):
    B, C_in, T = x.shape
    C_out, C_w, K = w.shape
    if C_w != C_in or b.shape != (C_out,):
        raise ShapeError(f"conv1d: input {x.shape}, weights {w.shape}, bias {b.shape}")
    if T < K:
        raise ShapeError(f"conv1d: input length {T} shorter than kernel {K}")
    Tp = T - K + 1
    cols = sliding_window_view(x, K, axis=2).transpose(0, 2, 1, 3).reshape(B * Tp, C_in * K)
    y = cols @ w.reshape(C_out, -1).T + b
    return y.reshape(B, Tp, C_out).transpose(0, 2, 1), cols


def conv1d_backward(dy, x_shape, w, cols):
    B, C_in, T = x_shape
    C_out, _, K = w.shape
    Tp = T - K + 1
    dy2 = dy.transpose(0, 2, 1).reshape(B * Tp, C_out)
    dw = (dy2.T @ cols).reshape(w.shape)
    db = dy.sum(axis=(0, 2))
    dcols = (dy2 @ w.reshape(C_out, -1)).reshape(B, Tp, C_in, K)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for k in range(K):
        dx[:, :, k : k + Tp] += dcols[..., k].transpose(0, 2, 1)
    return dx, dw, db


def maxpool1d_forward(x, width):
    if width < 1:
        raise ConfigError("pool width must be >= 1")
    B, C, T = x.shape
    if T < width:
        raise ShapeError(f"maxpool: input length {T} shorter than width {width}")
    T2 = T // width
    xr = x[..., : T2 * width].reshape(B, C, T2, width)
    idx = xr.argmax(axis=-1)  # first maximum on ties
    return np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0], idx


def maxpool1d_backward(dy, x_shape, idx, width):
    B, C, T = x_shape
    T2 = dy.shape[-1]
    dxr = np.zeros((B, C, T2, width), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[..., : T2 * width] = dxr.reshape(B, C, T2 * width)
    return dx


def _norm_axes(x):
    if x.ndim == 2:
        return (1,), (1, -1)
    if x.ndim == 3:
        return (1, 2), (1, -1, 1)
    raise ShapeError(f"layer_norm expects (B, D) or (B, C, T), got {x.shape}")


def layer_norm_forward(x, gain, bias):
    """Per-sample normalization over all non-batch axes, then per-channel affine."""
    axes, pshape = _norm_axes(x)
    count = int(np.prod([x.shape[a] for a in axes]))
    if count < 2:
        raise ConfigError("layer_norm needs at least two elements per sample")
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain.reshape(pshape) + bias.reshape(pshape), (xhat, inv)


def layer_norm_backward(dy, gain, cache):
    xhat, inv = cache
    axes, pshape = _norm_axes(dy)
    sum_axes = (0,) + tuple(a for a in axes if a != 1)
    dgain = (dy * xhat).sum(axis=sum_axes)
    dbias = dy.sum(axis=sum_axes)
    dxhat = dy * gain.reshape(pshape)
    m1 = dxhat.mean(axis=axes, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
    return inv * (dxhat - m1 - xhat * m2), dgain, dbias


def batch_norm_forward(x, gamma, beta, running_mean, running_var, train):
    """Returns ``(y, cache)``; in train mode updates the running stats in place."""
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects (B, D), got {x.shape}")
    if train:
        B = x.shape[0]
        if B < 2:
            raise ConfigError("batch_norm in train mode needs a batch of at least 2")
        mu = x.mean(axis=0)
        xc = x - mu
        var = (xc * xc).mean(axis=0)
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mu
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var * (B / (B - 1))
    else:
        xc = x - running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, train)


def batch_norm_backward(dy, gamma, cache):
    xhat, inv, train = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if not train:
        return dxhat * inv, dgamma, dbeta
    dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
    return dx, dgamma, dbeta


def leaky_relu_forward(x, slope):
    return np.where(x >= 0, x, slope * x)


def leaky_relu_backward(dy, x, slope):
    return np.where(x >= 0, dy, slope * dy)


def dense_forward(x, w, b):
    if x.ndim != 2 or w.shape[1] != x.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"dense: input {x.shape}, weights {w.shape}, bias {b.shape}")
    return x @ w.T + b


def dense_backward(dy, x, w):
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean loss, gradient w.r.t. logits, and posteriors."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.shape != (B,) or np.any(labels < 0) or np.any(labels >= C):
        raise DataError(f"labels must be {B} integers in [0, {C})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(logsum - z[rows, labels]))
    post = np.exp(z - logsum[:, None])
    grad = post.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / B, post


# -- layers --------------------------------------------------------------------------


class Layer:
    """Base layer: ``params``/``grads`` dicts plus non-trainable ``buffers``."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.frozen = set()
        self._cache = None

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def astype(self, dtype):
        """Cast parameters and buffers in place of the old arrays."""
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        self.grads = {}
        return self

    def _need_cache(self):
        if self._cache is None:
            raise CacheError(f"{type(self).__name__}.backward called before forward")
        return self._cache


class Conv1d(Layer):
    def __init__(self, c_in, c_out, kernel, rng, slope=0.2):
        super().__init__()
        fan_in = c_in * kernel
        self.params = {
            "weight": kaiming_uniform(rng, (c_out, c_in, kernel), fan_in, slope),
            "bias": np.zeros(c_out),
        }

    def forward(self, x, train=True):
        y, cols = conv1d_forward(x, self.params["weight"], self.params["bias"])
        self._cache = (x.shape, cols)
        return y

    def backward(self, dy):
        shape, cols = self._need_cache()
        dx, self.grads["weight"], self.grads["bias"] = conv1d_backward(dy, shape, self.params["weight"], cols)
        return dx


class MaxPool1d(Layer):
    def __init__(self, width):
        super().__init__()
        if width < 1:
            raise ConfigError("pool width must be >= 1")
        self.width = width

    def forward(self, x, train=True):
        y, idx = maxpool1d_forward(x, self.width)
        self._cache = (x.shape, idx)
        return y

    def backward(self, dy):
        shape, idx = self._need_cache()
        return maxpool1d_backward(dy, shape, idx, self.width)


class LayerNorm(Layer):
    """Layer normalization; ``affine=False`` fixes gain 1 and bias 0."""

    def __init__(self, channels, affine=True):
        super().__init__()
        self.affine = affine
        self._gain, self._bias = np.ones(channels), np.zeros(channels)
        if affine:
            self.params = {"gain": self._gain, "bias": self._bias}

    def astype(self, dtype):
        self._gain, self._bias = self._gain.astype(dtype), self._bias.astype(dtype)
        if self.affine:
            self.params = {"gain": self._gain, "bias": self._bias}
        return self

    def forward(self, x, train=True):
        y, self._cache = layer_norm_forward(x, self._gain, self._bias)
        return y

    def backward(self, dy):
        dx, dgain, dbias = layer_norm_backward(dy, self._gain, self._need_cache())
        if self.affine:
            self.grads["gain"], self.grads["bias"] = dgain, dbias
        return dx


class BatchNorm1d(Layer):
    def __init__(self, dim):
        super().__init__()
        self.params = {"gamma": np.ones(dim), "beta": np.zeros(dim)}
        self.buffers = {"running_mean": np.zeros(dim), "running_var": np.ones(dim)}

    def forward(self, x, train=True):
        y, self._cache = batch_norm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"], train,
        )
        return y

    def backward(self, dy):
        dx, self.grads["gamma"], self.grads["beta"] = batch_norm_backward(dy, self.params["gamma"], self._need_cache())
        return dx


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, train=True):
        self._cache = x
        return leaky_relu_forward(x, self.slope)

    def backward(self, dy):
        return leaky_relu_backward(dy, self._need_cache(), self.slope)


class Dense(Layer):
    def __init__(self, d_in, d_out, rng, slope=0.2):
        super().__init__()
        self.params = {
            "weight": kaiming_uniform(rng, (d_out, d_in), d_in, slope),
            "bias": np.zeros(d_out),
        }

    def forward(self, x, train=True):
        self._cache = x
        return dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, dy):
        dx, self.grads["weight"], self.grads["bias"] = dense_backward(dy, self._need_cache(), self.params["weight"])
        return dx


class Flatten(Layer):
    def forward(self, x, train=True):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


class RMSprop:
    """``v <- a v + (1 - a) g^2``; ``p <- p - lr g / (sqrt(v) + eps)``.

    Accumulators are keyed by ``(layer index, param name)`` so they can be
    saved and restored alongside the weights.
    """

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.state = {}

    def step(self, layers):
        cfg = self.cfg
        for i, layer in enumerate(layers):
            for name, p in layer.params.items():
                if name in layer.frozen:
                    continue
                g = layer.grads.get(name)
                if g is None:
                    continue
                if g.shape != p.shape:
                    raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
                if not np.all(np.isfinite(g)):
                    raise DivergenceError(f"non-finite gradient for layer {i} parameter {name!r}")
                key = (i, name)
                v = self.state.get(key)
                if v is None:
                    v = self.state[key] = np.zeros_like(p)
                v *= cfg.alpha
                v += (1.0 - cfg.alpha) * g * g
                p -= cfg.lr * g / (np.sqrt(v) + cfg.epsilon)


def rmsprop_step(param, grad, accum, cfg: OptimizerConfig):
    """Functional single-tensor update; returns ``(new_param, new_accum)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    accum = cfg.alpha * accum + (1.0 - cfg.alpha) * grad * grad
    return param - cfg.lr * grad / (np.sqrt(accum) + cfg.epsilon), accum
