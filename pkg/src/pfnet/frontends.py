"""First-layer filter banks usable as network layers.

Three interchangeable front ends share the ``Layer`` interface:

* ``PFNetFrontEnd``: piecewise-linear learnable shapes
* ``SincNetFrontEnd``: rectangular band-pass, learnable cutoffs only
* ``RawFIRFrontEnd``: free taps, one weight per tap
"""
from __future__ import annotations

import math

import numpy as np

from . import filters as flt
from .errors import ConfigError, InvariantError
from .filters import FilterBankParams, FilterSpec
from .nn import Layer, kaiming_uniform

FRONT_ENDS = ("pfnet", "sincnet", "raw_fir")


class _ParametricFrontEnd(Layer):
    """Shared forward/backward for kernels that are even-symmetric before windowing."""

    def __init__(self, spec: FilterSpec, symmetric: bool = True):
        super().__init__()
        self.spec = spec
        self.window = flt.make_window(spec.kernel_len, spec.window_convention)
        # the folded path needs the windowed kernel to be symmetric too
        self.symmetric = symmetric and spec.window_convention == "denominator_L_minus_1"
        self.need_input_grad = True

    def _knots(self):
        raise NotImplementedError

    def _half(self, knots):
        raise NotImplementedError

    def _knot_grads(self, knots, u_half):
        raise NotImplementedError

    def kernels(self):
        """Windowed kernels ``(F, L)`` for the current parameters."""
        return flt.unfold_half(self._half(self._knots())) * self.window

    def forward(self, x, train=True):
        self._check_finite()
        L, c = self.spec.kernel_len, self.spec.center
        knots = self._knots()
        half = self._half(knots)
        if self.symmetric:
            half_w = (half * self.window[c:]).astype(x.dtype, copy=False)
            folded = flt.fold_windows(x, L)
            y = flt.correlate_symmetric(x, half_w, folded)
            self._cache = (knots, half_w, folded, x.shape, None)
        else:
            kernels = (flt.unfold_half(half) * self.window).astype(x.dtype, copy=False)
            y = flt.correlate(x, kernels)
            self._cache = (knots, kernels, None, x.shape, x)
        return y

    def backward(self, dy):
        knots, kern, folded, x_shape, x = self._need_cache()
        F, L, c = self.spec.num_filters, self.spec.kernel_len, self.spec.center
        if self.symmetric:
            gk_half = dy.transpose(1, 0, 2).reshape(F, -1) @ folded.reshape(-1, c + 1)
            u_half = gk_half.astype(np.float64) * self.window[c:]
        else:
            u_half = flt.fold_full(flt.correlate_kernel_grad(x, dy, L).astype(np.float64) * self.window)
        self._set_grads(knots, u_half)
        if not self.need_input_grad:
            return None
        kernels = flt.unfold_half(kern) if self.symmetric else kern
        return flt.correlate_input_grad(dy, kernels, x_shape[2])

    def _check_finite(self):
        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise InvariantError(f"front-end parameter {name!r} is not finite")


class PFNetFrontEnd(_ParametricFrontEnd):
    def __init__(self, spec: FilterSpec, params: FilterBankParams | None = None, seed: int = 0,
                 symmetric: bool = True):
        super().__init__(spec, symmetric)
        self.bank = params if params is not None else flt.init_filterbank(spec, seed)
        self.bank.check_spec(spec)
        self.params = self.bank.as_dict()

    def _knots(self):
        return flt.resolve_knots(self.bank, self.spec)

    def _half(self, knots):
        return flt.half_kernel(knots.freqs, knots.heights, self.spec.kernel_len)

    def _set_grads(self, knots, u_half):
        gf, gh = flt._knot_gradients(knots.freqs, knots.heights, u_half, self.spec.kernel_len)
        g = flt._raw_gradients(gf, gh, self.bank, knots.clamped, self.spec.dh_clamp)
        self.grads = g.as_dict()


class SincNetFrontEnd(_ParametricFrontEnd):
    """Band-pass with learnable ``f_beg`` and ``f_end``.

    Cutoffs use the same absolute-increment map as the PF-Net knots with
    no interior points: ``f_beg = |low_raw|``, ``f_end = f_beg + eps + |band_raw|``.
    """

    def __init__(self, spec: FilterSpec, low_raw=None, band_raw=None, seed: int = 0, symmetric: bool = True):
        super().__init__(spec, symmetric)
        if low_raw is None or band_raw is None:
            init = flt.init_filterbank(
                FilterSpec(spec.num_filters, spec.kernel_len, 0, spec.sample_rate,
                           spec.min_segment_width, spec.window_convention, spec.lo_hz),
                seed,
            )
            low_raw, band_raw = init.base_raw, init.incr_raw[:, 0]
        self.params = {
            "low_raw": np.array(low_raw, dtype=np.float64),
            "band_raw": np.array(band_raw, dtype=np.float64),
        }

    def cutoffs(self):
        knots = self._knots()
        return knots.freqs[:, 0], knots.freqs[:, 1]

    def _knots(self):
        freqs, clamped = flt._resolve(self.params["low_raw"], self.params["band_raw"][:, None],
                                      self.spec.min_segment_width)
        return flt.FrequencyKnots(freqs, np.ones_like(freqs), clamped)

    def _half(self, knots):
        c = self.spec.center
        f0, f1 = knots.freqs[:, :1], knots.freqs[:, 1:]
        n = np.arange(c + 1)
        return 2 * f1 * np.sinc(2 * f1 * n) - 2 * f0 * np.sinc(2 * f0 * n)

    def _set_grads(self, knots, u_half):
        c = self.spec.center
        a = 2.0 * math.pi * np.arange(c + 1)
        f0, f1 = knots.freqs[:, :1], knots.freqs[:, 1:]
        gf = np.stack([(-2.0 * np.cos(a * f0) * u_half).sum(-1),
                       (2.0 * np.cos(a * f1) * u_half).sum(-1)], axis=-1)
        raw = FilterBankParams(self.params["low_raw"], self.params["band_raw"][:, None],
                               np.zeros_like(knots.freqs))
        g = flt._raw_gradients(gf, np.zeros_like(gf), raw, knots.clamped, None)
        self.grads = {"low_raw": g.base_raw, "band_raw": g.incr_raw[:, 0]}


class RawFIRFrontEnd(Layer):
    """Unconstrained FIR taps, initialized Kaiming-uniform over the tap fan-in."""

    def __init__(self, spec: FilterSpec, seed: int = 0, slope: float = 0.2, weight=None):
        super().__init__()
        self.spec = spec
        self.need_input_grad = True
        if weight is None:
            rng = np.random.default_rng(seed)
            weight = kaiming_uniform(rng, (spec.num_filters, spec.kernel_len), spec.kernel_len, slope)
        self.params = {"weight": np.array(weight, dtype=np.float64)}

    def kernels(self):
        return self.params["weight"]

    def forward(self, x, train=True):
        win = flt.frame_windows(x, self.spec.kernel_len)
        self._cache = (x.shape, win)
        return np.matmul(win, self.params["weight"].T.astype(win.dtype, copy=False)).transpose(0, 2, 1)

    def backward(self, dy):
        x_shape, win = self._need_cache()
        F, L = self.params["weight"].shape
        gw = dy.transpose(1, 0, 2).reshape(F, -1) @ win.reshape(-1, L)
        self.grads = {"weight": gw.astype(np.float64)}
        if not self.need_input_grad:
            return None
        return flt.correlate_input_grad(dy, self.params["weight"].astype(dy.dtype, copy=False), x_shape[2])


def make_front_end(kind: str, spec: FilterSpec, seed: int = 0, slope: float = 0.2):
    if kind == "pfnet":
        return PFNetFrontEnd(spec, seed=seed)
    if kind == "sincnet":
        return SincNetFrontEnd(spec, seed=seed)
    if kind == "raw_fir":
        return RawFIRFrontEnd(spec, seed=seed, slope=slope)
    raise ConfigError(f"unknown front end {kind!r}; expected one of {FRONT_ENDS}")
