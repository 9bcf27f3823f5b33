"""Piecewise-linear learnable filter bank.

Each filter is described by ``S + 2`` frequency knots ``(f_k, h_k)`` on the
normalized frequency axis [0, 0.5].  The magnitude response between two
knots is the straight line joining them and zero outside the outermost
knots.  Kernels are obtained in closed form from the inverse Fourier
transform of the even two-sided extension of that response, so every tap
is an analytic function of the knot positions and heights.

Knot positions are not learned directly.  A filter owns one raw anchor
``base_raw`` and ``S + 1`` raw increments; the resolved positions are
``f_0 = |base_raw|`` and ``f_{k+1} = f_k + eps_f + |incr_raw[k]|``, clamped
so the whole chain fits in [0, 0.5].  Heights are ``h_k = 1 + dh[k]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheError, ConfigError, InvariantError, PreconditionError, ShapeError

WINDOW_CONVENTIONS = ("denominator_L_minus_1", "denominator_L")
FORMAT_VERSION = 1


def hz_to_mel(f):
    """HTK mel scale, ``2595 * log10(1 + f / 700)``."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise PreconditionError("hz_to_mel expects non-negative frequencies")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise PreconditionError("mel_to_hz expects non-negative mel values")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FilterSpec:
    """Static shape of a filter bank.

    ``dh_clamp`` optionally bounds the height offsets during training
    (``None`` leaves them free).  ``lo_hz`` is the lower edge of the Mel
    band layout used at initialization.
    """

    num_filters: int
    kernel_len: int
    num_deform_points: int
    sample_rate: float
    min_segment_width: float = 1e-4
    window_convention: str = "denominator_L_minus_1"
    lo_hz: float = 30.0
    dh_clamp: float | None = None

    def __post_init__(self):
        F, L, S = self.num_filters, self.kernel_len, self.num_deform_points
        if int(F) != F or F < 1:
            raise ConfigError(f"num_filters must be a positive integer, got {F}")
        if int(L) != L or L < 1 or L % 2 == 0:
            raise ConfigError(f"kernel_len must be a positive odd integer, got {L}")
        if int(S) != S or S < 0:
            raise ConfigError(f"num_deform_points must be >= 0, got {S}")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if not 0 < self.min_segment_width < 0.5 / (S + 1):
            raise ConfigError(
                f"min_segment_width must lie in (0, {0.5 / (S + 1)}), got {self.min_segment_width}"
            )
        if self.window_convention not in WINDOW_CONVENTIONS:
            raise ConfigError(f"unknown window convention {self.window_convention!r}")
        if not 0 <= self.lo_hz < self.sample_rate / 2:
            raise ConfigError("lo_hz must lie in [0, sample_rate / 2)")
        if self.dh_clamp is not None and self.dh_clamp <= 0:
            raise ConfigError("dh_clamp must be positive when set")

    @property
    def num_knots(self):
        return self.num_deform_points + 2

    @property
    def center(self):
        return (self.kernel_len - 1) // 2

    @property
    def params_per_filter(self):
        # base + (S + 1) increments + (S + 2) height offsets
        return 2 * self.num_deform_points + 4

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class FilterBankParams:
    """Raw trainable parameters of a bank of ``F`` filters."""

    base_raw: np.ndarray  # (F,)
    incr_raw: np.ndarray  # (F, S + 1)
    dh: np.ndarray  # (F, S + 2)

    def __post_init__(self):
        self.base_raw = np.asarray(self.base_raw, dtype=np.float64)
        self.incr_raw = np.asarray(self.incr_raw, dtype=np.float64)
        self.dh = np.asarray(self.dh, dtype=np.float64)
        F = self.base_raw.shape[0]
        if self.base_raw.ndim != 1 or self.incr_raw.ndim != 2 or self.dh.ndim != 2:
            raise ShapeError("expected base_raw (F,), incr_raw (F, S+1), dh (F, S+2)")
        if self.incr_raw.shape[0] != F or self.dh.shape[0] != F:
            raise ShapeError("parameter arrays disagree on the number of filters")
        if self.dh.shape[1] != self.incr_raw.shape[1] + 1:
            raise ShapeError("dh must have exactly one more column than incr_raw")

    @property
    def num_filters(self):
        return self.base_raw.shape[0]

    @property
    def num_deform_points(self):
        return self.incr_raw.shape[1] - 1

    def check_spec(self, spec: FilterSpec):
        if self.num_filters != spec.num_filters or self.num_deform_points != spec.num_deform_points:
            raise ShapeError(
                f"params hold F={self.num_filters}, S={self.num_deform_points}; "
                f"spec expects F={spec.num_filters}, S={spec.num_deform_points}"
            )

    def as_dict(self):
        return {"base_raw": self.base_raw, "incr_raw": self.incr_raw, "dh": self.dh}

    def copy(self):
        return FilterBankParams(self.base_raw.copy(), self.incr_raw.copy(), self.dh.copy())

    def filter(self, i):
        """Parameters of filter ``i`` as a one-filter bank."""
        return FilterBankParams(self.base_raw[i : i + 1], self.incr_raw[i : i + 1], self.dh[i : i + 1])

    def size(self):
        return self.base_raw.size + self.incr_raw.size + self.dh.size


@dataclass
class FrequencyKnots:
    """Resolved knots.  Arrays may carry leading batch (filter) dimensions."""

    freqs: np.ndarray
    heights: np.ndarray
    clamped: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.freqs.shape != self.heights.shape or self.freqs.shape[-1] < 2:
            raise ShapeError("freqs and heights must share a shape with at least two knots")

    def validate(self, eps_f=0.0):
        f = self.freqs
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(self.heights))):
            raise InvariantError("knots must be finite")
        if np.any(f[..., 0] < 0) or np.any(f[..., -1] > 0.5):
            raise InvariantError("knot frequencies must lie in [0, 0.5]")
        gaps = np.diff(f, axis=-1)
        # the resolve arithmetic may land a hair under eps_f
        if np.any(gaps <= 0) or np.any(gaps < eps_f * (1 - 1e-9)):
            raise InvariantError(f"knot frequencies must increase by at least {eps_f}")
        return self


def _upper_bounds(num_knots, eps_f):
    return 0.5 - (num_knots - 1 - np.arange(num_knots)) * eps_f


def init_filterbank(spec: FilterSpec, rng_seed: int) -> FilterBankParams:
    """Mel-spaced band layout with uniformly random height offsets.

    Filter ``i`` spans the ``i``-th of ``F`` adjacent Mel bands between
    ``spec.lo_hz`` and Nyquist; its interior knots are equally spaced in
    Mel inside the band.  Height offsets are drawn from U[-0.1, 0.1].
    """
    F, S, fs = spec.num_filters, spec.num_deform_points, spec.sample_rate
    eps = spec.min_segment_width
    edges_mel = np.linspace(hz_to_mel(spec.lo_hz), hz_to_mel(fs / 2.0), F + 1)
    knots_mel = np.stack(
        [np.linspace(edges_mel[i], edges_mel[i + 1], S + 2) for i in range(F)]
    )
    knots = mel_to_hz(knots_mel) / fs
    knots[:, -1] = np.minimum(knots[:, -1], 0.5)
    knots[-1, -1] = 0.5
    gaps = np.diff(knots, axis=1)
    if np.any(gaps < eps):
        raise ConfigError(
            f"{F} filters with {S} deformation points leave knot gaps below "
            f"min_segment_width={eps}; reduce F or S"
        )
    rng = np.random.default_rng(rng_seed)
    dh = rng.uniform(-0.1, 0.1, size=(F, S + 2))
    return FilterBankParams(knots[:, 0].copy(), gaps - eps, dh)


def _resolve(base_raw, incr_raw, eps_f):
    """Knot frequencies plus a mask of knots pinned by their upper bound."""
    base_raw = np.asarray(base_raw, dtype=np.float64)
    incr_raw = np.asarray(incr_raw, dtype=np.float64)
    K = incr_raw.shape[-1] + 1
    ub = _upper_bounds(K, eps_f)
    freqs = np.empty(base_raw.shape + (K,))
    clamped = np.zeros(freqs.shape, dtype=bool)
    cand = np.abs(base_raw)
    freqs[..., 0] = np.minimum(cand, ub[0])
    clamped[..., 0] = cand > ub[0]
    for k in range(K - 1):
        cand = freqs[..., k] + eps_f + np.abs(incr_raw[..., k])
        freqs[..., k + 1] = np.minimum(cand, ub[k + 1])
        clamped[..., k + 1] = cand > ub[k + 1]
    return freqs, clamped


def _heights(dh, dh_clamp):
    dh = np.asarray(dh, dtype=np.float64)
    if dh_clamp is None:
        return 1.0 + dh
    return 1.0 + np.clip(dh, -dh_clamp, dh_clamp)


def resolve_knots(params: FilterBankParams, spec: FilterSpec) -> FrequencyKnots:
    """Map raw parameters to valid knots; total on finite input."""
    freqs, clamped = _resolve(params.base_raw, params.incr_raw, spec.min_segment_width)
    return FrequencyKnots(freqs, _heights(params.dh, spec.dh_clamp), clamped)


def target_response(knots: FrequencyKnots, f):
    """Piecewise-linear magnitude of a single filter at normalized frequency ``f``."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0) or np.any(f > 0.5):
        raise PreconditionError("query frequencies must lie in [0, 0.5]")
    fk, hk = knots.freqs, knots.heights
    if fk.ndim != 1:
        raise ShapeError("target_response evaluates one filter at a time")
    # half-open segments [f_k, f_k+1); the last one is closed
    seg = np.clip(np.searchsorted(fk, f, side="right") - 1, 0, fk.size - 2)
    f0, f1, h0, h1 = fk[seg], fk[seg + 1], hk[seg], hk[seg + 1]
    out = (h1 - h0) / (f1 - f0) * (f - f0) + h0
    inside = (f >= fk[0]) & (f <= fk[-1])
    out = np.where(inside, out, 0.0)
    return float(out) if out.ndim == 0 else out


def _check_knots_for_synthesis(freqs):
    if np.any(np.diff(freqs, axis=-1) <= 0) or np.any(freqs < 0) or np.any(freqs > 0.5):
        raise InvariantError("knots must be strictly increasing inside [0, 0.5]")


def half_kernel(freqs, heights, L):
    """Taps ``g[c + n]`` for ``n = 0..c`` of the unwindowed kernel.

    ``freqs`` and ``heights`` have shape ``(..., K)``; the result has shape
    ``(..., c + 1)``.
    """
    c = (L - 1) // 2
    f0, f1 = freqs[..., :-1, None], freqs[..., 1:, None]
    h0, h1 = heights[..., :-1, None], heights[..., 1:, None]
    width = f1 - f0
    slope = (h1 - h0) / width
    a = 2.0 * math.pi * np.arange(1, c + 1)
    # cos(a f1) - cos(a f0) written as a product to avoid cancellation
    dcos = -2.0 * np.sin(a * (f1 + f0) / 2.0) * np.sin(a * width / 2.0)
    seg = 2.0 * (h1 * np.sin(a * f1) - h0 * np.sin(a * f0)) / a + 2.0 * slope * dcos / a**2
    out = np.empty(freqs.shape[:-1] + (c + 1,))
    out[..., 0] = np.sum(width[..., 0] * (h0[..., 0] + h1[..., 0]), axis=-1)
    out[..., 1:] = seg.sum(axis=-2)
    return out


def _half_kernel_printed(freqs, heights, L):
    # Segment formula exactly as printed (minus sign, no factor 2); debug only.
    c = (L - 1) // 2
    f0, f1 = freqs[..., :-1, None], freqs[..., 1:, None]
    h0, h1 = heights[..., :-1, None], heights[..., 1:, None]
    slope = (h1 - h0) / (f1 - f0)
    a = 2.0 * math.pi * np.arange(1, c + 1)
    seg = slope * (np.cos(a * f1) - np.cos(a * f0)) / a**2 - (h1 * np.sin(a * f1) - h0 * np.sin(a * f0)) / a
    zero = -slope[..., 0] * (f1[..., 0] ** 2 - f0[..., 0] ** 2) / 2.0 - (h1[..., 0] * f1[..., 0] - h0[..., 0] * f0[..., 0])
    out = np.empty(freqs.shape[:-1] + (c + 1,))
    out[..., 0] = zero.sum(axis=-1)
    out[..., 1:] = seg.sum(axis=-2)
    return out


def unfold_half(half):
    """Mirror a half kernel ``(..., c + 1)`` into the full ``(..., 2c + 1)`` taps."""
    return np.concatenate([half[..., :0:-1], half], axis=-1)


def fold_full(u):
    """Adjoint of :func:`unfold_half`: ``u[c] , u[c+n] + u[c-n]``."""
    c = (u.shape[-1] - 1) // 2
    out = u[..., c:].copy()
    out[..., 1:] += u[..., c - 1 :: -1]
    return out


def synthesize_kernel(knots: FrequencyKnots, L: int, printed_form: bool = False):
    """Unwindowed time-domain taps of length ``L`` for the given knots.

    ``printed_form=True`` swaps in the literal segment formula with the
    opposite sine sign and no two-sided factor.  It does not reproduce the
    piecewise-linear target and exists only for side-by-side comparison.
    """
    if L < 1 or L % 2 == 0:
        raise PreconditionError("kernel length must be a positive odd integer")
    _check_knots_for_synthesis(knots.freqs)
    fn = _half_kernel_printed if printed_form else half_kernel
    return unfold_half(fn(knots.freqs, knots.heights, L))


def sinc_bandpass_kernel(f_beg, f_end, L: int):
    """Rectangular band-pass ``2 f_end sinc(2 f_end n) - 2 f_beg sinc(2 f_beg n)``."""
    f_beg = np.asarray(f_beg, dtype=np.float64)
    f_end = np.asarray(f_end, dtype=np.float64)
    if L < 1 or L % 2 == 0:
        raise PreconditionError("kernel length must be a positive odd integer")
    if np.any(f_beg < 0) or np.any(f_end > 0.5) or np.any(f_beg >= f_end):
        raise PreconditionError("need 0 <= f_beg < f_end <= 0.5")
    c = (L - 1) // 2
    n = np.arange(c + 1)
    half = (2 * f_end[..., None] * np.sinc(2 * f_end[..., None] * n)
            - 2 * f_beg[..., None] * np.sinc(2 * f_beg[..., None] * n))
    return unfold_half(half)


def make_window(L: int, convention: str = "denominator_L_minus_1"):
    """Hamming taper indexed from 0 to ``L - 1``."""
    if L < 3 or L % 2 == 0:
        raise PreconditionError("window length must be an odd integer >= 3")
    n = np.arange(L)
    if convention == "denominator_L_minus_1":
        w = 0.54 - 0.46 * np.cos(2.0 * math.pi * n / (L - 1))
        # enforce exact symmetry; cos rounding differs between the two halves
        c = (L - 1) // 2
        w[c + 1 :] = w[c - 1 :: -1]
        return w
    if convention == "denominator_L":
        return 0.54 - 0.46 * np.cos(2.0 * math.pi * n / L)
    raise ConfigError(f"unknown window convention {convention!r}")


def apply_window(kernel, window):
    kernel = np.asarray(kernel, dtype=np.float64)
    window = np.asarray(window, dtype=np.float64)
    if kernel.shape[-1] != window.shape[-1]:
        raise ShapeError(f"kernel length {kernel.shape[-1]} != window length {window.shape[-1]}")
    return kernel * window


def frequency_response(kernel, grid):
    """Real response ``sum_n taps[c + n] cos(2 pi f n)`` on ``grid``."""
    kernel = np.asarray(kernel, dtype=np.float64)
    c = (kernel.shape[-1] - 1) // 2
    n = np.arange(-c, c + 1)
    return kernel @ np.cos(2.0 * math.pi * np.outer(n, grid))


def response_fidelity(kernel, knots: FrequencyKnots, grid_size: int | None = None):
    """Relative L2 distance between a kernel's response and the knot target."""
    kernel = np.asarray(kernel, dtype=np.float64)
    L = kernel.shape[-1]
    if grid_size is None:
        grid_size = 8 * L
    if grid_size < 4 * L:
        raise PreconditionError("grid_size must be at least 4 * L")
    grid = np.linspace(0.0, 0.5, grid_size)
    resp = frequency_response(kernel, grid)
    target = target_response(knots, grid)
    err = np.linalg.norm(resp - target)
    norm = np.linalg.norm(target)
    return float(err / norm) if norm > 0 else float(err)


def _knot_gradients(freqs, heights, u_half, L):
    """Gradients of ``sum(u_half * half_kernel)`` w.r.t. knot freqs and heights."""
    c = (L - 1) // 2
    f0, f1 = freqs[..., :-1, None], freqs[..., 1:, None]
    h0, h1 = heights[..., :-1, None], heights[..., 1:, None]
    width = f1 - f0
    slope = (h1 - h0) / width
    a = 2.0 * math.pi * np.arange(1, c + 1)
    s0, s1 = np.sin(a * f0), np.sin(a * f1)
    c0, c1 = np.cos(a * f0), np.cos(a * f1)
    dcos = -2.0 * np.sin(a * (f1 + f0) / 2.0) * np.sin(a * width / 2.0)
    u = u_half[..., None, 1:]
    u0 = u_half[..., None, 0]

    common = 2.0 * dcos / (a**2 * width)
    g_h1 = ((2.0 * s1 / a + common) * u).sum(-1)
    g_h0 = ((-2.0 * s0 / a - common) * u).sum(-1)
    g_f1 = ((2.0 * h1 * c1 - 2.0 * slope * s1 / a - slope * common) * u).sum(-1)
    g_f0 = ((-2.0 * h0 * c0 + 2.0 * slope * s0 / a + slope * common) * u).sum(-1)

    # n = 0 tap: width * (h0 + h1)
    hsum = (h0 + h1)[..., 0]
    g_f1 = g_f1 + hsum * u0
    g_f0 = g_f0 - hsum * u0
    g_h0 = g_h0 + width[..., 0] * u0
    g_h1 = g_h1 + width[..., 0] * u0

    gf = np.zeros(freqs.shape)
    gh = np.zeros(heights.shape)
    gf[..., :-1] += g_f0
    gf[..., 1:] += g_f1
    gh[..., :-1] += g_h0
    gh[..., 1:] += g_h1
    return gf, gh


def _raw_gradients(gf, gh, params: FilterBankParams, clamped, dh_clamp):
    """Chain knot gradients through the resolve map to the raw parameters."""
    K = gf.shape[-1]
    g_incr = np.zeros(params.incr_raw.shape)
    acc = np.zeros(gf.shape[:-1])
    for k in range(K - 1, 0, -1):
        acc = np.where(clamped[..., k], 0.0, acc + gf[..., k])
        g_incr[..., k - 1] = acc * np.sign(params.incr_raw[..., k - 1])
    acc = np.where(clamped[..., 0], 0.0, acc + gf[..., 0])
    g_base = acc * np.sign(params.base_raw)
    g_dh = gh
    if dh_clamp is not None:
        g_dh = np.where(np.abs(params.dh) > dh_clamp, 0.0, gh)
    return FilterBankParams(g_base, g_incr, g_dh)


def kernel_param_gradients(params: FilterBankParams, spec: FilterSpec, upstream, window=None):
    """Analytic gradient of ``sum(upstream * windowed_kernels)`` w.r.t. the raws.

    ``upstream`` has shape ``(F, L)``.  ``window`` defaults to the spec's
    Hamming convention; pass an array of ones for the unwindowed kernel.
    """
    params.check_spec(spec)
    L = spec.kernel_len
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (spec.num_filters, L):
        raise ShapeError(f"upstream must have shape {(spec.num_filters, L)}")
    if window is None:
        window = make_window(L, spec.window_convention)
    knots = resolve_knots(params, spec)
    u_half = fold_full(upstream * window)
    gf, gh = _knot_gradients(knots.freqs, knots.heights, u_half, L)
    return _raw_gradients(gf, gh, params, knots.clamped, spec.dh_clamp)


def filterbank_kernels(params: FilterBankParams, spec: FilterSpec, window=None):
    """Windowed kernels ``(F, L)`` for a whole bank."""
    if window is None:
        window = make_window(spec.kernel_len, spec.window_convention)
    knots = resolve_knots(params, spec)
    return apply_window(unfold_half(half_kernel(knots.freqs, knots.heights, spec.kernel_len)), window)


# -- convolution over frames ---------------------------------------------------


def _frames_2d(x):
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    if x.ndim != 3 or x.shape[1] != 1:
        raise ShapeError(f"expected input of shape (B, 1, T), got {x.shape}")
    return x[:, 0, :]


def correlate(x, kernels):
    """Valid cross-correlation of ``(B, 1, T)`` frames with ``(F, L)`` kernels."""
    xs = _frames_2d(x)
    F, L = kernels.shape
    if xs.shape[1] < L:
        raise ShapeError(f"input length {xs.shape[1]} shorter than kernel length {L}")
    win = sliding_window_view(xs, L, axis=1)  # (B, T', L)
    return np.matmul(win, kernels.T).transpose(0, 2, 1)


def frame_windows(x, L):
    """Contiguous ``(B, T - L + 1, L)`` copy of every length-``L`` window."""
    xs = _frames_2d(x)
    if xs.shape[1] < L:
        raise ShapeError(f"input length {xs.shape[1]} shorter than kernel length {L}")
    return np.ascontiguousarray(sliding_window_view(xs, L, axis=1))


def fold_windows(x, L):
    """Windows of ``x`` folded around their center: ``x[t+c] , x[t+c+n] + x[t+c-n]``."""
    xs = _frames_2d(x)
    if xs.shape[1] < L:
        raise ShapeError(f"input length {xs.shape[1]} shorter than kernel length {L}")
    c = (L - 1) // 2
    T = xs.shape[1]
    right = sliding_window_view(xs[:, c:], c + 1, axis=1)  # x[t+c+n]
    left = sliding_window_view(xs[:, ::-1], c + 1, axis=1)[:, T - 1 - c : c - 1 if c else None : -1]  # x[t+c-n]
    folded = np.add(right, left)
    folded[..., 0] *= 0.5  # the center tap was counted twice
    return folded


def correlate_symmetric(x, half_kernels, folded=None):
    """Same result as :func:`correlate` for even-symmetric kernels at half the multiplies."""
    L = 2 * half_kernels.shape[1] - 1
    if folded is None:
        folded = fold_windows(x, L)
    return np.matmul(folded, half_kernels.T).transpose(0, 2, 1)


def correlate_kernel_grad(x, upstream, L):
    """Gradient of the correlation output w.r.t. full kernels, shape ``(F, L)``."""
    win = frame_windows(x, L)
    F = upstream.shape[1]
    return upstream.transpose(1, 0, 2).reshape(F, -1) @ win.reshape(-1, L)


def correlate_input_grad(upstream, kernels, T):
    """Full-mode adjoint of :func:`correlate`, shape ``(B, 1, T)``."""
    B, F, Tp = upstream.shape
    L = kernels.shape[1]
    proj = np.matmul(upstream.transpose(0, 2, 1), kernels)  # (B, T', L)
    dx = np.zeros((B, T), dtype=proj.dtype)
    for l in range(L):
        dx[:, l : l + Tp] += proj[:, :, l]
    return dx[:, None, :]


@dataclass
class FilterBankCache:
    params_snapshot: FilterBankParams
    knots: FrequencyKnots
    kernels: np.ndarray
    window: np.ndarray
    inputs: np.ndarray


def filterbank_forward(x, params: FilterBankParams, spec: FilterSpec):
    """Filter every frame with every windowed kernel.

    Returns ``(output, cache)`` with output of shape ``(B, F, T - L + 1)``.
    """
    params.check_spec(spec)
    if not (np.all(np.isfinite(params.base_raw)) and np.all(np.isfinite(params.incr_raw))
            and np.all(np.isfinite(params.dh))):
        raise InvariantError("filter parameters must be finite")
    window = make_window(spec.kernel_len, spec.window_convention)
    knots = resolve_knots(params, spec)
    kernels = apply_window(unfold_half(half_kernel(knots.freqs, knots.heights, spec.kernel_len)), window)
    x = np.asarray(x, dtype=np.float64)
    y = correlate(x, kernels)
    return y, FilterBankCache(params.copy(), knots, kernels, window, x)


def filterbank_backward(upstream, cache: FilterBankCache | None, params: FilterBankParams | None = None,
                        spec: FilterSpec | None = None, need_input_grad=True):
    """Parameter and input gradients for :func:`filterbank_forward`.

    When ``params`` is given it must equal the parameters the cache was
    built from; a mismatch means the cache is stale.
    """
    if cache is None:
        raise CacheError("filterbank_backward called before filterbank_forward")
    snap = cache.params_snapshot
    if params is not None and not all(
        np.array_equal(a, b) for a, b in zip(snap.as_dict().values(), params.as_dict().values())
    ):
        raise CacheError("filter parameters changed since the forward pass")
    upstream = np.asarray(upstream, dtype=np.float64)
    L = cache.kernels.shape[1]
    if upstream.shape != (cache.inputs.shape[0], cache.kernels.shape[0], cache.inputs.shape[2] - L + 1):
        raise ShapeError(f"upstream shape {upstream.shape} does not match the forward output")
    gk = correlate_kernel_grad(cache.inputs, upstream, L)
    u_half = fold_full(gk * cache.window)
    gf, gh = _knot_gradients(cache.knots.freqs, cache.knots.heights, u_half, L)
    dh_clamp = spec.dh_clamp if spec is not None else None
    grads = _raw_gradients(gf, gh, snap, cache.knots.clamped, dh_clamp)
    dx = correlate_input_grad(upstream, cache.kernels, cache.inputs.shape[2]) if need_input_grad else None
    return grads, dx


# -- serialization -------------------------------------------------------------


def _fmt(x):
    return float(format(float(x), ".17g"))


def filterbank_to_document(params: FilterBankParams, spec: FilterSpec) -> str:
    """Versioned JSON text: spec fields then per-filter raws at 17 significant digits."""
    params.check_spec(spec)
    doc = {
        "format": "pfnet-filterbank",
        "version": FORMAT_VERSION,
        "spec": spec.to_dict(),
        "filters": [
            {
                "base_raw": _fmt(params.base_raw[i]),
                "incr_raw": [_fmt(v) for v in params.incr_raw[i]],
                "dh": [_fmt(v) for v in params.dh[i]],
            }
            for i in range(params.num_filters)
        ],
    }
    return json.dumps(doc, indent=1)


def filterbank_from_document(text: str):
    doc = json.loads(text)
    if doc.get("format") != "pfnet-filterbank":
        raise ConfigError("not a pfnet filter bank document")
    if doc.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported filter bank document version {doc.get('version')}")
    spec = FilterSpec(**doc["spec"])
    filt = doc["filters"]
    params = FilterBankParams(
        np.array([f["base_raw"] for f in filt]),
        np.array([f["incr_raw"] for f in filt]).reshape(len(filt), -1),
        np.array([f["dh"] for f in filt]).reshape(len(filt), -1),
    )
    params.check_spec(spec)
    return params, spec
