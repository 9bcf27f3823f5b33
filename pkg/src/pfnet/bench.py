"""Throughput of the symmetric filter-bank path against a naive one.

The symmetric path synthesizes only taps ``0..c`` and folds each input
window around its center, so the filtering matmul has ``c + 1`` columns
instead of ``L``.  The naive path evaluates all ``L`` taps and filters
contiguous full-length windows.  Both produce the same output.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import filters as flt
from .filters import FilterSpec
from .frontends import PFNetFrontEnd

BENCH_SPEC = FilterSpec(num_filters=80, kernel_len=251, num_deform_points=5, sample_rate=8000)
BENCH_BATCH = 32
BENCH_FRAME = 800  # 100 ms at 8 kHz


def naive_kernels(params, spec: FilterSpec, window):
    """Evaluate every tap ``n = -c..c`` directly, no mirroring."""
    knots = flt.resolve_knots(params, spec)
    c = spec.center
    f0, f1 = knots.freqs[:, :-1, None], knots.freqs[:, 1:, None]
    h0, h1 = knots.heights[:, :-1, None], knots.heights[:, 1:, None]
    width = f1 - f0
    slope = (h1 - h0) / width
    n = np.arange(-c, c + 1, dtype=np.float64)
    n[c] = 1.0  # placeholder, overwritten below
    a = 2.0 * math.pi * n
    seg = (2.0 * (h1 * np.sin(a * f1) - h0 * np.sin(a * f0)) / a
           + 2.0 * slope * (np.cos(a * f1) - np.cos(a * f0)) / a**2)
    taps = seg.sum(axis=1)
    taps[:, c] = np.sum(width[..., 0] * (h0[..., 0] + h1[..., 0]), axis=-1)
    return taps * window


def naive_forward(x, params, spec, window):
    kernels = naive_kernels(params, spec, window).astype(x.dtype, copy=False)
    win = flt.frame_windows(x, spec.kernel_len)
    return np.matmul(win, kernels.T).transpose(0, 2, 1)


def symmetric_forward(x, params, spec, window):
    knots = flt.resolve_knots(params, spec)
    half = flt.half_kernel(knots.freqs, knots.heights, spec.kernel_len) * window[spec.center:]
    return flt.correlate_symmetric(x, half.astype(x.dtype, copy=False))


@dataclass
class BenchResult:
    num_filters: int
    kernel_len: int
    batch: int
    frame_len: int
    dtype: str
    repeats: int
    synth_naive_per_s: float
    synth_symmetric_per_s: float
    naive_frames_per_s: float
    symmetric_frames_per_s: float
    backward_frames_per_s: float
    max_abs_diff: float

    @property
    def speedup(self):
        return self.symmetric_frames_per_s / self.naive_frames_per_s

    def lines(self):
        return [
            f"filter bank F={self.num_filters} L={self.kernel_len}, batch {self.batch} x {self.frame_len} "
            f"samples, {self.dtype}, best of {self.repeats}",
            f"kernel synthesis   naive {self.synth_naive_per_s:10.1f} banks/s   "
            f"symmetric {self.synth_symmetric_per_s:10.1f} banks/s",
            f"forward            naive {self.naive_frames_per_s:10.1f} frames/s  "
            f"symmetric {self.symmetric_frames_per_s:10.1f} frames/s",
            f"forward+backward   symmetric {self.backward_frames_per_s:10.1f} frames/s",
            f"max |naive - symmetric| = {self.max_abs_diff:.3e}",
            f"speedup (symmetric / naive forward) = {self.speedup:.2f}x",
        ]

    def to_dict(self):
        return {**asdict(self), "speedup": self.speedup}


def _best(fns, repeats):
    """Best wall time of each callable, alternating them so machine noise hits all alike."""
    for fn in fns:
        fn()  # warm-up
    best = [math.inf] * len(fns)
    for _ in range(repeats):
        for i, fn in enumerate(fns):
            t = time.perf_counter()
            fn()
            best[i] = min(best[i], time.perf_counter() - t)
    return best


def run_bench(spec: FilterSpec = BENCH_SPEC, batch=BENCH_BATCH, frame_len=BENCH_FRAME, repeats=15, seed=0,
              dtype="float32") -> BenchResult:
    rng = np.random.default_rng(seed)
    params = flt.init_filterbank(spec, seed)
    window = flt.make_window(spec.kernel_len, spec.window_convention)
    x = rng.standard_normal((batch, 1, frame_len)).astype(dtype)
    knots = flt.resolve_knots(params, spec)

    t_syn_naive, t_syn_sym = _best([lambda: naive_kernels(params, spec, window),
                                    lambda: flt.half_kernel(knots.freqs, knots.heights, spec.kernel_len)], repeats)
    t_naive, t_sym = _best([lambda: naive_forward(x, params, spec, window),
                            lambda: symmetric_forward(x, params, spec, window)], repeats)

    fe = PFNetFrontEnd(spec, params.copy())
    fe.need_input_grad = False
    dy = rng.standard_normal((batch, spec.num_filters, frame_len - spec.kernel_len + 1)).astype(dtype)

    def fwd_bwd():
        fe.forward(x)
        fe.backward(dy)

    (t_fb,) = _best([fwd_bwd], repeats)
    diff = np.abs(naive_forward(x.astype(np.float64), params, spec, window)
                  - symmetric_forward(x.astype(np.float64), params, spec, window)).max()
    return BenchResult(spec.num_filters, spec.kernel_len, batch, frame_len, str(np.dtype(dtype)), repeats,
                       1.0 / t_syn_naive, 1.0 / t_syn_sym, batch / t_naive, batch / t_sym, batch / t_fb,
                       float(diff))


__all__ = ["BENCH_SPEC", "BenchResult", "naive_forward", "naive_kernels", "run_bench", "symmetric_forward"]
