"""Finite-difference verification of every analytic gradient.

Each group compares an analytic gradient against central differences of a
scalar probe loss ``sum(probe * layer(x))``.  The error for a group is

    max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)

so coordinates whose true gradient is tiny do not turn FD round-off into
a spurious failure.  Coordinates within ``margin * step`` of a kink
(leaky ReLU at 0, max-pool ties, ``|.|`` at 0, knot clamps) are excluded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import filters as flt
from . import nn
from .errors import InvariantError
from .filters import FilterBankParams, FilterSpec
from .frontends import PFNetFrontEnd, RawFIRFrontEnd, SincNetFrontEnd
from .model import Network

STEP = 1e-6
MARGIN = 10.0
THRESHOLD = 1e-4


@dataclass
class GroupResult:
    name: str
    rel_error: float
    threshold: float
    checked: int
    excluded: int = 0
    corrupted: bool = False

    @property
    def passed(self):
        return self.rel_error < self.threshold


@dataclass
class GradReport:
    groups: list = field(default_factory=list)

    @property
    def passed(self):
        return all(g.passed for g in self.groups)

    @property
    def exit_code(self):
        return 0 if self.passed else 3

    @property
    def worst(self):
        return max(self.groups, key=lambda g: g.rel_error / g.threshold) if self.groups else None

    def lines(self):
        out = []
        for g in self.groups:
            tag = "PASS" if g.passed else "FAIL"
            note = " (analytic gradient negated on purpose)" if g.corrupted else ""
            out.append(f"{tag}  {g.name:<34} rel_err={g.rel_error:.3e}  threshold={g.threshold:.0e}  "
                       f"checked={g.checked} excluded={g.excluded}{note}")
        return out


def group_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def central_difference(loss, array, mask=None, step=STEP):
    """Numeric gradient of ``loss()`` w.r.t. ``array`` (perturbed in place)."""
    g = np.zeros(array.shape)
    flat = array.reshape(-1)
    sel = np.ones(flat.size, bool) if mask is None else np.asarray(mask).reshape(-1)
    for i in np.flatnonzero(sel):
        old = flat[i]
        flat[i] = old + step
        up = loss()
        flat[i] = old - step
        down = loss()
        flat[i] = old
        g.reshape(-1)[i] = (up - down) / (2.0 * step)
    return g


def _compare(name, analytic, numeric, mask=None, threshold=THRESHOLD, sign=1.0):
    if mask is None:
        mask = np.ones(np.shape(numeric), bool)
    a = sign * np.asarray(analytic)[mask]
    n = np.asarray(numeric)[mask]
    return GroupResult(name, group_error(a, n), threshold, int(mask.sum()), int(mask.size - mask.sum()),
                       corrupted=sign < 0)


def check_layer(name, layer, x, rng, probe="random", input_mask=None, corrupt=False, train=True,
                threshold=THRESHOLD):
    """Check ``layer``'s parameter and input gradients; returns a list of results."""
    y = layer.forward(x, train)
    dy = rng.standard_normal(y.shape) if probe == "random" else np.zeros(y.shape)

    def loss():
        return float(np.sum(dy * layer.forward(x, train)))

    layer.forward(x, train)
    dx = layer.backward(dy)
    grads = {k: v.copy() for k, v in layer.grads.items()}
    sign = -1.0 if corrupt else 1.0
    out = []
    for pname, p in layer.params.items():
        num = central_difference(loss, p)
        out.append(_compare(f"{name}.{pname}", grads[pname], num, threshold=threshold, sign=sign))
    if dx is not None:
        num = central_difference(loss, x, input_mask)
        out.append(_compare(f"{name}.input", dx, num, input_mask, threshold, sign))
    return out


# -- kink-free draws -----------------------------------------------------------------


def away_from_zero(rng, shape, margin=MARGIN * STEP):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 10 * margin, np.sign(x + 1e-300) * 10 * margin + x, x)


def maxpool_mask(x, width, margin=MARGIN * STEP):
    """Exclude pooling windows whose top two values are within ``2 * margin``."""
    B, C, T = x.shape
    n = T // width
    win = x[:, :, : n * width].reshape(B, C, n, width)
    top2 = np.sort(win, axis=-1)[..., -2:] if width > 1 else np.concatenate([win, win - 1.0], -1)
    tied = (top2[..., 1] - top2[..., 0]) < 2 * margin
    mask = np.ones_like(x, dtype=bool)
    mask[:, :, : n * width] = ~np.repeat(tied, width, axis=-1).reshape(B, C, n * width)
    return mask


def random_filterbank(rng, spec: FilterSpec, margin=MARGIN * STEP):
    """Raws with every knot at least ``margin`` from its clamp and every raw away from 0."""
    F, S = spec.num_filters, spec.num_deform_points
    eps = spec.min_segment_width
    budget = 0.45 - (S + 1) * eps
    weights = rng.dirichlet(np.ones(S + 2), size=F)
    # floor each gap at a tenth of an even share; the total stays at ``budget`` < 0.5
    parts = budget * (0.1 + 0.8 * weights) / (0.1 * (S + 2) + 0.8)
    base = parts[:, 0] * rng.choice([-1.0, 1.0], size=F)
    incr = parts[:, 1:] * rng.choice([-1.0, 1.0], size=(F, S + 1))
    dh = rng.uniform(-0.3, 0.3, size=(F, S + 2))
    params = FilterBankParams(base, incr, dh)
    knots = flt.resolve_knots(params, spec)
    if knots.clamped.any() or np.any(np.abs(params.incr_raw) <= margin) or np.any(np.abs(base) <= margin):
        raise InvariantError("random filter bank landed on a clamp or kink")
    return params


# -- groups --------------------------------------------------------------------------


def _filter_groups(rng, probe, corrupt):
    out = []
    # functional path, the smallest case: one frame, one filter, one interior knot
    spec = FilterSpec(1, 15, 1, 16000)
    params = random_filterbank(rng, spec)
    x = rng.standard_normal((1, 1, spec.kernel_len + 3))
    y, cache = flt.filterbank_forward(x, params, spec)
    dy = rng.standard_normal(y.shape) if probe == "random" else np.zeros(y.shape)
    grads, dx = flt.filterbank_backward(dy, cache, params, spec)

    def loss():
        return float(np.sum(dy * flt.filterbank_forward(x, params, spec)[0]))

    sign = -1.0 if corrupt else 1.0
    for name, p in params.as_dict().items():
        out.append(_compare(f"filterbank.{name}", grads.as_dict()[name], central_difference(loss, p),
                            threshold=1e-5, sign=sign))
    out.append(_compare("filterbank.input", dx, central_difference(loss, x), threshold=1e-5, sign=sign))

    for S in (0, 5):
        spec = FilterSpec(3, 31, S, 16000)
        fe = PFNetFrontEnd(spec, random_filterbank(rng, spec))
        x = rng.standard_normal((2, 1, spec.kernel_len + 8))
        out += check_layer(f"pfnet_front_end[S={S}]", fe, x, rng, probe, corrupt=corrupt, threshold=1e-5)
    fe = PFNetFrontEnd(FilterSpec(3, 31, 1, 16000, window_convention="denominator_L"),
                       random_filterbank(rng, FilterSpec(3, 31, 1, 16000)))
    out += check_layer("pfnet_front_end[naive path]", fe, rng.standard_normal((2, 1, 39)), rng, probe,
                       corrupt=corrupt, threshold=1e-5)
    spec = FilterSpec(3, 31, 0, 16000)
    bank = random_filterbank(rng, spec)
    fe = SincNetFrontEnd(spec, bank.base_raw, bank.incr_raw[:, 0])
    out += check_layer("sincnet_front_end", fe, rng.standard_normal((2, 1, 39)), rng, probe, corrupt=corrupt)
    fe = RawFIRFrontEnd(spec, seed=int(rng.integers(1 << 31)))
    out += check_layer("raw_fir_front_end", fe, rng.standard_normal((2, 1, 39)), rng, probe, corrupt=corrupt)
    return out


def _head_groups(rng, probe, corrupt):
    out = []
    x = rng.standard_normal((2, 3, 11))
    out += check_layer("conv1d", nn.Conv1d(3, 4, 3, rng), x, rng, probe, corrupt=corrupt)
    x = rng.standard_normal((2, 3, 10))
    out += check_layer("maxpool1d", nn.MaxPool1d(3), x, rng, probe, maxpool_mask(x, 3), corrupt=corrupt,
                       threshold=1e-6)
    ln = nn.LayerNorm(3)
    ln.params["gain"][:] = rng.uniform(0.5, 1.5, 3)
    ln.params["bias"][:] = rng.standard_normal(3)
    out += check_layer("layer_norm", ln, rng.standard_normal((2, 3, 7)), rng, probe, corrupt=corrupt,
                       threshold=1e-5)
    out += check_layer("layer_norm[non-affine]", nn.LayerNorm(1, affine=False), rng.standard_normal((2, 1, 9)),
                       rng, probe, corrupt=corrupt, threshold=1e-5)
    bn = nn.BatchNorm1d(4)
    bn.params["gamma"][:] = rng.uniform(0.5, 1.5, 4)
    bn.params["beta"][:] = rng.standard_normal(4)
    out += check_layer("batch_norm", bn, rng.standard_normal((5, 4)), rng, probe, corrupt=corrupt)
    x = away_from_zero(rng, (3, 6))
    out += check_layer("leaky_relu", nn.LeakyReLU(0.2), x, rng, probe, corrupt=corrupt, threshold=1e-6)
    out += check_layer("dense", nn.Dense(5, 4, rng), rng.standard_normal((3, 5)), rng, probe, corrupt=corrupt)
    out += check_layer("flatten", nn.Flatten(), rng.standard_normal((2, 3, 4)), rng, probe, corrupt=corrupt)

    logits = rng.standard_normal((4, 3))
    labels = rng.integers(0, 3, 4)
    _, g, _ = nn.softmax_cross_entropy(logits, labels)
    num = central_difference(lambda: nn.softmax_cross_entropy(logits, labels)[0], logits)
    if probe != "random":
        g, num = np.zeros_like(g), np.zeros_like(num)
    out.append(_compare("softmax_cross_entropy", g, num, threshold=1e-6, sign=-1.0 if corrupt else 1.0))
    return out


def toy_network(rng, seed=0):
    """Two classes; filter layer with one deformation point, one conv, one dense."""
    spec = FilterSpec(3, 21, 1, 16000)
    head = nn.HeadConfig(conv_layers=1, conv_channels=3, conv_kernel=3, pool_width=2, dense_layers=0,
                         dense_width=4, num_classes=2)
    fe = PFNetFrontEnd(spec, random_filterbank(rng, spec))
    return Network(fe, head, frame_len=40, seed=seed, dtype=np.float64)


def _one_sided_kink(up, mid, down, step=STEP, rtol=1e-3):
    d_plus, d_minus = (up - mid) / step, (mid - down) / step
    return abs(d_plus - d_minus) > rtol * (abs(d_plus) + abs(d_minus)) + 1e-7


def _end_to_end_groups(rng, probe, corrupt):
    net = toy_network(rng, seed=int(rng.integers(1 << 31)))
    x = rng.standard_normal((4, 1, 40))
    labels = np.array([0, 1, 0, 1])

    def loss():
        return nn.softmax_cross_entropy(net.forward(x, train=True), labels)[0]

    _, dlogits, _ = nn.softmax_cross_entropy(net.forward(x, train=True), labels)
    if probe != "random":
        dlogits = np.zeros_like(dlogits)
    net.backward(dlogits)
    sign = -1.0 if corrupt else 1.0
    out = []
    for key, layer, name, p in net.named_params():
        analytic = layer.grads[name].copy()
        num = np.zeros(p.shape)
        mask = np.ones(p.shape, bool)
        flat = p.reshape(-1)
        mid = loss()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + STEP
            up = loss()
            flat[i] = old - STEP
            down = loss()
            flat[i] = old
            num.reshape(-1)[i] = (up - down) / (2 * STEP)
            # a max-pool switch or ReLU sign flip inside the stencil makes FD meaningless there
            if _one_sided_kink(up, mid, down):
                mask.reshape(-1)[i] = False
        if probe != "random":
            num = np.zeros_like(num)
        out.append(_compare(f"toy_net.{key}", analytic, num, mask, sign=sign))
    return out


def gradient_check_suite(seed=0, probe="random", corrupt=False):
    """Run all groups in float64.  ``corrupt`` negates every analytic gradient."""
    rng = np.random.default_rng(seed)
    report = GradReport()
    for fn in (_filter_groups, _head_groups, _end_to_end_groups):
        report.groups += fn(rng, probe, corrupt)
    return report


__all__ = ["GradReport", "GroupResult", "central_difference", "check_layer", "gradient_check_suite",
           "group_error", "random_filterbank", "toy_network"]
