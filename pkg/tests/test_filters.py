import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from pfnet import filters as flt
from pfnet.errors import CacheError, ConfigError, InvariantError, PreconditionError, ShapeError
from pfnet.filters import FilterBankParams, FilterSpec, FrequencyKnots
from pfnet.gradcheck import central_difference, group_error, random_filterbank


def knots(f, h):
    return FrequencyKnots(np.array(f, float), np.array(h, float))


# -- mel scale -------------------------------------------------------------------------


def test_mel_examples():
    assert flt.hz_to_mel(0) == 0
    assert flt.mel_to_hz(0) == 0
    assert flt.hz_to_mel(700) == pytest.approx(2595 * math.log10(2), abs=1e-9)
    assert flt.hz_to_mel(700) == pytest.approx(781.17, abs=0.01)
    assert flt.mel_to_hz(781.17) == pytest.approx(700, abs=0.1)
    for f in (1000.0, 4000.0):
        assert flt.mel_to_hz(flt.hz_to_mel(f)) == pytest.approx(f, rel=1e-9)


def test_mel_rejects_negative():
    with pytest.raises(PreconditionError):
        flt.hz_to_mel(-1.0)
    with pytest.raises(PreconditionError):
        flt.mel_to_hz(-1.0)


def test_mel_monotone():
    f = np.linspace(0, 8000, 1001)
    assert np.all(np.diff(flt.hz_to_mel(f)) > 0)


# -- spec / init -------------------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(kernel_len=250), dict(num_filters=0), dict(num_deform_points=-1),
                                dict(min_segment_width=0.3), dict(window_convention="nope")])
def test_filterspec_validation(kw):
    base = dict(num_filters=4, kernel_len=251, num_deform_points=1, sample_rate=16000)
    with pytest.raises(ConfigError):
        FilterSpec(**{**base, **kw})


def test_parameter_count():
    spec = FilterSpec(80, 251, 5, 16000)
    params = flt.init_filterbank(spec, 0)
    assert spec.params_per_filter == 14
    assert params.size() == 80 * 14 == 1120


def test_init_deterministic():
    spec = FilterSpec(16, 251, 3, 16000)
    a, b = flt.init_filterbank(spec, 7), flt.init_filterbank(spec, 7)
    for x, y in zip(a.as_dict().values(), b.as_dict().values()):
        assert np.array_equal(x, y)


def test_init_mel_layout_matches_oracle():
    spec = FilterSpec(80, 251, 5, 16000)
    kn = flt.resolve_knots(flt.init_filterbank(spec, 0), spec)
    mel = lambda f: 2595 * math.log10(1 + f / 700)  # noqa: E731
    imel = lambda m: 700 * (10 ** (m / 2595) - 1)  # noqa: E731
    edges = [imel(mel(30) + i * (mel(8000) - mel(30)) / 80) / 16000 for i in range(81)]
    assert kn.freqs[0, 0] == pytest.approx(30 / 16000, rel=1e-9)
    assert kn.freqs[79, -1] == 0.5
    np.testing.assert_allclose(kn.freqs[:, 0], edges[:-1], rtol=1e-9)
    np.testing.assert_allclose(kn.freqs[:-1, -1], edges[1:-1], rtol=1e-6)
    # interior knots equally spaced in mel
    m = flt.hz_to_mel(kn.freqs * 16000)
    np.testing.assert_allclose(np.diff(m, axis=1), np.diff(m, axis=1)[:, :1].repeat(6, 1), rtol=1e-4)
    assert np.all(np.abs(kn.heights - 1) <= 0.1)


def test_init_s0_gives_band_edges():
    spec = FilterSpec(10, 101, 0, 8000)
    kn = flt.resolve_knots(flt.init_filterbank(spec, 3), spec)
    assert kn.freqs.shape == (10, 2)
    np.testing.assert_allclose(kn.freqs[1:, 0], kn.freqs[:-1, 1], rtol=1e-9)


def test_init_too_dense_is_config_error():
    with pytest.raises(ConfigError):
        flt.init_filterbank(FilterSpec(400, 251, 5, 16000, min_segment_width=1e-3), 0)


# -- resolve -------------------------------------------------------------------------


def test_resolve_example():
    spec = FilterSpec(1, 11, 1, 16000)
    kn = flt.resolve_knots(FilterBankParams([0.1], [[0.02, -0.03]], [[0, 0, 0]]), spec)
    np.testing.assert_allclose(kn.freqs[0], [0.1, 0.1201, 0.1502], atol=1e-15)
    assert np.array_equal(kn.heights[0], [1, 1, 1])


def test_resolve_abs_rule():
    spec = FilterSpec(1, 11, 0, 16000)
    kn = flt.resolve_knots(FilterBankParams([-0.1], [[0.05]], [[0.0, 0.0]]), spec)
    assert kn.freqs[0, 0] == 0.1


def test_resolve_heights_exact():
    spec = FilterSpec(1, 11, 2, 16000)
    dh = np.array([[0.3, -0.7, 0.1, 2.5]])
    kn = flt.resolve_knots(FilterBankParams([0.1], [[0.01, 0.01, 0.01]], dh), spec)
    assert np.array_equal(kn.heights, 1 + dh)


def test_resolve_totality_million_raws():
    rng = np.random.default_rng(0)
    S, eps = 4, 1e-4
    N = 1_000_000 // (S + 2) + 1  # one base + S+1 increments per filter
    scale = 10.0 ** rng.uniform(-12, 3, size=(N, S + 2))
    raws = rng.standard_normal((N, S + 2)) * scale
    raws[::97] = 0.0
    raws[1::101] *= 1e300
    freqs, _ = flt._resolve(raws[:, 0], raws[:, 1:], eps)
    FrequencyKnots(freqs, np.ones_like(freqs)).validate(eps)
    assert (S + 2) * N >= 1_000_000


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=4, max_size=4),
       st.floats(1e-6, 0.1))
def test_resolve_property(raws, eps):
    freqs, _ = flt._resolve(np.array([raws[0]]), np.array([raws[1:]]), eps)
    assert np.all(np.diff(freqs) >= eps * (1 - 1e-9))
    assert freqs[0, 0] >= 0 and freqs[0, -1] <= 0.5


def test_knot_validate_rejects():
    with pytest.raises(InvariantError):
        knots([0.2, 0.1], [1, 1]).validate()
    with pytest.raises(InvariantError):
        knots([0.1, 0.6], [1, 1]).validate()


# -- target response -------------------------------------------------------------------


def test_target_response_examples():
    assert flt.target_response(knots([0.1, 0.2], [1, 1]), 0.15) == 1.0
    assert flt.target_response(knots([0.1, 0.2], [1, 1]), 0.05) == 0.0
    assert flt.target_response(knots([0.1, 0.2], [1.0, 0.5]), 0.15) == pytest.approx(0.75, abs=1e-15)


def test_target_response_at_knots():
    kn = knots([0.1, 0.15, 0.3, 0.4], [0.5, 1.2, 0.9, 0.7])
    out = flt.target_response(kn, kn.freqs)
    np.testing.assert_allclose(out, kn.heights, atol=1e-15)


def test_target_response_range_check():
    with pytest.raises(PreconditionError):
        flt.target_response(knots([0.1, 0.2], [1, 1]), 0.6)


# -- synthesis -------------------------------------------------------------------------


def test_telescoping_example():
    L = 251
    g = flt.synthesize_kernel(knots([0.1, 0.15, 0.2], [1, 1, 1]), L)
    np.testing.assert_allclose(g, flt.sinc_bandpass_kernel(0.1, 0.2, L), rtol=0, atol=1e-12)


def test_center_tap_quadrature():
    L = 251
    g = flt.synthesize_kernel(knots([0.1, 0.2], [1, 1]), L)
    val, _ = quad(lambda f: 2 * math.cos(0.0), 0.1, 0.2)
    assert g[(L - 1) // 2] == pytest.approx(val, abs=1e-12) == pytest.approx(0.2, abs=1e-12)


def test_taps_match_quadrature_oracle():
    """Every tap equals ``2 * integral of G(f) cos(2 pi f n)`` over [0, 0.5]."""
    kn = knots([0.05, 0.12, 0.2, 0.31], [0.8, 1.3, 0.6, 1.1])
    L = 41
    g = flt.synthesize_kernel(kn, L)
    c = (L - 1) // 2
    for n in range(c + 1):
        total = 0.0
        for k in range(3):
            f0, f1, h0, h1 = kn.freqs[k], kn.freqs[k + 1], kn.heights[k], kn.heights[k + 1]
            G = lambda f: h0 + (h1 - h0) * (f - f0) / (f1 - f0)  # noqa: E731
            total += quad(lambda f: 2 * G(f) * math.cos(2 * math.pi * f * n), f0, f1, epsabs=1e-14)[0]
        assert g[c + n] == pytest.approx(total, abs=1e-11)


def test_printed_form_fails_fidelity():
    kn = knots([0.1, 0.15, 0.2], [1.0, 1.2, 0.9])
    good = flt.response_fidelity(flt.synthesize_kernel(kn, 1023), kn)
    printed = flt.response_fidelity(flt.synthesize_kernel(kn, 1023, printed_form=True), kn)
    assert good < 0.05 and printed > 0.5


def test_kernel_even_symmetry():
    rng = np.random.default_rng(1)
    spec = FilterSpec(8, 251, 5, 16000)
    kn = flt.resolve_knots(random_filterbank(rng, spec), spec)
    g = flt.synthesize_kernel(kn, 251)
    assert np.array_equal(g, g[:, ::-1])


def test_synthesize_rejects_bad_knots():
    with pytest.raises(InvariantError):
        flt.synthesize_kernel(knots([0.2, 0.1], [1, 1]), 11)
    with pytest.raises(PreconditionError):
        flt.synthesize_kernel(knots([0.1, 0.2], [1, 1]), 10)


def test_sinc_examples():
    L, c = 51, 25
    g = flt.sinc_bandpass_kernel(0.0, 0.5, L)
    assert g[c] == 1.0
    assert np.max(np.abs(np.delete(g, c))) <= 1e-12
    g = flt.sinc_bandpass_kernel(0.1, 0.2, L)
    assert g[c] == pytest.approx(0.2, abs=1e-15)
    assert g[c + 1] == pytest.approx((math.sin(0.4 * math.pi) - math.sin(0.2 * math.pi)) / math.pi, abs=1e-15)
    with pytest.raises(PreconditionError):
        flt.sinc_bandpass_kernel(0.2, 0.1, L)


# -- windows ---------------------------------------------------------------------------


def test_window_examples():
    L = 251
    w = flt.make_window(L)
    assert w[0] == pytest.approx(0.08, abs=1e-15)
    assert w[(L - 1) // 2] == 1.0
    assert np.array_equal(w, w[::-1])
    w2 = flt.make_window(L, "denominator_L")
    np.testing.assert_allclose(w2, 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(L) / L), atol=1e-15)
    assert not np.array_equal(w2, w2[::-1])


def test_apply_window_examples():
    L = 251
    g = flt.synthesize_kernel(knots([0.1, 0.2], [1, 1]), L)
    assert np.array_equal(flt.apply_window(g, np.ones(L)), g)
    gw = flt.apply_window(g, flt.make_window(L))
    assert np.array_equal(gw, gw[::-1])
    oracle = np.array([g[i] * (0.54 - 0.46 * math.cos(2 * math.pi * i / (L - 1))) for i in range(L)])
    np.testing.assert_allclose(gw, oracle, rtol=0, atol=1e-15)
    with pytest.raises(ShapeError):
        flt.apply_window(g, np.ones(L - 2))


# -- fidelity --------------------------------------------------------------------------


def test_fidelity_examples():
    kn = knots([0.1, 0.2], [1, 1])
    assert flt.response_fidelity(flt.synthesize_kernel(kn, 2047), kn) < 0.05
    assert flt.response_fidelity(np.zeros(251), kn) == 1.0
    with pytest.raises(PreconditionError):
        flt.response_fidelity(np.zeros(251), kn, grid_size=100)


def test_frequency_response_oracle():
    rng = np.random.default_rng(2)
    g = rng.standard_normal(21)
    grid = np.linspace(0, 0.5, 37)
    # DTFT of a centered kernel, real part; symmetric kernels have no imaginary part
    dtft = np.array([np.sum(g * np.exp(-2j * np.pi * f * np.arange(-10, 11))) for f in grid])
    np.testing.assert_allclose(flt.frequency_response(g, grid), dtft.real, atol=1e-12)


# -- gradients -------------------------------------------------------------------------


def _kernel_loss(params, spec, u):
    return lambda: float(np.sum(u * flt.filterbank_kernels(params, spec)))


def test_kernel_grad_linearity():
    rng = np.random.default_rng(3)
    spec = FilterSpec(3, 51, 2, 16000)
    params = random_filterbank(rng, spec)
    zero = flt.kernel_param_gradients(params, spec, np.zeros((3, 51)))
    assert all(np.all(v == 0) for v in zero.as_dict().values())
    u = rng.standard_normal((3, 51))
    g1 = flt.kernel_param_gradients(params, spec, u)
    g2 = flt.kernel_param_gradients(params, spec, 2 * u)
    for a, b in zip(g1.as_dict().values(), g2.as_dict().values()):
        assert np.array_equal(2 * a, b)


def test_kernel_grad_fd_s5_l251():
    rng = np.random.default_rng(4)
    spec = FilterSpec(2, 251, 5, 16000)
    params = random_filterbank(rng, spec)
    u = rng.standard_normal((2, 251))
    g = flt.kernel_param_gradients(params, spec, u)
    loss = _kernel_loss(params, spec, u)
    for name, p in params.as_dict().items():
        assert group_error(g.as_dict()[name], central_difference(loss, p)) < 1e-5, name


@pytest.mark.parametrize("S", [0, 1, 5])
def test_kernel_grad_fd_random_draws(S):
    rng = np.random.default_rng(10 + S)
    spec = FilterSpec(1, 31, S, 16000)
    worst = 0.0
    for _ in range(100):
        params = random_filterbank(rng, spec)
        u = rng.standard_normal((1, 31))
        g = flt.kernel_param_gradients(params, spec, u)
        loss = _kernel_loss(params, spec, u)
        for name, p in params.as_dict().items():
            worst = max(worst, group_error(g.as_dict()[name], central_difference(loss, p)))
    assert worst < 1e-5


def test_clamped_knot_has_zero_subgradient():
    spec = FilterSpec(1, 31, 1, 16000)
    # base far past its bound: f_0 sits on the clamp and cannot move
    params = FilterBankParams([0.9], [[0.01, 0.02]], [[0.1, 0.0, -0.1]])
    kn = flt.resolve_knots(params, spec)
    assert kn.clamped.any()
    g = flt.kernel_param_gradients(params, spec, np.random.default_rng(0).standard_normal((1, 31)))
    assert g.base_raw[0] == 0.0


def test_dh_clamp_blocks_gradient():
    spec = FilterSpec(1, 31, 0, 16000, dh_clamp=0.5)
    params = FilterBankParams([0.1], [[0.1]], [[0.9, 0.1]])
    kn = flt.resolve_knots(params, spec)
    assert kn.heights[0, 0] == 1.5
    g = flt.kernel_param_gradients(params, spec, np.ones((1, 31)))
    assert g.dh[0, 0] == 0.0 and g.dh[0, 1] != 0.0


# -- correlation forward/backward ------------------------------------------------------


def test_forward_allpass_is_identity():
    L = 31
    spec = FilterSpec(1, L, 0, 16000)
    params = FilterBankParams([0.0], [[0.5 - 1e-4]], [[0.0, 0.0]])
    x = np.random.default_rng(5).standard_normal((2, 1, 60))
    y, _ = flt.filterbank_forward(x, params, spec)
    np.testing.assert_allclose(y[:, 0], x[:, 0, 15:45], atol=1e-9)


def test_forward_single_output_is_dot_product():
    rng = np.random.default_rng(6)
    spec = FilterSpec(2, 21, 1, 16000)
    params = random_filterbank(rng, spec)
    x = rng.standard_normal((1, 1, 21))
    y, cache = flt.filterbank_forward(x, params, spec)
    assert y.shape == (1, 2, 1)
    for i in range(2):
        assert y[0, i, 0] == pytest.approx(sum(x[0, 0, l] * cache.kernels[i, l] for l in range(21)), abs=1e-12)


def test_forward_zero_input_and_short_input():
    spec = FilterSpec(2, 21, 1, 16000)
    params = flt.init_filterbank(spec, 0)
    y, _ = flt.filterbank_forward(np.zeros((3, 1, 40)), params, spec)
    assert y.shape == (3, 2, 20) and not y.any()
    with pytest.raises(ShapeError):
        flt.filterbank_forward(np.zeros((1, 1, 20)), params, spec)


def test_backward_contracts():
    rng = np.random.default_rng(7)
    spec = FilterSpec(2, 21, 1, 16000)
    params = random_filterbank(rng, spec)
    x1 = rng.standard_normal((1, 1, 30))
    y, cache = flt.filterbank_forward(x1, params, spec)
    g0, dx0 = flt.filterbank_backward(np.zeros_like(y), cache)
    assert all(not v.any() for v in g0.as_dict().values()) and not dx0.any()
    dy = rng.standard_normal(y.shape)
    g1, _ = flt.filterbank_backward(dy, cache)
    _, cache2 = flt.filterbank_forward(np.concatenate([x1, x1]), params, spec)
    g2, _ = flt.filterbank_backward(np.concatenate([dy, dy]), cache2)
    for a, b in zip(g1.as_dict().values(), g2.as_dict().values()):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-13, atol=1e-15)
    with pytest.raises(CacheError):
        flt.filterbank_backward(dy, None)
    moved = params.copy()
    moved.dh += 0.01
    with pytest.raises(CacheError):
        flt.filterbank_backward(dy, cache, moved)


def test_symmetric_correlation_matches_direct():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((3, 1, 80))
    half = rng.standard_normal((4, 16))
    full = flt.unfold_half(half)
    np.testing.assert_allclose(flt.correlate_symmetric(x, half), flt.correlate(x, full), atol=1e-12)


def test_fold_full_is_adjoint_of_unfold():
    rng = np.random.default_rng(9)
    h, u = rng.standard_normal(6), rng.standard_normal(11)
    assert np.dot(flt.unfold_half(h), u) == pytest.approx(np.dot(h, flt.fold_full(u)), abs=1e-13)


# -- serialization ---------------------------------------------------------------------


def test_document_roundtrip_bitwise():
    rng = np.random.default_rng(11)
    spec = FilterSpec(5, 101, 3, 8000, dh_clamp=1.0)
    params = random_filterbank(rng, spec)
    params.dh[:] = rng.standard_normal(params.dh.shape) / 3
    text = flt.filterbank_to_document(params, spec)
    back, spec2 = flt.filterbank_from_document(text)
    assert spec2 == spec
    for a, b in zip(params.as_dict().values(), back.as_dict().values()):
        assert np.array_equal(a, b)
    assert flt.filterbank_to_document(back, spec2) == text


def test_document_rejects_other_formats():
    with pytest.raises(ConfigError):
        flt.filterbank_from_document('{"format": "other"}')
