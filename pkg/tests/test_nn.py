import math

import numpy as np
import pytest

from pfnet import nn
from pfnet.errors import ConfigError, DataError, DivergenceError, ShapeError
from pfnet.gradcheck import central_difference, group_error, maxpool_mask


def test_conv_examples():
    x = np.array([[[1.0, 2.0, 3.0]]])
    y, _ = nn.conv1d_forward(x, np.array([[[1.0, 1.0]]]), np.zeros(1))
    assert np.array_equal(y, [[[3.0, 5.0]]])
    y, _ = nn.conv1d_forward(x, np.ones((1, 1, 1)), np.zeros(1))
    assert np.array_equal(y, x)
    y, _ = nn.conv1d_forward(x, np.zeros((1, 1, 2)), np.array([0.7]))
    assert np.array_equal(y, [[[0.7, 0.7]]])


def test_conv_matches_bruteforce_and_fd():
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((2, 3, 9)), rng.standard_normal((4, 3, 3)), rng.standard_normal(4)
    y, cols = nn.conv1d_forward(x, w, b)
    ref = np.array([[[b[o] + np.sum(w[o] * x[n, :, t:t + 3]) for t in range(7)] for o in range(4)] for n in range(2)])
    np.testing.assert_allclose(y, ref, atol=1e-12)
    u = rng.standard_normal(y.shape)
    dx, dw, db = nn.conv1d_backward(u, x.shape, w, cols)
    loss = lambda: float(np.sum(u * nn.conv1d_forward(x, w, b)[0]))  # noqa: E731
    assert group_error(dx, central_difference(loss, x)) < 1e-6
    assert group_error(dw, central_difference(loss, w)) < 1e-6
    assert group_error(db, central_difference(loss, b)) < 1e-6


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        nn.conv1d_forward(np.zeros((1, 2, 5)), np.zeros((1, 3, 2)), np.zeros(1))
    with pytest.raises(ShapeError):
        nn.conv1d_forward(np.zeros((1, 1, 2)), np.zeros((1, 1, 3)), np.zeros(1))


def test_maxpool_examples():
    y, idx = nn.maxpool1d_forward(np.array([[[1.0, 3, 2, 6, 5, 4]]]), 3)
    assert np.array_equal(y, [[[3.0, 6.0]]])
    x = np.full((1, 1, 7), 2.5)
    y, idx = nn.maxpool1d_forward(x, 3)
    assert np.array_equal(y, [[[2.5, 2.5]]])
    dx = nn.maxpool1d_backward(np.array([[[1.0, 2.0]]]), x.shape, idx, 3)
    assert np.array_equal(dx, [[[1.0, 0, 0, 2.0, 0, 0, 0]]])
    with pytest.raises(ConfigError):
        nn.maxpool1d_forward(x, 0)
    with pytest.raises(ShapeError):
        nn.maxpool1d_forward(x, 8)


def test_maxpool_fd_away_from_ties():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 10))
    y, idx = nn.maxpool1d_forward(x, 3)
    u = rng.standard_normal(y.shape)
    dx = nn.maxpool1d_backward(u, x.shape, idx, 3)
    mask = maxpool_mask(x, 3, 1e-5)
    num = central_difference(lambda: float(np.sum(u * nn.maxpool1d_forward(x, 3)[0])), x, mask)
    assert group_error(dx[mask], num[mask]) < 1e-6


@pytest.mark.parametrize("shape", [(4, 7), (3, 5, 6)])
def test_layer_norm_statistics(shape):
    rng = np.random.default_rng(2)
    x = rng.standard_normal(shape) * 3 + 5
    C = shape[1]
    y, _ = nn.layer_norm_forward(x, np.ones(C), np.zeros(C))
    axes = tuple(range(1, len(shape)))
    assert np.all(np.abs(y.mean(axis=axes)) < 1e-6)
    assert np.all(np.abs(y.var(axis=axes) - 1) < 1e-4)


def test_layer_norm_constant_and_degenerate():
    y, _ = nn.layer_norm_forward(np.full((2, 3, 4), 7.0), np.ones(3), np.zeros(3))
    assert not y.any()
    with pytest.raises(ConfigError):
        nn.layer_norm_forward(np.ones((2, 1)), np.ones(1), np.zeros(1))


def test_layer_norm_fd():
    rng = np.random.default_rng(3)
    x, g, b = rng.standard_normal((2, 3, 5)), rng.standard_normal(3), rng.standard_normal(3)
    y, cache = nn.layer_norm_forward(x, g, b)
    u = rng.standard_normal(y.shape)
    dx, dg, db = nn.layer_norm_backward(u, g, cache)
    loss = lambda: float(np.sum(u * nn.layer_norm_forward(x, g, b)[0]))  # noqa: E731
    for a, p in ((dx, x), (dg, g), (db, b)):
        assert group_error(a, central_difference(loss, p)) < 1e-5


def test_batch_norm_train_and_eval():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((8, 5)) * 2 + 1
    rm, rv = np.zeros(5), np.ones(5)
    y, _ = nn.batch_norm_forward(x, np.ones(5), np.zeros(5), rm, rv, True)
    assert np.all(np.abs(y.mean(axis=0)) < 1e-6)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=0, ddof=1))
    m, v, gam, bet = rng.standard_normal(5), rng.uniform(0.5, 2, 5), rng.standard_normal(5), rng.standard_normal(5)
    y, _ = nn.batch_norm_forward(x, gam, bet, m.copy(), v.copy(), False)
    np.testing.assert_allclose(y, (x - m) / np.sqrt(v + 1e-5) * gam + bet, atol=1e-12)
    with pytest.raises(ConfigError):
        nn.batch_norm_forward(x[:1], gam, bet, m, v, True)


def test_batch_norm_fd():
    rng = np.random.default_rng(5)
    x, g, b = rng.standard_normal((6, 4)), rng.standard_normal(4), rng.standard_normal(4)
    y, cache = nn.batch_norm_forward(x, g, b, np.zeros(4), np.ones(4), True)
    u = rng.standard_normal(y.shape)
    dx, dg, db = nn.batch_norm_backward(u, g, cache)
    loss = lambda: float(np.sum(u * nn.batch_norm_forward(x, g, b, np.zeros(4), np.ones(4), True)[0]))  # noqa: E731
    for a, p in ((dx, x), (dg, g), (db, b)):
        assert group_error(a, central_difference(loss, p)) < 1e-4


def test_leaky_relu_examples():
    assert nn.leaky_relu_forward(np.array(2.0), 0.2) == 2.0
    assert nn.leaky_relu_forward(np.array(-1.0), 0.2) == pytest.approx(-0.2)
    g = nn.leaky_relu_backward(np.ones(2), np.array([-1.0, 1.0]), 0.2)
    assert np.array_equal(g, [0.2, 1.0])


def test_dense_examples():
    x = np.array([[1.0, 2.0]])
    assert np.array_equal(nn.dense_forward(x, np.eye(2), np.zeros(2)), x)
    w = np.array([[1.0, 1.0], [0.0, 1.0]])
    assert np.array_equal(nn.dense_forward(x, w, np.zeros(2)), [[3.0, 2.0]])
    assert np.array_equal(nn.dense_forward(np.zeros((3, 2)), w, np.array([1.0, -1.0])), [[1.0, -1.0]] * 3)
    with pytest.raises(ShapeError):
        nn.dense_forward(np.zeros((1, 3)), w, np.zeros(2))


def test_softmax_ce_examples():
    loss, grad, post = nn.softmax_cross_entropy(np.zeros((1, 10)), [3])
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    assert loss == pytest.approx(2.302585, abs=1e-6)
    logits = np.zeros((1, 4))
    logits[0, 2] = 1000.0
    loss, _, post = nn.softmax_cross_entropy(logits, [2])
    assert loss < 1e-9 and np.all(np.isfinite(post))
    with pytest.raises(DataError):
        nn.softmax_cross_entropy(np.zeros((2, 3)), [0, 3])


def test_softmax_ce_gradient_and_rows():
    rng = np.random.default_rng(6)
    logits, labels = rng.standard_normal((5, 4)) * 4, rng.integers(0, 4, 5)
    loss, grad, post = nn.softmax_cross_entropy(logits, labels)
    assert np.all(np.abs(post.sum(axis=1) - 1) <= 1e-12)
    onehot = np.eye(4)[labels]
    np.testing.assert_allclose(grad, (post - onehot) / 5, atol=1e-15)
    num = central_difference(lambda: nn.softmax_cross_entropy(logits, labels)[0], logits)
    assert group_error(grad, num) < 1e-6


def test_rmsprop_examples():
    cfg = nn.OptimizerConfig(lr=1e-3, alpha=0.95, epsilon=1e-7)
    p, v = nn.rmsprop_step(np.array([0.0]), np.array([1.0]), np.zeros(1), cfg)
    assert p[0] == pytest.approx(-0.001 / (math.sqrt(0.05) + 1e-7), abs=1e-12)
    assert p[0] == pytest.approx(-0.0044721, abs=1e-7)
    assert v[0] == pytest.approx(0.05)
    p, _ = nn.rmsprop_step(np.array([1.5]), np.array([0.0]), np.zeros(1), cfg)
    assert p[0] == 1.5
    a, _ = nn.rmsprop_step(np.zeros(3), np.array([1.0, -2.0, 3.0]), np.zeros(3), cfg)
    b, _ = nn.rmsprop_step(np.zeros(3), 50 * np.array([1.0, -2.0, 3.0]), np.zeros(3), cfg)
    np.testing.assert_allclose(a, b, rtol=1e-5)
    with pytest.raises(DivergenceError):
        nn.rmsprop_step(np.zeros(1), np.array([np.nan]), np.zeros(1), cfg)


def test_rmsprop_layer_optimizer_matches_functional():
    rng = np.random.default_rng(7)
    layer = nn.Dense(3, 2, rng)
    w0 = layer.params["weight"].copy()
    cfg = nn.OptimizerConfig()
    opt = nn.RMSprop(cfg)
    g = rng.standard_normal(w0.shape)
    layer.grads = {"weight": g.copy(), "bias": np.zeros(2)}
    opt.step([layer])
    ref, _ = nn.rmsprop_step(w0, g, np.zeros_like(w0), cfg)
    np.testing.assert_allclose(layer.params["weight"], ref, rtol=1e-14)
    layer.grads = {"weight": np.full(w0.shape, np.nan), "bias": np.zeros(2)}
    with pytest.raises(DivergenceError):
        opt.step([layer])


def test_frozen_params_are_not_updated():
    rng = np.random.default_rng(8)
    layer = nn.Dense(3, 2, rng)
    layer.frozen = {"weight"}
    w0 = layer.params["weight"].copy()
    layer.grads = {"weight": np.ones_like(w0), "bias": np.ones(2)}
    nn.RMSprop(nn.OptimizerConfig()).step([layer])
    assert np.array_equal(layer.params["weight"], w0)


@pytest.mark.parametrize("kw", [dict(lr=0), dict(alpha=1.0), dict(epsilon=0), dict(batch_size=0)])
def test_optimizer_config_validation(kw):
    with pytest.raises(ConfigError):
        nn.OptimizerConfig(**kw)


def test_head_config_validation():
    with pytest.raises(ConfigError):
        nn.HeadConfig(num_classes=1)
    with pytest.raises(ConfigError):
        nn.HeadConfig(conv_channels=0)
