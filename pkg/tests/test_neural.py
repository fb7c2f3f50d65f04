import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dldnet.errors import ConfigurationError, UsageError
from dldnet.neural import (DenseLayer, OptimizerState, adam_step, backward, forward, lr_at,
                           periodic_features, sigmoid, swish)

DY = 0.4


def test_periodic_features_period():
    a = periodic_features(0.13, 0.0, DY)
    b = periodic_features(0.13, DY, DY)
    assert np.array_equal(a, b)


def test_periodic_features_quarter_and_half():
    q = periodic_features(0.0, DY / 4, DY)[0]
    h = periodic_features(0.0, DY / 2, DY)[0]
    assert q[1] == pytest.approx(1.0) and q[2] == pytest.approx(0.0, abs=1e-15)
    assert h[1] == pytest.approx(0.0, abs=1e-15) and h[2] == pytest.approx(-1.0)


def test_periodic_features_layout():
    f = periodic_features([0.1, 0.2], [0.05, 0.3], DY, harmonics=2)
    assert f.shape == (2, 5)
    assert np.array_equal(f[:, 0], [0.1, 0.2])


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-1, 1), k=st.integers(-5, 5), j=st.integers(0, 2**20))
def test_periodic_features_exact_on_dyadic_grid(x, k, j):
    # with a dyadic period, y + k*Dy is exact and so is the reduction
    Dy = 0.5
    y = j / 2**20 * Dy
    assert np.array_equal(periodic_features(x, y, Dy), periodic_features(x, y + k * Dy, Dy))


def test_swish_values():
    assert swish(0.0) == 0.0
    assert swish(50.0) == pytest.approx(50.0)
    assert swish(1.0) == pytest.approx(0.7311, abs=1e-4)
    assert np.isfinite(swish(np.array([-1000.0, 1000.0]))).all()
    assert sigmoid(np.array([-800.0]))[0] >= 0


def test_forward_identity_layer():
    layer = DenseLayer(np.eye(3), np.zeros(3), "identity")
    x = np.array([[0.3, -1.2, 4.0]])
    out, _ = forward([layer], x)
    assert np.array_equal(out, x)


def test_forward_zero_weights():
    layers = [DenseLayer(np.zeros((4, 3)), np.zeros(4), "swish"),
              DenseLayer(np.zeros((2, 4)), np.zeros(2), "tanh")]
    out, _ = forward(layers, np.ones((5, 3)))
    assert np.array_equal(out, np.zeros((5, 2)))


def test_forward_matches_hand_arithmetic():
    rng = np.random.default_rng(5)
    W1, b1 = rng.normal(size=(6, 3)), rng.normal(size=6)
    W2, b2 = rng.normal(size=(2, 6)), rng.normal(size=2)
    layers = [DenseLayer(W1, b1, "tanh"), DenseLayer(W2, b2, "swish")]
    x = rng.normal(size=(4, 3))
    out, _ = forward(layers, x)
    ref = np.empty((4, 2))
    for r in range(4):
        h = [math.tanh(sum(W1[i, k] * x[r, k] for k in range(3)) + b1[i]) for i in range(6)]
        for i in range(2):
            z = sum(W2[i, k] * h[k] for k in range(6)) + b2[i]
            ref[r, i] = z / (1 + math.exp(-z))
    assert np.allclose(out, ref, atol=1e-12, rtol=0)


def test_forward_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        forward([DenseLayer(np.zeros((2, 3)), np.zeros(2))], np.ones((1, 4)))


def test_layer_shape_validation():
    with pytest.raises(ConfigurationError):
        DenseLayer(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ConfigurationError):
        DenseLayer(np.zeros((2, 3)), np.zeros(2), "relu")


def fd_check(layers, x, feature_fn=None, h=1e-5):
    """Max relative error of backward against central differences, params and input."""
    rng = np.random.default_rng(0)
    inp = feature_fn(x) if feature_fn else x
    out, cache = forward(layers, inp)
    G = rng.normal(size=out.shape)

    def loss(z):
        return float(np.sum(G * forward(layers, z)[0]))

    grads, gin = backward(layers, cache, G)
    worst = 0.0
    for layer, (dW, db) in zip(layers, grads):
        for p, g in ((layer.weights, dW), (layer.bias, db)):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                a = loss(inp)
                p[idx] = old - h
                b = loss(inp)
                p[idx] = old
                fd = (a - b) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6))
    for idx in np.ndindex(inp.shape):
        z = inp.copy()
        z[idx] += h
        a = loss(z)
        z[idx] -= 2 * h
        b = loss(z)
        fd = (a - b) / (2 * h)
        worst = max(worst, abs(fd - gin[idx]) / max(abs(fd), abs(gin[idx]), 1e-6))
    return worst


@pytest.mark.parametrize("act", ["swish", "tanh", "identity"])
def test_gradient_check_each_activation(act):
    rng = np.random.default_rng(1)
    layers = [DenseLayer.init(3, 5, act, rng), DenseLayer.init(5, 4, act, rng),
              DenseLayer.init(4, 2, "identity", rng)]
    assert fd_check(layers, rng.normal(size=(6, 3))) <= 1e-5


def test_gradient_check_periodic_layer():
    rng = np.random.default_rng(2)
    layers = [DenseLayer.init(3, 8, "tanh", rng), DenseLayer.init(8, 8, "swish", rng),
              DenseLayer.init(8, 1, "identity", rng)]
    xy = rng.uniform(0, DY, size=(7, 2))
    assert fd_check(layers, xy, lambda a: periodic_features(a[:, 0], a[:, 1], DY)) <= 1e-5


def test_backward_zero_output_grad():
    rng = np.random.default_rng(3)
    layers = [DenseLayer.init(3, 4, "swish", rng), DenseLayer.init(4, 2, "tanh", rng)]
    _, cache = forward(layers, rng.normal(size=(5, 3)))
    grads, gin = backward(layers, cache, np.zeros((5, 2)))
    assert all(not dW.any() and not db.any() for dW, db in grads) and not gin.any()


def test_backward_linear_in_output_grad():
    rng = np.random.default_rng(4)
    layers = [DenseLayer.init(3, 4, "identity", rng), DenseLayer.init(4, 2, "identity", rng)]
    x = rng.normal(size=(5, 3))
    _, cache = forward(layers, x)
    g = rng.normal(size=(5, 2))
    g1, i1 = backward(layers, cache, g)
    g3, i3 = backward(layers, cache, 3.0 * g)
    assert np.allclose(i3, 3 * i1)
    assert all(np.allclose(a[0] * 3, b[0]) for a, b in zip(g1, g3))


def test_backward_requires_cache():
    with pytest.raises(UsageError):
        backward([DenseLayer(np.eye(2), np.zeros(2))], None, np.ones((1, 2)))


def test_adam_zero_gradients_keep_params():
    p = [np.array([1.0, -2.0]), np.array([[0.5]])]
    before = [a.copy() for a in p]
    adam_step(OptimizerState(lr=1e-3), p, [np.zeros(2), np.zeros((1, 1))])
    assert all(np.array_equal(a, b) for a, b in zip(p, before))


def test_adam_first_step():
    # bias-corrected first step is lr * g / (|g| + eps') ~ lr * sign(g)
    p = [np.zeros(3)]
    g = [np.array([0.5, -2.0, 1e-3])]
    st_ = OptimizerState(lr=1e-3)
    adam_step(st_, p, g)
    expected = -1e-3 * g[0] / (np.abs(g[0]) + 1e-8)
    assert np.allclose(p[0], expected, rtol=1e-6)
    assert st_.step == 1


def test_adam_deterministic():
    rng = np.random.default_rng(0)
    g = [rng.normal(size=(3, 2))]
    runs = []
    for _ in range(2):
        p = [np.ones((3, 2))]
        s = OptimizerState(lr=0.01)
        for _ in range(5):
            adam_step(s, p, g)
        runs.append(p[0])
    assert np.array_equal(*runs)


def test_adam_shape_mismatch():
    with pytest.raises(ConfigurationError):
        adam_step(OptimizerState(), [np.zeros(3)], [np.zeros(2)])
    with pytest.raises(ConfigurationError):
        OptimizerState(lr=0.0)


@pytest.mark.parametrize("epoch,lr", [(0, 1e-3), (49, 1e-3), (50, 5e-4), (100, 2.5e-4)])
def test_lr_schedule(epoch, lr):
    assert lr_at(epoch, 1e-3) == pytest.approx(lr)


def test_lr_negative_epoch():
    with pytest.raises(ConfigurationError):
        lr_at(-1, 1e-3)


def test_init_bounds_and_seed():
    a = DenseLayer.init(16, 8, "swish", np.random.default_rng(9))
    b = DenseLayer.init(16, 8, "swish", np.random.default_rng(9))
    assert np.array_equal(a.weights, b.weights)
    assert np.abs(a.weights).max() <= 1 / 4 and not a.bias.any()
