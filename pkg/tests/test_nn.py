import math

import numpy as np
import pytest

from terradapt import nn

import reference


def test_hidden_width_scaling():
    assert nn.hidden_width(1) == 64
    assert nn.hidden_width(4) == 128
    assert nn.hidden_width(24) == int(64 * math.sqrt(24))


def test_forward_matches_manual_chain():
    w0 = np.array([[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]])
    b0 = np.array([0.1, -0.1])
    w1 = np.array([[2.0], [-1.0]])
    b1 = np.array([0.5])
    net = nn.FeedforwardNet([3, 2, 1], [w0, w1], [b0, b1])
    x = np.array([[1.0, 2.0, -1.0]])
    h = np.maximum(x @ w0 + b0, 0.0)
    want = h @ w1 + b1  # last layer stays linear
    assert np.allclose(net.forward(x), want)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = nn.FeedforwardNet.create([5, 7, 6, 4], rng)
    x = rng.standard_normal((3, 5))
    up = rng.standard_normal((3, 4))

    out, cache = net.forward_cached(x)
    grads, g_in = net.backward(cache, up)

    def loss_wrt_input(xv):
        return float(np.sum(up * net.forward(xv)))

    assert reference.rel_err(g_in, reference.numeric_grad(loss_wrt_input, x)) < 1e-7

    params = net.params()
    for idx in range(len(params)):
        def loss_wrt_param(p, idx=idx):
            saved = params[idx].copy()
            params[idx][...] = p
            val = float(np.sum(up * net.forward(x)))
            params[idx][...] = saved
            return val

        num = reference.numeric_grad(loss_wrt_param, params[idx].copy())
        assert reference.rel_err(grads[idx], num) < 1e-7


def test_create_is_seeded_and_bounded():
    a = nn.FeedforwardNet.create([4, 8, 2], np.random.default_rng(7))
    b = nn.FeedforwardNet.create([4, 8, 2], np.random.default_rng(7))
    for pa, pb in zip(a.params(), b.params()):
        assert np.array_equal(pa, pb)
    w0 = a.params()[0]
    assert np.max(np.abs(w0)) <= math.sqrt(6.0 / 4)
    assert np.all(a.params()[1] == 0.0)  # biases start at zero


def test_adam_step_single_update_oracle():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, 0.25])
    state = nn.AdamState.for_params([p])
    nn.adam_step([p], [g.copy()], state, lr=0.01)
    # closed form at t=1: m_hat = g, v_hat = g^2
    want = np.array([1.0, -2.0]) - 0.01 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p, want)
    assert state.t == 1


def test_adam_rejects_non_finite_gradients():
    p = np.zeros(3)
    state = nn.AdamState.for_params([p])
    with pytest.raises(FloatingPointError, match="0"):
        nn.adam_step([p], [np.array([1.0, np.nan, 0.0])], state, lr=0.1)


def test_cosine_schedule_endpoints_and_midpoint():
    s = nn.CosineSchedule(lr_start=1e-3, lr_end=1e-5, total_steps=1000)
    assert s.lr_at(0) == pytest.approx(1e-3)
    assert s.lr_at(1000) == pytest.approx(1e-5)
    assert s.lr_at(500) == pytest.approx(0.5 * (1e-3 + 1e-5))
    assert s.lr_at(5000) == pytest.approx(1e-5)  # clamped past the end


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    net = nn.FeedforwardNet.create([6, 5, 4], rng)
    path = tmp_path / "net.npz"
    nn.save_net(path, net)
    back = nn.load_net(path)
    assert back.layer_sizes == net.layer_sizes
    for pa, pb in zip(net.params(), back.params()):
        assert np.array_equal(pa, pb)
    x = rng.standard_normal((2, 6))
    assert np.array_equal(net.forward(x), back.forward(x))


def test_relu_subgradient_at_zero_is_zero():
    w0 = np.array([[1.0]])
    b0 = np.array([0.0])
    w1 = np.array([[1.0]])
    b1 = np.array([0.0])
    net = nn.FeedforwardNet([1, 1, 1], [w0, w1], [b0, b1])
    out, cache = net.forward_cached(np.array([[0.0]]))
    grads, g_in = net.backward(cache, np.array([[1.0]]))
    assert g_in[0, 0] == 0.0
