import numpy as np
import pytest

from terradapt import baselines, rk4
from terradapt.dataset import Transitions
from terradapt.nn import FeedforwardNet

import reference


def _random_transitions(rng, m=16):
    inputs = rng.normal(0, 0.5, (m, 22))
    inputs[:, :3] = 0.0
    inputs[:, 5] = 0.0
    controls = rng.uniform(-1, 1, (m, 2))
    targets = rng.normal(0, 0.1, (m, 6))
    return Transitions(inputs, controls, targets)


def _linear_transitions(rng, m=64):
    """Targets a fixed linear map of the features, learnable exactly."""
    tr = _random_transitions(rng, m)
    w = rng.normal(0, 0.2, (24, 6))
    x = np.concatenate([tr.inputs, tr.controls], axis=1)
    return Transitions(tr.inputs, tr.controls, x @ w)


def _tiny_mlp(seed=0):
    rng = np.random.default_rng(seed)
    return baselines.DirectMlp.create(rng, hidden=8, n_hidden=2)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    model = _tiny_mlp(seed=2)
    tr = _random_transitions(rng, m=8)
    _, grads = model.loss_and_grads(tr)
    params = model.net.params()

    def loss_at(idx, p):
        saved = params[idx].copy()
        params[idx][...] = p
        resid = model.predict(tr.inputs, tr.controls) - tr.targets
        params[idx][...] = saved
        return float(np.sum(resid * resid) / len(tr))

    for idx in range(len(params)):
        num = reference.numeric_grad(lambda p, i=idx: loss_at(i, p),
                                     params[idx].copy())
        assert reference.rel_err(grads[idx], num) < 1e-6, f"param {idx}"


def test_mlp_loss_is_mean_over_batch():
    rng = np.random.default_rng(3)
    model = _tiny_mlp(seed=4)
    tr = _random_transitions(rng, m=10)
    loss, _ = model.loss_and_grads(tr)
    resid = model.predict(tr.inputs, tr.controls) - tr.targets
    assert loss == pytest.approx(float(np.mean(np.sum(resid ** 2, axis=1))))
    assert loss == pytest.approx(model.mse(tr))


def test_mlp_adapt_touches_only_output_layer():
    rng = np.random.default_rng(5)
    base = _tiny_mlp(seed=6)
    frozen = base.copy()
    tr = _linear_transitions(rng)
    adapted, history = base.adapt(tr, steps=25, lr=1e-3)

    # the source model itself never moves
    for p0, p1 in zip(base.net.params(), frozen.net.params()):
        assert np.array_equal(p0, p1)
    # hidden layers are bit-identical, the head is not
    for i in range(base.net.n_layers - 1):
        assert np.array_equal(adapted.net.weights[i], base.net.weights[i])
        assert np.array_equal(adapted.net.biases[i], base.net.biases[i])
    assert not np.array_equal(adapted.net.weights[-1], base.net.weights[-1])
    assert history[-1] < history[0]

    full, _ = base.adapt(tr, steps=25, lr=1e-3, last_layer_only=False)
    assert not np.array_equal(full.net.weights[0], base.net.weights[0])


def test_maml_meta_step_matches_manual_first_order_rule():
    rng = np.random.default_rng(7)
    model = baselines.FoMaml(_tiny_mlp(seed=8).net)
    start = model.copy()
    tr = _random_transitions(rng, m=12)
    inner_lr, outer_lr = 0.05, 1e-2

    model.meta_train([tr], steps=1, batch_size=4, inner_lr=inner_lr,
                     outer_lr=outer_lr, rng=np.random.default_rng(9))

    # replay the same draws and apply the update by hand
    rng2 = np.random.default_rng(9)
    assert int(rng2.integers(1)) == 0
    sup = tr.subset(rng2.integers(0, len(tr), size=4))
    qry = tr.subset(rng2.integers(0, len(tr), size=4))
    _, g_sup = start.loss_and_grads(sup)
    inner = start.copy()
    for p, g in zip(inner.net.params(), g_sup):
        p -= inner_lr * g
    _, g_qry = inner.loss_and_grads(qry)
    for p0, g, p1 in zip(start.net.params(), g_qry, model.net.params()):
        want = p0 - outer_lr * g / (np.abs(g) + 1e-8)  # Adam step at t = 1
        assert np.allclose(p1, want, atol=1e-12)


def test_maml_adapt_moves_all_layers():
    rng = np.random.default_rng(10)
    base = baselines.FoMaml(_tiny_mlp(seed=11).net)
    adapted, history = base.adapt(_linear_transitions(rng), steps=25, lr=1e-3)
    assert not np.array_equal(adapted.net.weights[0], base.net.weights[0])
    assert not np.array_equal(adapted.net.weights[-1], base.net.weights[-1])
    assert history[-1] < history[0]


def test_node_predict_is_the_shared_integrator():
    rng = np.random.default_rng(12)
    model = baselines.NodeFinetune.create(np.random.default_rng(13), hidden=8,
                                          n_hidden=2)
    tr = _random_transitions(rng, m=6)
    want = rk4.rk4_net_forward(model.net, tr.inputs, tr.controls, model.cfg)
    assert np.array_equal(model.predict(tr.inputs, tr.controls), want)


def test_node_gradients_match_finite_differences():
    rng = np.random.default_rng(14)
    model = baselines.NodeFinetune.create(np.random.default_rng(15), hidden=6,
                                          n_hidden=1)
    tr = _random_transitions(rng, m=5)
    _, grads = model.loss_and_grads(tr)
    params = model.net.params()

    def loss_at(idx, p):
        saved = params[idx].copy()
        params[idx][...] = p
        resid = model.predict(tr.inputs, tr.controls) - tr.targets
        params[idx][...] = saved
        return float(np.sum(resid * resid) / len(tr))

    for idx in range(len(params)):
        num = reference.numeric_grad(lambda p, i=idx: loss_at(i, p),
                                     params[idx].copy())
        assert reference.rel_err(grads[idx], num) < 1e-6, f"param {idx}"


def test_node_adapt_reduces_loss_and_copies():
    rng = np.random.default_rng(16)
    base = baselines.NodeFinetune.create(np.random.default_rng(17), hidden=8,
                                         n_hidden=1)
    frozen = base.copy()
    adapted, history = base.adapt(_linear_transitions(rng), steps=30)
    assert history[-1] < history[0]
    for p0, p1 in zip(base.net.params(), frozen.net.params()):
        assert np.array_equal(p0, p1)
    assert not np.array_equal(adapted.net.weights[0], base.net.weights[0])


def test_stop_early_rules():
    assert not baselines.stop_early([1.0] * 50, window=100)
    assert baselines.stop_early([1.0] * 101 + [1.0], window=100)
    falling = list(np.linspace(1.0, 0.0, 200))
    assert not baselines.stop_early(falling, window=100)


def test_fit_early_exit_breaks_at_plateau():
    params = [np.zeros(1)]
    calls = []

    def fn():
        calls.append(1)
        return 1.0, [np.zeros(1)]

    history = baselines._fit(fn, params, steps=5000, lr=1e-3, early=True)
    assert len(history) == 101  # breaks as soon as the window fills flat
    assert len(calls) == len(history)


def test_pretrain_learns_pooled_data():
    rng = np.random.default_rng(18)
    model = _tiny_mlp(seed=19)
    tr = _linear_transitions(rng, m=128)
    history = model.pretrain(tr, steps=150, batch_size=32, lr=3e-3,
                             rng=np.random.default_rng(20))
    assert np.mean(history[-10:]) < 0.5 * np.mean(history[:10])


def test_architecture_validation():
    rng = np.random.default_rng(21)
    bad = FeedforwardNet.create((10, 8, 6), rng)
    with pytest.raises(ValueError):
        baselines.DirectMlp(bad)
