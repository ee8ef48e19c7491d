"""Adaptation baselines: gradient fine-tuning instead of closed-form fits.

Three reference methods share the one-step supervised objective
mean-over-batch, sum-over-components squared error on body-frame pose
changes, and differ in what moves during adaptation:

* ``mlp``: a plain MLP delta predictor; adaptation fine-tunes only the
  output layer (40000 steps at lr 5e-3).
* ``maml``: the same MLP meta-trained with one first-order inner step so
  that a few gradient steps specialize it; adaptation updates all
  parameters (20000 steps at lr 5e-3).
* ``node``: a single integrated network field (same integrator as the
  basis ensemble); adaptation updates all parameters (500 steps at 1e-3).

Every adaptation step runs the full backward pass even when only a slice
of the parameters is updated, so per-step cost is comparable across
methods and the step budgets dominate adaptation time.
"""

from __future__ import annotations

import numpy as np

from .dataset import Transitions
from .frames import CONTROL_DIM, INPUT_DIM, POSE_DIM
from .nn import AdamState, FeedforwardNet, adam_step
from .rk4 import Rk4Config, rk4_net_backward, rk4_net_forward

MLP_ADAPT_STEPS = 40000
MLP_ADAPT_LR = 5e-3
MAML_ADAPT_STEPS = 20000
MAML_ADAPT_LR = 5e-3
NODE_ADAPT_STEPS = 500
NODE_ADAPT_LR = 1e-3


def stop_early(history, window: int = 100, rel_tol: float = 1e-5) -> bool:
    """True when loss improved less than rel_tol (relatively) over the
    last ``window`` steps."""
    if len(history) <= window:
        return False
    prev, cur = history[-window - 1], history[-1]
    return (prev - cur) < rel_tol * max(abs(prev), 1e-12)


def _fit(loss_and_grads, params, steps: int, lr: float,
         early: bool = False) -> list:
    """Full-batch Adam loop shared by every gradient-based adaptation."""
    state = AdamState.for_params(params)
    history = []
    for _ in range(steps):
        loss, grads = loss_and_grads()
        adam_step(params, grads, state, lr)
        history.append(loss)
        if early and stop_early(history):
            break
    return history


class DirectMlp:
    """One-step body-delta regressor on [input, control] concatenation."""

    name = "mlp"

    def __init__(self, net: FeedforwardNet):
        if net.layer_sizes[0] != INPUT_DIM + CONTROL_DIM or \
                net.layer_sizes[-1] != POSE_DIM:
            raise ValueError(f"bad baseline architecture {net.layer_sizes}")
        self.net = net

    @classmethod
    def create(cls, rng: np.random.Generator, hidden: int = 64,
               n_hidden: int = 4) -> "DirectMlp":
        sizes = (INPUT_DIM + CONTROL_DIM,) + (hidden,) * n_hidden + (POSE_DIM,)
        return cls(FeedforwardNet.create(sizes, rng))

    def copy(self) -> "DirectMlp":
        return DirectMlp(self.net.copy())

    def predict(self, inputs: np.ndarray, controls: np.ndarray) -> np.ndarray:
        return self.net.forward(np.concatenate([inputs, controls], axis=1))

    def loss_and_grads(self, tr: Transitions):
        x = np.concatenate([tr.inputs, tr.controls], axis=1)
        out, cache = self.net.forward_cached(x)
        resid = out - tr.targets
        loss = float(np.sum(resid * resid) / len(tr))
        grads, _ = self.net.backward(cache, 2.0 * resid / len(tr))
        return loss, grads

    def mse(self, tr: Transitions) -> float:
        resid = self.predict(tr.inputs, tr.controls) - tr.targets
        return float(np.mean(np.sum(resid * resid, axis=1)))

    def pretrain(self, tr: Transitions, steps: int, batch_size: int, lr: float,
                 rng: np.random.Generator) -> list:
        """Plain minibatch regression on pooled multi-environment data."""
        params = self.net.params()
        state = AdamState.for_params(params)
        history = []
        for _ in range(steps):
            idx = rng.integers(0, len(tr), size=batch_size)
            loss, grads = self.loss_and_grads(tr.subset(idx))
            adam_step(params, grads, state, lr)
            history.append(loss)
        return history

    def adapt(self, tr: Transitions, steps: int = MLP_ADAPT_STEPS,
              lr: float = MLP_ADAPT_LR, last_layer_only: bool = True,
              early: bool = False):
        """Fine-tuned copy; gradients are computed for every layer but by
        default only the output layer parameters receive updates."""
        model = self.copy()
        all_params = model.net.params()
        trained = all_params[-2:] if last_layer_only else all_params

        def step_fn():
            loss, grads = model.loss_and_grads(tr)
            return loss, grads[-2:] if last_layer_only else grads

        history = _fit(step_fn, trained, steps, lr, early)
        return model, history


class FoMaml(DirectMlp):
    """Meta-trained variant of :class:`DirectMlp`.

    Meta-training simulates adaptation: one inner gradient step on a
    support batch, then the query-batch gradient evaluated at the adapted
    parameters is applied to the base parameters (first-order rule).
    """

    name = "maml"

    def copy(self) -> "FoMaml":
        return FoMaml(self.net.copy())

    def meta_train(self, env_transitions: list, steps: int, batch_size: int,
                   inner_lr: float, outer_lr: float,
                   rng: np.random.Generator) -> list:
        params = self.net.params()
        state = AdamState.for_params(params)
        history = []
        for _ in range(steps):
            tr = env_transitions[int(rng.integers(len(env_transitions)))]
            sup = tr.subset(rng.integers(0, len(tr), size=batch_size))
            qry = tr.subset(rng.integers(0, len(tr), size=batch_size))
            _, g_sup = self.loss_and_grads(sup)
            inner = self.copy()
            for p, g in zip(inner.net.params(), g_sup):
                p -= inner_lr * g
            loss, g_qry = inner.loss_and_grads(qry)
            adam_step(params, g_qry, state, outer_lr)
            history.append(loss)
        return history

    def adapt(self, tr: Transitions, steps: int = MAML_ADAPT_STEPS,
              lr: float = MAML_ADAPT_LR, early: bool = False):
        model = self.copy()

        def step_fn():
            return model.loss_and_grads(tr)

        history = _fit(step_fn, model.net.params(), steps, lr, early)
        return model, history


class NodeFinetune:
    """Single integrated network field adapted by short fine-tuning."""

    name = "node"

    def __init__(self, net: FeedforwardNet, cfg: Rk4Config):
        self.net = net
        self.cfg = cfg

    @classmethod
    def create(cls, rng: np.random.Generator, hidden: int = 64,
               n_hidden: int = 4, dt: float = 0.1,
               substeps: int = 1) -> "NodeFinetune":
        sizes = (INPUT_DIM + CONTROL_DIM,) + (hidden,) * n_hidden + (POSE_DIM,)
        return cls(FeedforwardNet.create(sizes, rng), Rk4Config(dt, substeps))

    def copy(self) -> "NodeFinetune":
        return NodeFinetune(self.net.copy(), self.cfg)

    def predict(self, inputs: np.ndarray, controls: np.ndarray) -> np.ndarray:
        return rk4_net_forward(self.net, inputs, controls, self.cfg)

    def loss_and_grads(self, tr: Transitions):
        delta, tape = rk4_net_forward(self.net, tr.inputs, tr.controls,
                                      self.cfg, need_tape=True)
        resid = delta - tr.targets
        loss = float(np.sum(resid * resid) / len(tr))
        grads, _ = rk4_net_backward(self.net, tape, self.cfg,
                                    2.0 * resid / len(tr))
        return loss, grads

    def mse(self, tr: Transitions) -> float:
        resid = self.predict(tr.inputs, tr.controls) - tr.targets
        return float(np.mean(np.sum(resid * resid, axis=1)))

    def pretrain(self, tr: Transitions, steps: int, batch_size: int, lr: float,
                 rng: np.random.Generator) -> list:
        params = self.net.params()
        state = AdamState.for_params(params)
        history = []
        for _ in range(steps):
            idx = rng.integers(0, len(tr), size=batch_size)
            loss, grads = self.loss_and_grads(tr.subset(idx))
            adam_step(params, grads, state, lr)
            history.append(loss)
        return history

    def adapt(self, tr: Transitions, steps: int = NODE_ADAPT_STEPS,
              lr: float = NODE_ADAPT_LR, early: bool = False):
        model = self.copy()

        def step_fn():
            return model.loss_and_grads(tr)

        history = _fit(step_fn, model.net.params(), steps, lr, early)
        return model, history
