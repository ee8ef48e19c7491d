"""Fixed-step RK4 integration of learned pose-rate fields.

A derivative field maps a 22-d conditioned state plus a 2-d control to a
6-d pose rate. Integrating over one control interval yields the 6-d pose
change. Only the six pose slots of the state evolve during integration;
embedding slots and the control are held constant (zero-order hold).

Two entry points: :func:`rk4_step` works with any callable field and is
what the convergence checks exercise; :func:`rk4_net_forward` /
:func:`rk4_net_backward` are the differentiable pair for
:class:`~terradapt.nn.FeedforwardNet` fields, with gradients computed by
reverse traversal of the recorded stage structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import CONTROL_DIM, INPUT_DIM, POSE_DIM

_STAGE_NAMES = ("k1", "k2", "k3", "k4")


@dataclass(frozen=True)
class Rk4Config:
    dt: float = 0.1
    substeps: int = 1

    def __post_init__(self):
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")


def _lift(inputs, controls):
    inputs = np.asarray(inputs, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    squeeze = inputs.ndim == 1
    if squeeze:
        inputs = inputs[np.newaxis, :]
        controls = controls[np.newaxis, :]
    if inputs.ndim != 2 or inputs.shape[1] != INPUT_DIM:
        raise ValueError(f"inputs must be (B, {INPUT_DIM}), got {inputs.shape}")
    if controls.shape != (inputs.shape[0], CONTROL_DIM):
        raise ValueError(f"controls must be ({inputs.shape[0]}, {CONTROL_DIM}), "
                         f"got {controls.shape}")
    return inputs, controls, squeeze


def _bump(state, delta):
    out = state.copy()
    out[:, :POSE_DIM] += delta
    return out


def rk4_step(deriv, inputs, controls, cfg: Rk4Config) -> np.ndarray:
    """Accumulated 6-d pose change over one interval of length cfg.dt.

    ``deriv(states (B,22), controls (B,2)) -> rates (B,6)``. Non-finite
    stage output aborts with a diagnostic naming the offending stage.
    """
    inputs, controls, squeeze = _lift(inputs, controls)
    h = cfg.dt / cfg.substeps
    delta = np.zeros((inputs.shape[0], POSE_DIM))
    for sub in range(cfg.substeps):
        base = _bump(inputs, delta)
        k1 = _stage(deriv, base, controls, 0, sub)
        k2 = _stage(deriv, _bump(base, 0.5 * h * k1), controls, 1, sub)
        k3 = _stage(deriv, _bump(base, 0.5 * h * k2), controls, 2, sub)
        k4 = _stage(deriv, _bump(base, h * k3), controls, 3, sub)
        delta = delta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return delta[0] if squeeze else delta


def _stage(deriv, states, controls, stage_idx, substep):
    k = np.asarray(deriv(states, controls), dtype=np.float64)
    if k.shape != (states.shape[0], POSE_DIM):
        raise ValueError(f"derivative returned shape {k.shape}, "
                         f"expected ({states.shape[0]}, {POSE_DIM})")
    if not np.all(np.isfinite(k)):
        raise FloatingPointError(
            f"non-finite derivative at stage {_STAGE_NAMES[stage_idx]} "
            f"of substep {substep}")
    return k


def convergence_order(deriv, inputs, controls, cfg: Rk4Config) -> float:
    """Empirical order from halving the substep count against a fine-grid
    reference. Returns inf when both coarse solutions already match the
    reference to rounding (field integrated exactly)."""
    base = Rk4Config(cfg.dt, 1)
    ref = rk4_step(deriv, inputs, controls, Rk4Config(cfg.dt, 64))
    scale = max(1.0, float(np.max(np.abs(ref))))
    e1 = float(np.max(np.abs(rk4_step(deriv, inputs, controls, base) - ref)))
    e2 = float(np.max(np.abs(
        rk4_step(deriv, inputs, controls, Rk4Config(cfg.dt, 2)) - ref)))
    if e1 <= 1e-13 * scale and e2 <= 1e-13 * scale:
        return float("inf")
    if e2 == 0.0:
        return float("inf")
    return float(np.log2(e1 / e2))


# ---------------------------------------------------------------------------
# differentiable path for FeedforwardNet derivative fields
# ---------------------------------------------------------------------------

def _net_rate(net, states, controls, need_cache):
    x = np.concatenate([states, controls], axis=1)
    if need_cache:
        out, cache = net.forward_cached(x)
        return out, cache
    return net.forward(x), None


def rk4_net_forward(net, inputs, controls, cfg: Rk4Config, need_tape: bool = False):
    """Pose change from integrating a network field; optionally records the
    stage structure needed by :func:`rk4_net_backward`.

    Returns ``delta (B,6)`` or ``(delta, tape)`` when ``need_tape``.
    """
    inputs, controls, squeeze = _lift(inputs, controls)
    if squeeze and need_tape:
        raise ValueError("tape recording requires batched inputs")
    h = cfg.dt / cfg.substeps
    delta = np.zeros((inputs.shape[0], POSE_DIM))
    tape = [] if need_tape else None
    for _ in range(cfg.substeps):
        base = _bump(inputs, delta)
        k1, c1 = _net_rate(net, base, controls, need_tape)
        k2, c2 = _net_rate(net, _bump(base, 0.5 * h * k1), controls, need_tape)
        k3, c3 = _net_rate(net, _bump(base, 0.5 * h * k2), controls, need_tape)
        k4, c4 = _net_rate(net, _bump(base, h * k3), controls, need_tape)
        delta = delta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if need_tape:
            tape.append((c1, c2, c3, c4))
    if not np.all(np.isfinite(delta)):
        raise FloatingPointError("non-finite pose change from network field")
    delta = delta[0] if squeeze else delta
    return (delta, tape) if need_tape else delta


def rk4_net_backward(net, tape, cfg: Rk4Config, upstream: np.ndarray):
    """Gradients of sum(upstream * delta) through the recorded stages.

    Returns (param_grads, input_grads (B,24)); the last two input columns
    are the control slots.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    h = cfg.dt / len(tape)
    param_grads = None
    g_in_total = None
    g_delta = upstream.copy()
    for c1, c2, c3, c4 in reversed(tape):
        gk4 = (h / 6.0) * g_delta
        pg4, gi4 = net.backward(c4, gk4)
        gk3 = (h / 3.0) * g_delta + h * gi4[:, :POSE_DIM]
        pg3, gi3 = net.backward(c3, gk3)
        gk2 = (h / 3.0) * g_delta + 0.5 * h * gi3[:, :POSE_DIM]
        pg2, gi2 = net.backward(c2, gk2)
        gk1 = (h / 6.0) * g_delta + 0.5 * h * gi2[:, :POSE_DIM]
        pg1, gi1 = net.backward(c1, gk1)
        g_base = gi1 + gi2 + gi3 + gi4
        # delta at the start of this substep feeds both the carried sum and
        # the pose slots of every stage input
        g_delta = g_delta + g_base[:, :POSE_DIM]
        if param_grads is None:
            param_grads = [p.copy() for p in pg1]
            g_in_total = g_base.copy()
        else:
            g_in_total += g_base
            for acc, p in zip(param_grads, pg1):
                acc += p
        for pg in (pg2, pg3, pg4):
            for acc, p in zip(param_grads, pg):
                acc += p
    return param_grads, g_in_total
