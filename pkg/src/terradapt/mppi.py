"""Sampling-based planner and the closed-loop navigation loop.

The planner perturbs a nominal control sequence with Gaussian noise,
rolls every candidate through a one-step dynamics model, scores the paths
(distance to goal, attitude penalty, boundary penalty), and blends the
candidates with softmax(-cost / temperature) weights into a new nominal
sequence whose first control is executed. With zero noise the nominal
comes back unchanged; with very large temperature the blend tends to the
unweighted candidate mean.

Rollout models see the same conditioned inputs the learned dynamics were
trained on. Terrain features along candidate paths come from a provider:
``field`` looks up a precomputed coarse embedding grid by nearest cell,
``hold`` freezes the features observed at the current pose for the whole
horizon.

Navigation runs the planner at the control rate against the ground-truth
environment, streaming observed transitions into a FIFO buffer that an
adaptation policy consumes either once after a warmup or periodically.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisEnsemble
from .dataset import Transitions
from .frames import assemble_inputs, body_deltas, step_poses
from .vehicle import VehicleParams, step_batch


@dataclass(frozen=True)
class MppiConfig:
    horizon: int = 20
    n_samples: int = 128
    temperature: float = 0.3
    steer_std: float = 0.35
    speed_std: float = 0.5
    goal_weight: float = 1.0
    terminal_weight: float = 20.0
    attitude_weight: float = 3.0
    boundary_weight: float = 50.0
    boundary_margin: float = 7.0
    v_max: float = 3.0

    def __post_init__(self):
        if self.horizon < 1 or self.n_samples < 1:
            raise ValueError("horizon and n_samples must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.steer_std < 0 or self.speed_std < 0:
            raise ValueError("noise scales must be nonnegative")


class FieldProvider:
    """Features along rollouts from a precomputed coarse grid."""

    def __init__(self, embed_field):
        self.field = embed_field

    def for_rollout(self, pose):
        return self.field.query


class HoldProvider:
    """Features frozen at the current pose for the whole horizon."""

    def __init__(self, embedder, env):
        self.embedder = embedder
        self.env = env

    def for_rollout(self, pose):
        e, s = self.embedder.embed(self.env, pose[0], pose[1], pose[5])

        def query(x, y):
            b = np.shape(np.asarray(x))[0] if np.ndim(x) else 1
            return np.tile(e, (b, 1)), np.tile(s, (b, 1))

        return query


class Mppi:
    """Plans one control at a time, warm-starting from the previous plan.

    ``model_fn(poses (B,6), inputs (B,22), controls (B,2)) -> deltas (B,6)``
    predicts body-frame pose changes; learned models ignore the raw poses,
    the ground-truth oracle ignores the conditioned inputs.
    """

    def __init__(self, model_fn, provider, cfg: MppiConfig, env_size: float,
                 rng: np.random.Generator):
        self.model_fn = model_fn
        self.provider = provider
        self.cfg = cfg
        self.env_size = env_size
        self.rng = rng
        self.nominal = np.zeros((cfg.horizon, 2))
        self.nominal[:, 1] = 0.5 * cfg.v_max

    def reset(self, nominal: np.ndarray | None = None) -> None:
        if nominal is None:
            self.nominal = np.zeros((self.cfg.horizon, 2))
            self.nominal[:, 1] = 0.5 * self.cfg.v_max
        else:
            self.nominal = np.array(nominal, dtype=np.float64)

    def _clip(self, seqs: np.ndarray) -> np.ndarray:
        seqs[..., 0] = np.clip(seqs[..., 0], -1.0, 1.0)
        seqs[..., 1] = np.clip(seqs[..., 1], 0.0, self.cfg.v_max)
        return seqs

    def _costs(self, pose, goal, seqs):
        cfg = self.cfg
        s = seqs.shape[0]
        poses = np.tile(pose, (s, 1))
        query = self.provider.for_rollout(pose)
        costs = np.zeros(s)
        margin = cfg.boundary_margin
        for t in range(cfg.horizon):
            ee, es = query(poses[:, 0], poses[:, 1])
            inputs = assemble_inputs(poses, np.concatenate([ee, es], axis=1))
            deltas = self.model_fn(poses, inputs, seqs[:, t])
            poses = step_poses(poses, deltas)
            d = np.hypot(poses[:, 0] - goal[0], poses[:, 1] - goal[1])
            costs += cfg.goal_weight * d
            costs += cfg.attitude_weight * (poses[:, 3] ** 2 + poses[:, 4] ** 2)
            low = np.minimum(poses[:, 0], poses[:, 1])
            high = np.maximum(poses[:, 0], poses[:, 1])
            viol = np.maximum(margin - low, 0.0) + np.maximum(
                high - (self.env_size - margin), 0.0)
            costs += cfg.boundary_weight * viol
        costs += cfg.terminal_weight * np.hypot(poses[:, 0] - goal[0],
                                                poses[:, 1] - goal[1])
        return costs

    def plan(self, pose: np.ndarray, goal: np.ndarray) -> np.ndarray:
        """One planning cycle; returns the control to execute."""
        cfg = self.cfg
        noise = self.rng.normal(size=(cfg.n_samples, cfg.horizon, 2))
        noise *= np.array([cfg.steer_std, cfg.speed_std])
        noise[0] = 0.0  # keep the unperturbed nominal among the candidates
        seqs = self._clip(self.nominal[np.newaxis] + noise)
        costs = self._costs(np.asarray(pose, dtype=np.float64),
                            np.asarray(goal, dtype=np.float64), seqs)
        w = np.exp(-(costs - costs.min()) / cfg.temperature)
        w /= w.sum()
        blended = np.einsum("s,sth->th", w, seqs)
        control = blended[0].copy()
        self.nominal[:-1] = blended[1:]
        self.nominal[-1] = blended[-1]
        return control


# ---------------------------------------------------------------------------
# rollout models
# ---------------------------------------------------------------------------

class OracleModel:
    """Ground-truth dynamics wrapped for planner rollouts."""

    def __init__(self, env, veh: VehicleParams):
        self.env = env
        self.veh = veh

    def model_fn(self, poses, inputs, controls):
        return body_deltas(poses, step_batch(self.env, poses, controls, self.veh))

    def observe(self, sample) -> None:
        pass

    def refit(self) -> None:
        pass


class AdaptiveModel:
    """Learned model plus a FIFO buffer of observed transitions.

    For the basis ensemble, ``refit`` re-solves the coefficients in closed
    form; for baseline models it re-runs their gradient adaptation from
    the pretrained parameters.
    """

    def __init__(self, predict_owner, capacity: int = 256):
        self.owner = predict_owner
        self.buffer = deque(maxlen=capacity)
        self.n_refits = 0

    def model_fn(self, poses, inputs, controls):
        return self.owner.predict(inputs, controls)

    def observe(self, sample) -> None:
        self.buffer.append(sample)

    def buffered(self) -> Transitions:
        return Transitions(np.stack([s[0] for s in self.buffer]),
                           np.stack([s[1] for s in self.buffer]),
                           np.stack([s[2] for s in self.buffer]))

    def refit(self) -> None:
        if not self.buffer:
            return
        self.owner.refit(self.buffered())
        self.n_refits += 1


class VaPredictor:
    """Coefficient-carrying view of a basis ensemble."""

    def __init__(self, ensemble: BasisEnsemble, alpha: np.ndarray,
                 lam: float = 1e-3):
        self.ensemble = ensemble
        self.alpha = np.asarray(alpha, dtype=np.float64)
        self.lam = lam

    def predict(self, inputs, controls):
        return self.ensemble.combine(self.alpha,
                                     self.ensemble.deltas(inputs, controls))

    def refit(self, tr: Transitions) -> None:
        self.alpha = self.ensemble.adapt(tr.inputs, tr.controls, tr.targets,
                                         self.lam).alpha


class BaselinePredictor:
    """Baseline model with its gradient adaptation as the refit."""

    def __init__(self, model, adapt_kw: dict | None = None):
        self.base = model
        self.current = model
        self.adapt_kw = dict(adapt_kw or {})

    def predict(self, inputs, controls):
        return self.current.predict(inputs, controls)

    def refit(self, tr: Transitions) -> None:
        self.current, _ = self.base.adapt(tr, **self.adapt_kw)


# ---------------------------------------------------------------------------
# closed-loop navigation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdaptationPolicy:
    """When to consume the transition buffer during navigation."""

    mode: str = "once"  # "once" or "periodic"
    warmup_steps: int = 20
    period_steps: int = 50  # 5 s at the 10 Hz control rate

    def __post_init__(self):
        if self.mode not in ("once", "periodic"):
            raise ValueError(f"unknown adaptation mode {self.mode!r}")
        if self.warmup_steps < 1 or self.period_steps < 1:
            raise ValueError("warmup and period must be positive")

    def due(self, step: int, n_refits: int) -> bool:
        if step < self.warmup_steps:
            return False
        if self.mode == "once":
            return n_refits == 0
        return (step - self.warmup_steps) % self.period_steps == 0


@dataclass
class NavResult:
    success: bool
    n_steps: int
    final_distance: float
    path: np.ndarray
    controls: np.ndarray
    refit_steps: list = field(default_factory=list)


def navigate(env, model, planner: Mppi, start_pose, goal_xy,
             veh: VehicleParams, max_steps: int, goal_radius: float = 1.0,
             policy: AdaptationPolicy | None = None,
             embedder=None) -> NavResult:
    """Drive the true environment with planned controls until the goal.

    ``model`` provides model_fn/observe/refit; when a policy is given,
    ``embedder`` supplies the features recorded with each transition.
    """
    if policy is not None and embedder is None:
        raise ValueError("adaptation requires an embedder for observations")
    pose = np.array(start_pose, dtype=np.float64)
    goal = np.asarray(goal_xy, dtype=np.float64)
    path = [pose.copy()]
    controls = []
    refits = []
    for step in range(max_steps):
        if np.hypot(pose[0] - goal[0], pose[1] - goal[1]) <= goal_radius:
            break
        u = planner.plan(pose, goal)
        nxt = step_batch(env, pose[np.newaxis], u[np.newaxis], veh)[0]
        if policy is not None:
            ee, es = embedder.embed(env, pose[0], pose[1], pose[5])
            x = assemble_inputs(pose[np.newaxis],
                                np.concatenate([ee, es])[np.newaxis])[0]
            model.observe((x, u.copy(), body_deltas(pose[np.newaxis],
                                                    nxt[np.newaxis])[0]))
            if policy.due(step, getattr(model, "n_refits", 0)):
                model.refit()
                refits.append(step)
        pose = nxt
        path.append(pose.copy())
        controls.append(u)
    dist = float(np.hypot(pose[0] - goal[0], pose[1] - goal[1]))
    return NavResult(success=dist <= goal_radius, n_steps=len(controls),
                     final_distance=dist, path=np.array(path),
                     controls=np.array(controls) if controls else np.empty((0, 2)),
                     refit_steps=refits)
