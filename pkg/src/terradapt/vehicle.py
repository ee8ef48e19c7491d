"""Ground-truth vehicle dynamics and the data-collection driving policy.

The oracle is a kinematic bicycle whose effective speed is modulated by
the terrain under the vehicle:

    s = clip(f_class * (1 - c_slope * max(0, uphill)), s_min, 1)

where f_class is the material speed factor (min(1, mu) for rigid classes,
a fixed per-level factor for deformable ones) and uphill is the terrain
slope along the heading. Planar motion follows the exact constant-input
arc; altitude, roll and pitch are read off the heightfield with four
probes spanning a virtual wheelbase and track, so attitude angles stay
within (-pi/2, pi/2).

Exploration drives sinusoids: normalized steering sin(2*pi*f_s*t) with
f_s ~ U(0.1, 0.5) Hz, and speed v_c + A*sin(2*pi*f_v*t) with
f_v ~ U(0.1, 2.5) Hz, the amplitude chosen so speed spans [v_min, 3] m/s
with v_min ~ U(0, 2). Near the map edge a proportional turn toward the
map center overrides steering so trajectories stay in bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frames import Control, PoseState, wrap_angles
from .terrain import Environment


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 0.5
    track: float = 0.4
    dt: float = 0.1
    max_steer: float = 0.5  # rad at |steer| = 1
    v_max: float = 3.0
    c_slope: float = 1.5
    s_min: float = 0.05

    def __post_init__(self):
        if min(self.wheelbase, self.track, self.dt, self.max_steer, self.v_max) <= 0:
            raise ValueError("vehicle geometry, dt and limits must be positive")
        if not 0.0 < self.s_min <= 1.0:
            raise ValueError(f"s_min must be in (0, 1], got {self.s_min}")


def speed_scale(env: Environment, x, y, yaw, params: VehicleParams):
    """Terrain speed factor at world position(s); vectorized."""
    class_id = env.semantic_at(x, y)
    f_class = env.speed_factor_of(class_id)
    gx, gy = env.gradient_at(x, y)
    uphill = gx * np.cos(yaw) + gy * np.sin(yaw)
    s = f_class * (1.0 - params.c_slope * np.maximum(0.0, uphill))
    return np.clip(s, params.s_min, 1.0)


def terrain_pose(env: Environment, x, y, yaw, params: VehicleParams):
    """Altitude, roll and pitch from four heightfield probes; vectorized.

    Positive pitch means nose up, positive roll means left side up.
    """
    c, s = np.cos(yaw), np.sin(yaw)
    hl, ht = 0.5 * params.wheelbase, 0.5 * params.track
    h_front = env.elevation_at(x + hl * c, y + hl * s)
    h_rear = env.elevation_at(x - hl * c, y - hl * s)
    h_left = env.elevation_at(x - ht * s, y + ht * c)
    h_right = env.elevation_at(x + ht * s, y - ht * c)
    z = env.elevation_at(x, y)
    pitch = np.arctan2(h_front - h_rear, params.wheelbase)
    roll = np.arctan2(h_left - h_right, params.track)
    return z, roll, pitch


def step_batch(env: Environment, poses: np.ndarray, controls: np.ndarray,
               params: VehicleParams) -> np.ndarray:
    """True next poses for a batch; poses (B, 6), controls (B, 2)."""
    poses = np.asarray(poses, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    x, y, yaw = poses[:, 0], poses[:, 1], poses[:, 5]
    steer = np.clip(controls[:, 0], -1.0, 1.0) * params.max_steer
    speed = np.clip(controls[:, 1], 0.0, params.v_max)

    v_eff = speed * speed_scale(env, x, y, yaw, params)
    omega = v_eff * np.tan(steer) / params.wheelbase
    dt = params.dt
    yaw_new = yaw + omega * dt

    straight = np.abs(omega) < 1e-9
    # exact arc; straight-line limit handled separately to avoid 0/0
    r = np.where(straight, 1.0, v_eff / np.where(straight, 1.0, omega))
    x_new = np.where(straight, x + v_eff * dt * np.cos(yaw),
                     x + r * (np.sin(yaw_new) - np.sin(yaw)))
    y_new = np.where(straight, y + v_eff * dt * np.sin(yaw),
                     y - r * (np.cos(yaw_new) - np.cos(yaw)))

    n = env.n
    lim = (n - 1) * env.resolution
    x_new = np.clip(x_new, 0.0, lim)
    y_new = np.clip(y_new, 0.0, lim)
    yaw_new = wrap_angles(yaw_new)
    z, roll, pitch = terrain_pose(env, x_new, y_new, yaw_new, params)
    return np.column_stack([x_new, y_new, z, roll, pitch, yaw_new])


def step_true(env: Environment, pose: PoseState, control: Control,
              params: VehicleParams) -> PoseState:
    """Single-vehicle convenience wrapper around :func:`step_batch`."""
    nxt = step_batch(env, pose.as_array()[np.newaxis, :],
                     control.as_array()[np.newaxis, :], params)[0]
    return PoseState.from_array(nxt)


def settle_pose(env: Environment, x: float, y: float, yaw: float,
                params: VehicleParams) -> PoseState:
    """Pose resting on the terrain at a planar position and heading."""
    z, roll, pitch = terrain_pose(env, np.float64(x), np.float64(y),
                                  np.float64(yaw), params)
    return PoseState(x, y, float(z), float(roll), float(pitch), yaw)


@dataclass(frozen=True)
class ExplorationPolicy:
    """Sinusoidal steering and speed profiles for data collection."""

    f_steer: float
    f_speed: float
    v_min: float
    v_max: float = 3.0

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "ExplorationPolicy":
        return cls(f_steer=float(rng.uniform(0.1, 0.5)),
                   f_speed=float(rng.uniform(0.1, 2.5)),
                   v_min=float(rng.uniform(0.0, 2.0)))

    def control_at(self, t: float) -> Control:
        amp = 0.5 * (self.v_max - self.v_min)
        center = 0.5 * (self.v_max + self.v_min)
        steer = math.sin(2.0 * math.pi * self.f_steer * t)
        speed = center + amp * math.sin(2.0 * math.pi * self.f_speed * t)
        return Control(steer, min(max(speed, 0.0), self.v_max))


def _boundary_reflex(env: Environment, pose: np.ndarray, control: Control,
                     margin: float) -> Control:
    """Replace steering with a turn toward the map center near the edge."""
    x, y, yaw = pose[0], pose[1], pose[5]
    lim = env.size_m
    if margin <= x <= lim - margin and margin <= y <= lim - margin:
        return control
    center = 0.5 * lim
    want = math.atan2(center - y, center - x)
    err = math.atan2(math.sin(want - yaw), math.cos(want - yaw))
    return Control(min(max(2.0 * err, -1.0), 1.0), control.speed)


def rollout_controls(env: Environment, start: PoseState, controls: np.ndarray,
                     params: VehicleParams) -> np.ndarray:
    """Poses (n+1, 6) from driving a fixed control sequence open loop."""
    controls = np.asarray(controls, dtype=np.float64)
    poses = np.empty((len(controls) + 1, 6))
    poses[0] = start.as_array()
    cur = poses[0][np.newaxis, :]
    for i, u in enumerate(controls):
        cur = step_batch(env, cur, u[np.newaxis, :], params)
        poses[i + 1] = cur[0]
    return poses


def random_start(env: Environment, rng: np.random.Generator,
                 params: VehicleParams, margin: float = 8.0) -> PoseState:
    # small test maps: keep at least the central half usable
    margin = min(margin, 0.25 * env.size_m)
    lim = env.size_m - margin
    if lim <= margin:
        raise ValueError("environment too small for the requested margin")
    x = float(rng.uniform(margin, lim))
    y = float(rng.uniform(margin, lim))
    yaw = float(rng.uniform(-math.pi, math.pi))
    return settle_pose(env, x, y, yaw, params)


def explore_trajectory(env: Environment, rng: np.random.Generator, n_steps: int,
                       params: VehicleParams, margin: float = 6.0):
    """Collect one exploration run; returns (poses (n+1, 6), controls (n, 2))."""
    policy = ExplorationPolicy.sample(rng)
    start = random_start(env, rng, params, margin=max(margin, 8.0))
    margin = min(margin, 0.25 * env.size_m)
    poses = np.empty((n_steps + 1, 6))
    controls = np.empty((n_steps, 2))
    poses[0] = start.as_array()
    cur = poses[0]
    for i in range(n_steps):
        u = _boundary_reflex(env, cur, policy.control_at(i * params.dt), margin)
        controls[i] = u.as_array()
        cur = step_batch(env, cur[np.newaxis, :], controls[i][np.newaxis, :],
                         params)[0]
        poses[i + 1] = cur
    return poses, controls
