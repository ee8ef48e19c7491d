"""SE(3) pose representation and gravity-aligned body-frame sample encoding.

States are six numbers (x, y, z, roll, pitch, yaw). Training samples live
in a gravity-aligned body frame: position and yaw are zeroed, roll/pitch
keep their world values, and the 6-DoF target is the pose change with the
planar part rotated by -yaw of the earlier pose. Angles are always wrapped
to (-pi, pi], with the tie at -pi mapping to +pi.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

INPUT_DIM = 22
EMBED_DIM = 8
ELEV_SLICE = slice(6, 14)
SEM_SLICE = slice(14, 22)
POSE_DIM = 6
CONTROL_DIM = 2
ANGLE_SLOTS = (3, 4, 5)  # roll, pitch, yaw positions in a 6-vector


class Frame(enum.Enum):
    WORLD = "world"
    BODY = "body"


def wrap_angle(a: float) -> float:
    """Wrap a scalar angle to (-pi, pi]."""
    w = math.atan2(math.sin(a), math.cos(a))
    return math.pi if w == -math.pi else w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Wrap an array of angles to (-pi, pi]."""
    w = np.arctan2(np.sin(a), np.cos(a))
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class PoseState:
    """6-DoF vehicle pose. Angles in radians, wrapped to (-pi, pi]."""

    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float
    frame: Frame = Frame.WORLD

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite pose components: {vals}")
        object.__setattr__(self, "roll", wrap_angle(self.roll))
        object.__setattr__(self, "pitch", wrap_angle(self.pitch))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))
        if self.frame is Frame.BODY and (self.x or self.y or self.z or self.yaw):
            raise ValueError("body-frame pose must have zero position and yaw")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    @classmethod
    def from_array(cls, v, frame: Frame = Frame.WORLD) -> "PoseState":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2], v[3], v[4], v[5], frame)


@dataclass(frozen=True)
class Control:
    """Steering in [-1, 1] (dimensionless) and speed in [0, v_max] m/s."""

    steer: float
    speed: float
    V_MAX = 3.0

    def __post_init__(self):
        if not (math.isfinite(self.steer) and math.isfinite(self.speed)):
            raise ValueError("non-finite control")
        if not -1.0 <= self.steer <= 1.0:
            raise ValueError(f"steer {self.steer} outside [-1, 1]")
        if not 0.0 <= self.speed <= self.V_MAX:
            raise ValueError(f"speed {self.speed} outside [0, {self.V_MAX}]")

    def as_array(self) -> np.ndarray:
        return np.array([self.steer, self.speed])


def _require_world(pose: PoseState, name: str):
    if pose.frame is not Frame.WORLD:
        raise ValueError(f"{name} must be in the world frame")


def to_body_frame(prev: PoseState, nxt: PoseState) -> np.ndarray:
    """6-vector pose change of ``nxt`` relative to ``prev`` in the
    gravity-aligned body frame of ``prev``.

    The planar displacement rotates by -yaw_prev about the gravity axis;
    dz passes through; angle deltas are computed on the circle.
    """
    _require_world(prev, "prev")
    _require_world(nxt, "next")
    c, s = math.cos(prev.yaw), math.sin(prev.yaw)
    dxw, dyw = nxt.x - prev.x, nxt.y - prev.y
    return np.array([
        c * dxw + s * dyw,
        -s * dxw + c * dyw,
        nxt.z - prev.z,
        wrap_angle(nxt.roll - prev.roll),
        wrap_angle(nxt.pitch - prev.pitch),
        wrap_angle(nxt.yaw - prev.yaw),
    ])


def from_body_frame(prev: PoseState, delta: np.ndarray) -> PoseState:
    """Apply a gravity-aligned body-frame delta to a world pose (inverse
    of :func:`to_body_frame`)."""
    _require_world(prev, "prev")
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (6,):
        raise ValueError(f"delta must be a 6-vector, got shape {delta.shape}")
    if not np.all(np.isfinite(delta)):
        raise ValueError("non-finite delta")
    c, s = math.cos(prev.yaw), math.sin(prev.yaw)
    return PoseState(
        prev.x + c * delta[0] - s * delta[1],
        prev.y + s * delta[0] + c * delta[1],
        prev.z + delta[2],
        wrap_angle(prev.roll + delta[3]),
        wrap_angle(prev.pitch + delta[4]),
        wrap_angle(prev.yaw + delta[5]),
    )


def body_deltas(prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """Batched :func:`to_body_frame` on (B, 6) arrays of world poses."""
    prev = np.asarray(prev, dtype=float)
    nxt = np.asarray(nxt, dtype=float)
    c = np.cos(prev[:, 5])
    s = np.sin(prev[:, 5])
    dxw = nxt[:, 0] - prev[:, 0]
    dyw = nxt[:, 1] - prev[:, 1]
    out = np.empty_like(prev)
    out[:, 0] = c * dxw + s * dyw
    out[:, 1] = -s * dxw + c * dyw
    out[:, 2] = nxt[:, 2] - prev[:, 2]
    out[:, 3:] = wrap_angles(nxt[:, 3:] - prev[:, 3:])
    return out


def step_poses(poses: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Batched :func:`from_body_frame` on (B, 6) arrays of world poses."""
    c = np.cos(poses[:, 5])
    s = np.sin(poses[:, 5])
    out = np.empty_like(poses)
    out[:, 0] = poses[:, 0] + c * deltas[:, 0] - s * deltas[:, 1]
    out[:, 1] = poses[:, 1] + s * deltas[:, 0] + c * deltas[:, 1]
    out[:, 2] = poses[:, 2] + deltas[:, 2]
    out[:, 3:] = wrap_angles(poses[:, 3:] + deltas[:, 3:])
    return out


def pose_error(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Componentwise pose residual with the angle slots wrapped to (-pi, pi]."""
    err = np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)
    err = np.array(err, copy=True)
    err[..., 3:] = wrap_angles(err[..., 3:])
    return err


def assemble_input(pose: PoseState, e_elev: np.ndarray, e_sem: np.ndarray) -> np.ndarray:
    """Build the 22-d model input: [0, 0, 0, roll, pitch, 0, e_elev, e_sem]."""
    _require_world(pose, "pose")
    e_elev = np.asarray(e_elev, dtype=float)
    e_sem = np.asarray(e_sem, dtype=float)
    if e_elev.shape != (EMBED_DIM,) or e_sem.shape != (EMBED_DIM,):
        raise ValueError(
            f"embeddings must be {EMBED_DIM}-vectors, got {e_elev.shape} and {e_sem.shape}")
    if not (np.all(np.isfinite(e_elev)) and np.all(np.isfinite(e_sem))):
        raise ValueError("non-finite embedding")
    out = np.zeros(INPUT_DIM)
    out[3] = pose.roll
    out[4] = pose.pitch
    out[ELEV_SLICE] = e_elev
    out[SEM_SLICE] = e_sem
    return out


def assemble_inputs(poses: np.ndarray, embeds: np.ndarray) -> np.ndarray:
    """Batched input assembly: (B, 6) world poses + (B, 16) embeddings -> (B, 22)."""
    b = poses.shape[0]
    out = np.zeros((b, INPUT_DIM))
    out[:, 3] = poses[:, 3]
    out[:, 4] = poses[:, 4]
    out[:, 6:] = embeds
    return out


@dataclass(frozen=True)
class ConditionedSample:
    """One transition: 22-d conditioned input, 2-d control, 6-d body-frame target."""

    input: np.ndarray
    control: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        inp = np.asarray(self.input, dtype=float)
        ctl = np.asarray(self.control, dtype=float)
        tgt = np.asarray(self.target, dtype=float)
        if inp.shape != (INPUT_DIM,) or ctl.shape != (CONTROL_DIM,) or tgt.shape != (POSE_DIM,):
            raise ValueError("bad sample shapes "
                             f"{inp.shape}/{ctl.shape}/{tgt.shape}")
        if not (np.all(np.isfinite(inp)) and np.all(np.isfinite(ctl))
                and np.all(np.isfinite(tgt))):
            raise ValueError("non-finite sample")
        if np.any(inp[[0, 1, 2, 5]] != 0.0):
            raise ValueError("input slots 0, 1, 2, 5 must be zero")
        if abs(tgt[5]) > math.pi:
            raise ValueError("target yaw delta must be wrapped to (-pi, pi]")
        object.__setattr__(self, "input", inp)
        object.__setattr__(self, "control", ctl)
        object.__setattr__(self, "target", tgt)


def make_sample(prev: PoseState, nxt: PoseState, control: Control,
                e_elev: np.ndarray, e_sem: np.ndarray) -> ConditionedSample:
    """Encode a world-frame transition as a ConditionedSample."""
    return ConditionedSample(
        input=assemble_input(prev, e_elev, e_sem),
        control=control.as_array(),
        target=to_body_frame(prev, nxt),
    )
