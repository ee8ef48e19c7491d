"""On-disk dataset: checksummed trajectories, rasters, and a manifest.

Layout of a dataset directory:

    manifest.json                 global metadata + sha256 of every file
    env_0000/
        elevation.grid            raster with embedded sha256
        semantics.grid
        materials.json            realized per-class physics
        traj_000.traj ...         binary trajectory files

A ``.traj`` file is one JSON header line followed by fixed-size records,
each 200 bytes of little-endian float64 (timestamp, pose 6, control 2,
elevation stats 8, semantic stats 8) plus a CRC32 of those bytes. The
control stored in the final record is a zero placeholder; transitions use
the control of their source record. Readers validate every record and
report the exact record index or byte offset on corruption or truncation.

Embeddings stored in records are the raw (unstandardized) patch
statistics observed at the recorded pose; standardization moments belong
to the model checkpoint, not the dataset.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import embeddings, terrain, vehicle
from .frames import CONTROL_DIM, EMBED_DIM, POSE_DIM, assemble_inputs, body_deltas

TRAJ_MAGIC = "TDTRAJ"
GRID_MAGIC = "TDGRID"
SET_MAGIC = "TDSET"
FORMAT_VERSION = 1

RECORD_FLOATS = 1 + POSE_DIM + CONTROL_DIM + 2 * EMBED_DIM  # 25
RECORD_BYTES = 8 * RECORD_FLOATS
_CRC_STRUCT = struct.Struct("<I")


class DatasetError(Exception):
    """Corrupt, truncated, or inconsistent dataset content."""


def _dumps(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# trajectory files
# ---------------------------------------------------------------------------

def write_trajectory(path, env_id: int, times: np.ndarray, poses: np.ndarray,
                     controls: np.ndarray, e_elev: np.ndarray,
                     e_sem: np.ndarray) -> None:
    """Write n+1 records covering poses (n+1, 6) and controls (n, 2)."""
    n = len(controls)
    if poses.shape != (n + 1, POSE_DIM) or times.shape != (n + 1,):
        raise ValueError("poses must be one longer than controls")
    if e_elev.shape != (n + 1, EMBED_DIM) or e_sem.shape != (n + 1, EMBED_DIM):
        raise ValueError("need one embedding pair per pose")
    padded = np.vstack([controls, np.zeros((1, CONTROL_DIM))])
    header = {"magic": TRAJ_MAGIC, "version": FORMAT_VERSION, "env_id": env_id,
              "n_records": n + 1, "record_bytes": RECORD_BYTES, "dtype": "<f8",
              "fields": ["t", "pose", "control", "e_elev", "e_sem"]}
    with open(path, "wb") as f:
        f.write(_dumps(header))
        for i in range(n + 1):
            rec = np.concatenate([[times[i]], poses[i], padded[i],
                                  e_elev[i], e_sem[i]])
            raw = rec.astype("<f8").tobytes()
            f.write(raw)
            f.write(_CRC_STRUCT.pack(zlib.crc32(raw)))


@dataclass(frozen=True)
class Trajectory:
    env_id: int
    times: np.ndarray
    poses: np.ndarray
    controls: np.ndarray  # (n+1, 2); last row is the placeholder
    e_elev: np.ndarray
    e_sem: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


def read_trajectory(path) -> Trajectory:
    """Read and validate a full trajectory file."""
    path = Path(path)
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path.name}: unreadable header") from exc
        if header.get("magic") != TRAJ_MAGIC:
            raise DatasetError(f"{path.name}: bad magic {header.get('magic')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise DatasetError(f"{path.name}: unsupported version "
                               f"{header.get('version')}")
        n = int(header["n_records"])
        recs = np.empty((n, RECORD_FLOATS))
        for i in range(n):
            raw = f.read(RECORD_BYTES)
            crc = f.read(_CRC_STRUCT.size)
            if len(raw) < RECORD_BYTES or len(crc) < _CRC_STRUCT.size:
                raise DatasetError(
                    f"{path.name}: truncated at record {i} "
                    f"(byte {len(line) + i * (RECORD_BYTES + 4)})")
            if zlib.crc32(raw) != _CRC_STRUCT.unpack(crc)[0]:
                raise DatasetError(f"{path.name}: CRC mismatch at record {i}")
            recs[i] = np.frombuffer(raw, dtype="<f8")
        if f.read(1):
            raise DatasetError(f"{path.name}: trailing bytes after "
                               f"{n} records")
    p0 = 1 + POSE_DIM
    c0 = p0 + CONTROL_DIM
    ee0 = c0 + EMBED_DIM
    return Trajectory(env_id=int(header["env_id"]), times=recs[:, 0],
                      poses=recs[:, 1:p0], controls=recs[:, p0:c0],
                      e_elev=recs[:, c0:ee0], e_sem=recs[:, ee0:])


# ---------------------------------------------------------------------------
# raster files
# ---------------------------------------------------------------------------

_GRID_DTYPES = {"<f8": np.float64, "<i8": np.int64}


def write_grid(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    code = {"float64": "<f8", "int64": "<i8"}.get(arr.dtype.name)
    if code is None:
        raise ValueError(f"unsupported grid dtype {arr.dtype}")
    raw = arr.astype(code).tobytes()
    header = {"magic": GRID_MAGIC, "version": FORMAT_VERSION, "dtype": code,
              "shape": list(arr.shape), "sha256": sha256_bytes(raw)}
    with open(path, "wb") as f:
        f.write(_dumps(header))
        f.write(raw)


def read_grid(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        try:
            header = json.loads(f.readline())
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path.name}: unreadable header") from exc
        if header.get("magic") != GRID_MAGIC:
            raise DatasetError(f"{path.name}: bad magic {header.get('magic')!r}")
        raw = f.read()
    if sha256_bytes(raw) != header["sha256"]:
        raise DatasetError(f"{path.name}: content hash mismatch")
    dtype = _GRID_DTYPES.get(header["dtype"])
    if dtype is None:
        raise DatasetError(f"{path.name}: unknown dtype {header['dtype']!r}")
    shape = tuple(header["shape"])
    expect = int(np.prod(shape)) * 8
    if len(raw) != expect:
        raise DatasetError(f"{path.name}: payload is {len(raw)} bytes, "
                           f"expected {expect}")
    return np.frombuffer(raw, dtype=header["dtype"]).astype(dtype).reshape(shape)


# ---------------------------------------------------------------------------
# materials serialization
# ---------------------------------------------------------------------------

def materials_to_json(materials) -> list:
    out = []
    for m in materials:
        if isinstance(m, terrain.RigidMaterial):
            out.append({"kind": "rigid", "name": m.name, "mu": m.mu,
                        "restitution": m.restitution})
        else:
            out.append({"kind": "deformable", "name": m.name, "level": m.level,
                        "cohesion": m.cohesion, "stiffness": m.stiffness,
                        "hardening": m.hardening})
    return out


def materials_from_json(items) -> tuple:
    mats = []
    for it in items:
        if it["kind"] == "rigid":
            mats.append(terrain.RigidMaterial(it["name"], it["mu"],
                                              it["restitution"]))
        elif it["kind"] == "deformable":
            mats.append(terrain.DeformableMaterial(
                it["name"], it["level"], it["cohesion"], it["stiffness"],
                it["hardening"]))
        else:
            raise DatasetError(f"unknown material kind {it.get('kind')!r}")
    return tuple(mats)


# ---------------------------------------------------------------------------
# dataset build / load
# ---------------------------------------------------------------------------

def env_dir_name(env_id: int) -> str:
    return f"env_{env_id:04d}"


def build_dataset(out_dir, n_envs: int, n_traj: int, n_steps: int, seed: int,
                  terrain_kw: dict | None = None,
                  veh: vehicle.VehicleParams | None = None) -> dict:
    """Generate environments and exploration trajectories; returns manifest.

    Environments rotate through low/medium/high relief. All randomness
    descends from ``seed`` through per-environment child sequences, so the
    same call produces byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    veh = veh or vehicle.VehicleParams()
    terrain_kw = dict(terrain_kw or {})
    levels = terrain.assign_levels(n_envs)
    seeds = terrain.environment_seeds(seed, n_envs)
    files: dict[str, str] = {}
    for e in range(n_envs):
        env_seed = seeds[e]
        params = terrain.TerrainParams.for_level(levels[e], **terrain_kw)
        env = terrain.make_environment(e, env_seed, params)
        edir = out / env_dir_name(e)
        edir.mkdir(exist_ok=True)
        write_grid(edir / "elevation.grid", env.elevation)
        write_grid(edir / "semantics.grid", env.semantics)
        (edir / "materials.json").write_bytes(
            _dumps({"resolution": env.resolution, "level": levels[e],
                    "materials": materials_to_json(env.materials)}))
        traj_rng = np.random.default_rng(env_seed.spawn(1)[0])
        for tr in range(n_traj):
            poses, controls = vehicle.explore_trajectory(env, traj_rng,
                                                         n_steps, veh)
            ee = np.empty((n_steps + 1, EMBED_DIM))
            es = np.empty((n_steps + 1, EMBED_DIM))
            for i in range(n_steps + 1):
                ee[i], es[i] = embeddings.raw_stats_pair(
                    env, poses[i, 0], poses[i, 1], poses[i, 5])
            times = np.arange(n_steps + 1) * veh.dt
            write_trajectory(edir / f"traj_{tr:03d}.traj", e, times, poses,
                             controls, ee, es)
        for p in sorted(edir.iterdir()):
            files[f"{edir.name}/{p.name}"] = sha256_file(p)
    manifest = {"magic": SET_MAGIC, "version": FORMAT_VERSION, "seed": seed,
                "n_envs": n_envs, "n_traj": n_traj, "n_steps": n_steps,
                "dt": veh.dt, "terrain": terrain_kw, "files": files}
    (out / "manifest.json").write_bytes(_dumps(manifest))
    return manifest


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    manifest = json.loads(path.read_text())
    if manifest.get("magic") != SET_MAGIC:
        raise DatasetError(f"manifest magic {manifest.get('magic')!r} invalid")
    return manifest


def verify_dataset(root) -> list:
    """Recompute every checksum; returns [(relpath, ok, detail)]."""
    root = Path(root)
    manifest = load_manifest(root)
    report = []
    for rel, digest in sorted(manifest["files"].items()):
        path = root / rel
        if not path.exists():
            report.append((rel, False, "missing"))
            continue
        actual = sha256_file(path)
        if actual != digest:
            report.append((rel, False, "sha256 mismatch"))
            continue
        try:
            if rel.endswith(".traj"):
                read_trajectory(path)
            elif rel.endswith(".grid"):
                read_grid(path)
            report.append((rel, True, ""))
        except DatasetError as exc:
            report.append((rel, False, str(exc)))
    return report


def load_environment(root, env_id: int) -> terrain.Environment:
    edir = Path(root) / env_dir_name(env_id)
    if not edir.is_dir():
        raise DatasetError(f"environment directory {edir} missing")
    elevation = read_grid(edir / "elevation.grid")
    semantics = read_grid(edir / "semantics.grid")
    info = json.loads((edir / "materials.json").read_text())
    return terrain.Environment(env_id, float(info["resolution"]), elevation,
                               semantics, materials_from_json(info["materials"]),
                               meta={"level": info.get("level")})


def list_trajectories(root, env_id: int) -> list:
    edir = Path(root) / env_dir_name(env_id)
    return sorted(edir.glob("traj_*.traj"))


def load_env_trajectories(root, env_id: int) -> list:
    return [read_trajectory(p) for p in list_trajectories(root, env_id)]


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transitions:
    """Flat arrays of one-step supervised samples."""

    inputs: np.ndarray    # (M, 22)
    controls: np.ndarray  # (M, 2)
    targets: np.ndarray   # (M, 6) body-frame pose changes

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, idx) -> "Transitions":
        return Transitions(self.inputs[idx], self.controls[idx],
                           self.targets[idx])

    @staticmethod
    def concat(parts) -> "Transitions":
        return Transitions(np.concatenate([p.inputs for p in parts]),
                           np.concatenate([p.controls for p in parts]),
                           np.concatenate([p.targets for p in parts]))


def traj_transitions(traj: Trajectory, embedder=None,
                     feats: np.ndarray | None = None) -> Transitions:
    """One-step samples from consecutive poses of a trajectory.

    Features come from, in order of precedence: ``feats`` (precomputed
    (n+1, 16) rows, e.g. learned embeddings), ``embedder.from_raw`` on the
    stored statistics, or the raw stored statistics unchanged.
    """
    prev, nxt = traj.poses[:-1], traj.poses[1:]
    if feats is not None:
        row = np.asarray(feats, dtype=np.float64)[:-1]
    elif embedder is not None:
        ee, es = embedder.from_raw(traj.e_elev[:-1], traj.e_sem[:-1])
        row = np.concatenate([ee, es], axis=1)
    else:
        row = np.concatenate([traj.e_elev[:-1], traj.e_sem[:-1]], axis=1)
    return Transitions(inputs=assemble_inputs(prev, row),
                       controls=traj.controls[:-1].copy(),
                       targets=body_deltas(prev, nxt))
