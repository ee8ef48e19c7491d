"""Procedural off-road environments: heightfield, semantic raster, materials.

Each environment is a square raster (default 129 m at 0.1 m per pixel)
holding an elevation field built from multi-octave value noise and a
semantic field assigning every pixel one of ten terrain classes via a
Voronoi partition. Seven classes are rigid, parameterized by a friction
coefficient drawn per environment from a class-specific normal
distribution (restitution fixed at 0.01); three are deformable, assigned
cohesion/stiffness/hardening at one of three deformability levels.

The material table also defines the scalar speed factor the ground-truth
vehicle model uses, so environments are self-contained oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

RIGID_CLASSES = ("grass", "wood", "gravel", "dirt", "clay", "rock", "concrete")
DEFORMABLE_CLASSES = ("snow", "mud", "sand")
CLASS_NAMES = RIGID_CLASSES + DEFORMABLE_CLASSES
N_CLASSES = len(CLASS_NAMES)
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}

# per-class friction means span [0.3, 0.9]; draws are clipped to stay physical
RIGID_MU_MEAN = {
    "grass": 0.40, "wood": 0.30, "gravel": 0.55, "dirt": 0.50,
    "clay": 0.45, "rock": 0.70, "concrete": 0.90,
}
RIGID_MU_STD = 0.05
RIGID_MU_CLIP = (0.05, 1.5)
RESTITUTION = 0.01

DEFORM_LEVELS = ("soft", "medium", "hard")
# cohesion [Pa], stiffness [Pa/m], hardening [-]
DEFORM_PARAMS = {
    "soft": (1.0e3, 1.0e5, 0.3),
    "medium": (5.0e3, 5.0e5, 0.6),
    "hard": (2.0e4, 2.0e6, 1.0),
}
# effective speed factor of deformable terrain at each level
DEFORM_SPEED_FACTOR = {"soft": 0.45, "medium": 0.62, "hard": 0.80}

ELEVATION_LEVELS = {"low": 0.5, "medium": 1.5, "high": 3.0}


@dataclass(frozen=True)
class RigidMaterial:
    name: str
    mu: float
    restitution: float = RESTITUTION

    @property
    def speed_factor(self) -> float:
        return min(1.0, self.mu)


@dataclass(frozen=True)
class DeformableMaterial:
    name: str
    level: str
    cohesion: float
    stiffness: float
    hardening: float

    @property
    def speed_factor(self) -> float:
        return DEFORM_SPEED_FACTOR[self.level]


@dataclass(frozen=True)
class TerrainParams:
    n: int = 1290
    resolution: float = 0.1
    octaves: int = 5
    base_cell_m: float = 32.0
    amplitude_m: float = 1.5
    persistence: float = 0.5
    lacunarity: float = 2.0
    n_sites: int = 40
    classes: tuple = CLASS_NAMES

    def __post_init__(self):
        if self.n < 4 or self.resolution <= 0:
            raise ValueError("raster must have n >= 4 and positive resolution")
        if self.octaves < 1 or self.n_sites < 1:
            raise ValueError("need at least one octave and one site")
        if not self.classes or any(c not in CLASS_IDS for c in self.classes):
            raise ValueError(f"classes must be drawn from {CLASS_NAMES}")

    @classmethod
    def for_level(cls, level: str, **kw) -> "TerrainParams":
        if level not in ELEVATION_LEVELS:
            raise ValueError(f"level must be one of {tuple(ELEVATION_LEVELS)}")
        return cls(amplitude_m=ELEVATION_LEVELS[level], **kw)


@dataclass
class Environment:
    """One generated world plus its realized material parameters."""

    env_id: int
    resolution: float
    elevation: np.ndarray
    semantics: np.ndarray
    materials: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.elevation.shape != self.semantics.shape or self.elevation.ndim != 2:
            raise ValueError("elevation and semantics must be square rasters of one shape")
        if len(self.materials) != N_CLASSES:
            raise ValueError(f"need one material per class ({N_CLASSES})")
        if int(self.semantics.min()) < 0 or int(self.semantics.max()) >= N_CLASSES:
            raise ValueError("semantic labels out of class range")

    @property
    def n(self) -> int:
        return self.elevation.shape[0]

    @property
    def size_m(self) -> float:
        return (self.n - 1) * self.resolution

    def contains(self, x, y, margin: float = 0.0) -> bool:
        lim = self.size_m - margin
        return bool(np.all((np.asarray(x) >= margin) & (np.asarray(x) <= lim)
                           & (np.asarray(y) >= margin) & (np.asarray(y) <= lim)))

    def elevation_at(self, x, y):
        """Bilinear height probe at world coordinates (meters)."""
        xs = np.asarray(x, dtype=np.float64) / self.resolution
        ys = np.asarray(y, dtype=np.float64) / self.resolution
        return kernels.bilinear_sample(self.elevation, xs, ys)

    def gradient_at(self, x, y, eps: float | None = None):
        """Central-difference slope (dz/dx, dz/dy) of the bilinear surface."""
        if eps is None:
            eps = self.resolution
        dzdx = (self.elevation_at(np.asarray(x) + eps, y)
                - self.elevation_at(np.asarray(x) - eps, y)) / (2.0 * eps)
        dzdy = (self.elevation_at(x, np.asarray(y) + eps)
                - self.elevation_at(x, np.asarray(y) - eps)) / (2.0 * eps)
        return dzdx, dzdy

    def semantic_at(self, x, y):
        """Nearest-pixel class id at world coordinates."""
        n = self.n
        ix = np.clip(np.rint(np.asarray(x, dtype=np.float64) / self.resolution),
                     0, n - 1).astype(np.int64)
        iy = np.clip(np.rint(np.asarray(y, dtype=np.float64) / self.resolution),
                     0, n - 1).astype(np.int64)
        return self.semantics[iy, ix]

    def speed_factor_of(self, class_id):
        factors = np.array([m.speed_factor for m in self.materials])
        return factors[class_id]


def generate_elevation(params: TerrainParams, rng: np.random.Generator) -> np.ndarray:
    """Multi-octave value noise, mean-removed."""
    n = params.n
    out = np.zeros((n, n), dtype=np.float64)
    cell_m = params.base_cell_m
    amp = params.amplitude_m
    for _ in range(params.octaves):
        cell_px = max(cell_m / params.resolution, 1.5)
        lat_n = int((n - 1) / cell_px) + 2
        lattice = rng.uniform(-1.0, 1.0, size=(lat_n, lat_n))
        kernels.add_noise_octave(out, lattice, cell_px, amp)
        cell_m /= params.lacunarity
        amp *= params.persistence
    out -= out.mean()
    return out


def generate_semantics(params: TerrainParams, rng: np.random.Generator) -> np.ndarray:
    """Voronoi partition of the raster into terrain classes.

    Every requested class is used at least once when there are enough
    sites; remaining sites draw classes uniformly.
    """
    sites = rng.uniform(0.0, params.n - 1.0, size=(params.n_sites, 2))
    ids = np.array([CLASS_IDS[c] for c in params.classes], dtype=np.int64)
    labels = np.empty(params.n_sites, dtype=np.int64)
    head = min(len(ids), params.n_sites)
    labels[:head] = rng.permutation(ids)[:head]
    if params.n_sites > head:
        labels[head:] = rng.choice(ids, size=params.n_sites - head)
    return kernels.voronoi_labels(params.n, sites, labels)


def sample_materials(rng: np.random.Generator) -> tuple:
    """Realize per-class physics for one environment."""
    mats = []
    for name in RIGID_CLASSES:
        mu = float(np.clip(rng.normal(RIGID_MU_MEAN[name], RIGID_MU_STD),
                           *RIGID_MU_CLIP))
        mats.append(RigidMaterial(name, mu))
    for name in DEFORMABLE_CLASSES:
        level = DEFORM_LEVELS[int(rng.integers(len(DEFORM_LEVELS)))]
        coh, stiff, hard = DEFORM_PARAMS[level]
        mats.append(DeformableMaterial(name, level, coh, stiff, hard))
    return tuple(mats)


def make_environment(env_id: int, seed, params: TerrainParams | None = None) -> Environment:
    """Generate one environment from a seed (int or SeedSequence)."""
    params = params or TerrainParams()
    rng = np.random.default_rng(seed)
    elevation = generate_elevation(params, rng)
    semantics = generate_semantics(params, rng)
    materials = sample_materials(rng)
    return Environment(env_id, params.resolution, elevation, semantics, materials,
                       meta={"amplitude_m": params.amplitude_m,
                             "octaves": params.octaves})


def make_flat_environment(env_id: int = 0, class_name: str = "concrete",
                          mu: float = 1.0, n: int = 290,
                          resolution: float = 0.1) -> Environment:
    """Zero-relief, single-class world with a pinned friction draw.

    With mu >= 1 the speed factor is exactly 1, so a 1 m/s command moves
    the vehicle exactly 0.1 m per 0.1 s step.
    """
    elevation = np.zeros((n, n), dtype=np.float64)
    semantics = np.full((n, n), CLASS_IDS[class_name], dtype=np.int64)
    mats = []
    for name in RIGID_CLASSES:
        mats.append(RigidMaterial(name, mu if name == class_name
                                  else RIGID_MU_MEAN[name]))
    for name in DEFORMABLE_CLASSES:
        coh, stiff, hard = DEFORM_PARAMS["medium"]
        mats.append(DeformableMaterial(name, "medium", coh, stiff, hard))
    return Environment(env_id, resolution, elevation, semantics, tuple(mats),
                       meta={"flat": True, "class": class_name})


def environment_seeds(master_seed: int, count: int) -> list:
    """Independent child seeds, one per environment."""
    return np.random.SeedSequence(master_seed).spawn(count)


def assign_levels(count: int) -> list:
    """Even split of environments across relief levels, round-robin."""
    names = tuple(ELEVATION_LEVELS)
    return [names[i % len(names)] for i in range(count)]
