"""Typed run configuration with strict JSON loading.

Every CLI entry point reads one JSON document shaped like the nested
dataclasses below. Unknown keys anywhere are rejected (a typo should fail
loudly, not silently fall back to a default). Defaults reproduce the
reference setup: 24 basis functions, 5 environments x 10 trajectories per
batch with a 4/6 example/query split, 2 windows of 8 prediction steps,
1000 cosine-annealed Adam steps from 1e-3 to 1e-5, ridge 1e-3, 0.1 s
intervals.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


@dataclass(frozen=True)
class WorldSection:
    n_envs: int = 20
    n_traj: int = 10
    n_steps: int = 200
    grid_n: int = 1290
    resolution: float = 0.1
    octaves: int = 5
    base_cell_m: float = 32.0
    n_sites: int = 40


@dataclass(frozen=True)
class ModelSection:
    k: int = 24
    hidden: int | None = None  # None scales the width with k
    dt: float = 0.1
    substeps: int = 1
    lam: float = 1e-3


@dataclass(frozen=True)
class TrainSection:
    f_envs: int = 5
    n_traj: int = 10
    n_examples: int = 4
    n_query: int = 6
    s_windows: int = 2
    t_pred: int = 8
    steps: int = 1000
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    example_batch: int = 256


@dataclass(frozen=True)
class EmbedSection:
    mode: str = "stats"  # "stats" or "swae"
    swae_hidden: int = 256
    swae_latent: int = 64
    swae_beta: float = 1.0
    swae_steps: int = 500
    swae_batch: int = 64
    swae_lr: float = 1e-3
    compressor_steps: int = 500
    compressor_lr: float = 1e-3

    def __post_init__(self):
        if self.mode not in ("stats", "swae"):
            raise ConfigError(f"embeddings.mode must be stats or swae, "
                              f"got {self.mode!r}")


@dataclass(frozen=True)
class BaselineSection:
    hidden: int = 64
    pretrain_steps: int = 2000
    pretrain_batch: int = 256
    pretrain_lr: float = 1e-3
    maml_inner_lr: float = 5e-3
    mlp_adapt_steps: int = 40000
    maml_adapt_steps: int = 20000
    node_adapt_steps: int = 500
    mlp_adapt_lr: float = 5e-3
    maml_adapt_lr: float = 5e-3
    node_adapt_lr: float = 1e-3


@dataclass(frozen=True)
class PlannerSection:
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
    embed_source: str = "field"  # "field" or "hold"
    field_stride: float = 1.0

    def __post_init__(self):
        if self.embed_source not in ("field", "hold"):
            raise ConfigError(f"planner.embed_source must be field or hold, "
                              f"got {self.embed_source!r}")


@dataclass(frozen=True)
class NavSection:
    goal_distance: float = 20.0
    goal_radius: float = 1.0
    max_steps: int = 600
    warmup_steps: int = 20
    period_steps: int = 50
    buffer_capacity: int = 256
    episodes: int = 10


@dataclass(frozen=True)
class Config:
    world: WorldSection = field(default_factory=WorldSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    embeddings: EmbedSection = field(default_factory=EmbedSection)
    baselines: BaselineSection = field(default_factory=BaselineSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    nav: NavSection = field(default_factory=NavSection)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object, "
                          f"got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in "
                          f"{path or 'config'}")
    kwargs = {}
    for name, val in data.items():
        f = known[name]
        if dataclasses.is_dataclass(f.type) or (
                isinstance(f.default_factory, type)
                and dataclasses.is_dataclass(f.default_factory)):
            kwargs[name] = _build(f.default_factory, val,
                                  f"{path}.{name}" if path else name)
        else:
            kwargs[name] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {path or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> Config:
    return _build(Config, data, "")


def load_config(path) -> Config:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


def save_config(path, cfg: Config) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2,
                                     sort_keys=True) + "\n")
