"""Terrain-adaptive vehicle dynamics learned as a span of basis models.

A small set of neural ODE basis functions is trained jointly over many
procedurally generated terrains; a specific terrain is then identified by
closed-form least squares over the basis outputs, giving adaptation in
milliseconds instead of gradient descent.  The package also ships the
simulator that produces the terrains and ground-truth motion, gradient
descent baselines, terrain patch embeddings, and a sampling-based planner
that closes the loop.
"""

from .basis import AdaptResult, BasisEnsemble, least_squares_coefficients, mean_alpha
from .config import Config, ConfigError, load_config, save_config
from .dataset import DatasetError, Transitions, build_dataset, verify_dataset
from .frames import Control, PoseState, from_body_frame, to_body_frame, wrap_angle
from .mppi import AdaptationPolicy, Mppi, MppiConfig, navigate
from .nn import AdamState, CosineSchedule, FeedforwardNet, adam_step
from .rk4 import Rk4Config, convergence_order, rk4_net_forward, rk4_step
from .terrain import Environment, TerrainParams, make_environment
from .training import Trainer, TrainerConfig, load_checkpoint, save_checkpoint
from .vehicle import VehicleParams, explore_trajectory, step_true

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AdaptResult", "AdaptationPolicy", "BasisEnsemble",
    "Config", "ConfigError", "Control", "CosineSchedule", "DatasetError",
    "Environment", "FeedforwardNet", "Mppi", "MppiConfig", "PoseState",
    "Rk4Config", "TerrainParams", "Trainer", "TrainerConfig", "Transitions",
    "VehicleParams", "adam_step", "build_dataset", "convergence_order",
    "explore_trajectory", "from_body_frame", "least_squares_coefficients",
    "load_checkpoint", "load_config", "make_environment", "mean_alpha",
    "navigate", "rk4_net_forward", "rk4_step", "save_checkpoint",
    "save_config", "step_true", "to_body_frame", "verify_dataset",
    "wrap_angle", "__version__",
]
