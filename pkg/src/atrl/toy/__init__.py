"""Synthetic slot-reading environment and its group-relative RL trainer."""

from .env import SyntheticScene, gen_scene, verify
from .policy import ToyPolicy
from .train import (
    TrainConfig,
    TrainReport,
    Trajectory,
    grad_check,
    rollout,
    train,
)

__all__ = [
    "SyntheticScene",
    "gen_scene",
    "verify",
    "ToyPolicy",
    "TrainConfig",
    "TrainReport",
    "Trajectory",
    "grad_check",
    "rollout",
    "train",
]
