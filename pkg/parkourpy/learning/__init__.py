from parkourpy.learning.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from parkourpy.learning.dagger import (
    DistillBatch,
    DistillStats,
    StudentTrajectory,
    dagger_label,
    distill_update,
    l1_action_loss,
)
from parkourpy.learning.ppo import (
    PpoConfig,
    PpoStats,
    RolloutBuffer,
    clipped_surrogate,
    compute_gae,
    ppo_update,
)
from parkourpy.learning.runner import PpoRunner, VecEnv

__all__ = [
    "Checkpoint",
    "DistillBatch",
    "DistillStats",
    "PpoConfig",
    "PpoRunner",
    "PpoStats",
    "RolloutBuffer",
    "StudentTrajectory",
    "VecEnv",
    "clipped_surrogate",
    "compute_gae",
    "dagger_label",
    "distill_update",
    "l1_action_loss",
    "load_checkpoint",
    "ppo_update",
    "save_checkpoint",
]
