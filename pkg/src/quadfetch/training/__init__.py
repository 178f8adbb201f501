"""Two-phase training: privileged PPO, depth distillation, ablation trainers."""

from .curriculum import curriculum_update
from .env import EnvConfig, VecFetchEnv, build_eval_terrain
from .ppo import PPOConfig, PPOTrainer, compute_gae

__all__ = [
    "EnvConfig",
    "PPOConfig",
    "PPOTrainer",
    "VecFetchEnv",
    "build_eval_terrain",
    "compute_gae",
    "curriculum_update",
]
