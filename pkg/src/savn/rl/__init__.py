"""Joint PPO training of the navigating agent and the sound attacker."""

from savn.rl.baselines import RandomAgent, make_baseline_policy
from savn.rl.ppo import (
    PpoConfig,
    TrajectoryBatch,
    attacker_loss,
    branch_loss,
    compute_gae,
    total_critic,
    total_loss,
)
from savn.rl.rollout import PolicySet, RolloutState, rollout, update

__all__ = [
    "PolicySet",
    "PpoConfig",
    "RandomAgent",
    "RolloutState",
    "TrajectoryBatch",
    "attacker_loss",
    "branch_loss",
    "compute_gae",
    "make_baseline_policy",
    "rollout",
    "total_critic",
    "total_loss",
    "update",
]
