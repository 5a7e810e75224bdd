"""Scripted policies: the random agent with perfect stopping and non-learned attackers."""

from __future__ import annotations

import numpy as np

from savn.env import AttackerGenerator
from savn.world import AgentAction, AttackerSpec, EpisodeState, Scene, parse_env_spec

BASELINE_KINDS = ("random_agent_perfect_stop", "fixed_attacker", "random_attacker")


class RandomAgent:
    """Uniform over MoveForward/TurnLeft/TurnRight; issues Stop on reaching the goal."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def __call__(self, scene: Scene, state: EpisodeState) -> int:
        if state.agent.node == scene.goal:
            return int(AgentAction.Stop)
        return int(self.rng.integers(3))


def make_baseline_policy(kind: str, spec: str | AttackerSpec | None = None, rng: np.random.Generator | None = None, categories=(0,)):
    """Build a scripted policy.

    ``random_agent_perfect_stop`` returns a :class:`RandomAgent`; the attacker
    kinds return an :class:`AttackerGenerator` (already reset with ``rng``).
    ``fixed_attacker`` takes an all-fixed environment spec such as
    ``"pvc_fix,v=0.1,c=0"``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if kind == "random_agent_perfect_stop":
        return RandomAgent(rng)
    if kind == "fixed_attacker":
        if spec is None:
            raise ValueError("fixed_attacker needs a spec")
        spec = parse_env_spec(spec) if isinstance(spec, str) else spec
        if not spec.present or (spec.pos, spec.vol, spec.cat) != ("fixed", "fixed", "fixed"):
            raise ValueError(f"fixed_attacker needs every head fixed, got {spec}")
    elif kind == "random_attacker":
        spec = AttackerSpec(True, "random", "random", "random")
    else:
        raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    gen = AttackerGenerator(spec, categories)
    gen.reset(rng)
    return gen
