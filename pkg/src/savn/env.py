"""Episode runners tying scenes, dynamics and sensors together."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from savn.audio.bank import SoundBank, build_sound_bank
from savn.sensors import AudioConfig, VisualConfig, make_observation
from savn.world import (
    N_VOLUME_LEVELS,
    AgentAction,
    AttackerAction,
    AttackerSpec,
    ScenePool,
    WorldConfig,
    geodesic_distance,
    reset,
    step,
)

HEAD_SIZES_FIXED = {"agent": len(AgentAction), "pos": 3, "vol": N_VOLUME_LEVELS}


@dataclass(frozen=True)
class SceneConfig:
    width: int = 10
    height: int = 10
    density: float = 0.2
    resolution: float = 1.0
    pool_size: int = 64
    pool_seed: int = 1234


@dataclass(frozen=True)
class BankConfig:
    n_categories: int = 8
    n_seen: int = 6
    energy_cap: float = 16e6
    seed: int = 99


@dataclass
class GameSetup:
    """Everything static an episode needs: scenes, sounds and sensor settings."""

    pool: ScenePool
    bank: SoundBank
    world: WorldConfig = field(default_factory=WorldConfig)
    visual: VisualConfig = field(default_factory=VisualConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    n_seen: int = 6

    @property
    def seen(self) -> tuple[int, ...]:
        return self.bank.split(self.n_seen)[0]

    @property
    def unseen(self) -> tuple[int, ...]:
        return self.bank.split(self.n_seen)[1]

    def attacker_categories(self, spec: AttackerSpec) -> tuple[int, ...]:
        if spec.cat == "unseen":
            if not self.unseen:
                raise ValueError("no held-out categories: n_seen equals the bank size")
            return self.unseen
        return self.seen

    def head_sizes(self) -> dict[str, int]:
        return {**HEAD_SIZES_FIXED, "cat": len(self.seen)}

    @property
    def obs_shapes(self) -> tuple[int, tuple[int, int, int]]:
        return self.visual.n_rays, self.audio.feature_shape


def build_setup(scene: SceneConfig, bank: BankConfig, world: WorldConfig, visual: VisualConfig, audio: AudioConfig) -> GameSetup:
    pool = ScenePool.generate(scene.pool_seed, scene.pool_size, scene.width, scene.height, scene.density, scene.resolution)
    sounds = build_sound_bank(bank.seed, bank.n_categories, bank.energy_cap, audio.sample_rate, audio.chunk_samples)
    sounds.split(bank.n_seen)  # validates n_seen
    return GameSetup(pool, sounds, world, visual, audio, bank.n_seen)


@dataclass
class StepInfo:
    reward_agent: float
    reward_attacker: float
    done: bool
    record: "EpisodeSummary | None" = None


@dataclass
class EpisodeSummary:
    scene_index: int
    episode_seed: int
    success: bool
    shortest_path: float
    executed_path: float
    start_distance: float
    final_distance: float
    reward_agent: float
    reward_attacker: float
    steps: int
    trajectory: list | None = None


class AttackerGenerator:
    """Drives the attacker heads that are not learned.

    ``fixed`` heads emit a constant (the position head draws its constant
    motion once per episode), ``random`` heads sample uniformly every step and
    ``unseen`` samples categories uniformly from the held-out list. Learned
    heads take the policy's index (category indices point into
    ``categories``); a learned head without a policy output holds its value.
    """

    def __init__(self, spec: AttackerSpec, categories):
        self.spec = spec
        self.categories = tuple(categories)
        self.rng = None
        self.fixed_pos = 0

    def reset(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self.fixed_pos = int(rng.integers(3))

    def __call__(self, state, learned: dict | None = None) -> AttackerAction:
        if self.rng is None:
            raise RuntimeError("generator used before reset")
        spec, rng, learned = self.spec, self.rng, learned or {}
        if spec.pos == "learned" and "pos" in learned:
            pos = int(learned["pos"])
        elif spec.pos == "random":
            pos = int(rng.integers(3))
        else:
            pos = self.fixed_pos
        if spec.vol == "learned" and "vol" in learned:
            vol = int(learned["vol"])
        elif spec.vol == "random":
            vol = int(rng.integers(N_VOLUME_LEVELS))
        elif spec.vol == "fixed":
            vol = spec.vol_value
        else:
            vol = state.vol_index
        if spec.cat == "learned" and "cat" in learned:
            cat = self.categories[int(learned["cat"])]
        elif spec.cat in ("random", "unseen"):
            cat = self.categories[int(rng.integers(len(self.categories)))]
        elif spec.cat == "fixed":
            cat = spec.cat_value
        else:
            cat = state.attacker_cat
        return AttackerAction(pos, vol, int(cat))


class Env:
    """One episode at a time. Attacker heads that are not learned are driven by
    an :class:`AttackerGenerator` seeded from the episode seed."""

    def __init__(self, setup: GameSetup, attacker: AttackerSpec, record_trajectory: bool = False):
        self.setup = setup
        self.attacker = attacker
        self.categories = setup.attacker_categories(attacker) if attacker.present else setup.seen
        self.record_trajectory = record_trajectory
        self.generator = AttackerGenerator(attacker, self.categories)
        self.state = None

    def reset(self, scene_index: int, episode_seed: int):
        s = self.setup
        self.scene_index = int(scene_index)
        self.episode_seed = int(episode_seed)
        self.scene = s.pool[self.scene_index]
        self.state = reset(self.scene, episode_seed, self.attacker, s.seen, self.categories, s.world.min_start_distance)
        self.generator.reset(np.random.default_rng([episode_seed, 2]))
        self._noise_rng = np.random.default_rng([episode_seed, 3])
        self.returns = [0.0, 0.0]
        self.trajectory = [self._snapshot(None, None)] if self.record_trajectory else None
        return self.observe()

    def observe(self):
        s = self.setup
        obs = make_observation(self.scene, self.state, s.bank, s.visual, s.audio, self._noise_rng)
        return obs.visual, obs.audio.magnitudes

    def resolve_attacker(self, learned: dict | None) -> AttackerAction:
        return self.generator(self.state, learned)

    def step(self, agent_action: int, learned_attacker: dict | None = None):
        """Returns ``(observation or None, StepInfo)``; observation is None once done."""
        a_att = self.resolve_attacker(learned_attacker)
        self.state, rewards, done = step(self.scene, self.state, agent_action, a_att, self.setup.world)
        self.returns[0] += rewards.r_agent
        self.returns[1] += rewards.r_attacker
        if self.trajectory is not None:
            self.trajectory.append(self._snapshot(rewards.r_agent, done))
        info = StepInfo(rewards.r_agent, rewards.r_attacker, done)
        if done:
            st = self.state
            info.record = EpisodeSummary(
                self.scene_index,
                self.episode_seed,
                st.success,
                st.start_geodesic,
                st.path_length,
                st.start_geodesic,
                geodesic_distance(self.scene, st.agent.node, self.scene.goal),
                self.returns[0],
                self.returns[1],
                st.step,
                self.trajectory,
            )
            return None, info
        return self.observe(), info

    def _snapshot(self, reward, done) -> dict:
        st = self.state
        return {
            "step": st.step,
            "agent": [st.agent.node[0], st.agent.node[1], st.agent.heading.name],
            "attacker": [st.attacker.node[0], st.attacker.node[1], st.attacker.heading.name],
            "alpha": st.alpha if st.attacker_present else 0.0,
            "category": st.attacker_cat,
            "reward": reward,
            "done": bool(done) if done is not None else False,
        }


class VecEnv:
    """``n`` auto-resetting environments with independent episode streams.

    Env ``i`` draws scene indices and episode seeds from the generator seeded
    with ``(seed, i)``.
    """

    def __init__(self, setup: GameSetup, attacker: AttackerSpec, n_envs: int, seed: int):
        if n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        self.setup = setup
        self.envs = [Env(setup, attacker) for _ in range(n_envs)]
        self.streams = [np.random.default_rng([seed, i]) for i in range(n_envs)]
        n_rays, audio_shape = setup.obs_shapes
        self.visual = np.zeros((n_envs, n_rays))
        self.audio = np.zeros((n_envs, *audio_shape))

    @property
    def n_envs(self) -> int:
        return len(self.envs)

    def _reset_env(self, i: int):
        rng = self.streams[i]
        scene = int(rng.integers(len(self.setup.pool)))
        seed = int(rng.integers(2**31))
        self.visual[i], self.audio[i] = self.envs[i].reset(scene, seed)

    def reset(self):
        for i in range(self.n_envs):
            self._reset_env(i)
        return self.visual.copy(), self.audio.copy()

    def step(self, agent_actions, learned_attacker: list[dict] | None = None):
        """Step every env; finished episodes restart immediately.

        Returns ``(visual, audio, r_agent, r_attacker, dones, records)``.
        """
        n = self.n_envs
        r_ag, r_at, dones = np.zeros(n), np.zeros(n), np.zeros(n)
        records = []
        for i, env in enumerate(self.envs):
            try:
                obs, info = env.step(int(agent_actions[i]), learned_attacker[i] if learned_attacker else None)
            except Exception as exc:
                raise RuntimeError(f"env {i}: {exc}") from exc
            r_ag[i], r_at[i], dones[i] = info.reward_agent, info.reward_attacker, info.done
            if info.done:
                records.append(info.record)
                self._reset_env(i)
            else:
                self.visual[i], self.audio[i] = obs
        return self.visual.copy(), self.audio.copy(), r_ag, r_at, dones, records

    def rng_states(self) -> list:
        return [g.bit_generator.state for g in self.streams]
