"""Grid-world two-player navigation game.

The static part of the state is a :class:`Scene` (occupancy grid, goal cell,
spatial resolution); the dynamic part is an :class:`EpisodeState` holding the
agent pose, the attacker's pose/volume/category and episode bookkeeping.
:func:`step` applies a joint action and pays the zero-sum reward pair.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

SCENE_FORMAT = "savn-scene"
SCENE_VERSION = 1

VOLUME_LEVELS = tuple(round(0.1 * i, 1) for i in range(11))
N_VOLUME_LEVELS = len(VOLUME_LEVELS)


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def delta(self) -> tuple[int, int]:
        return _HEADING_DELTAS[self]

    def left(self) -> "Heading":
        return Heading((self - 1) % 4)

    def right(self) -> "Heading":
        return Heading((self + 1) % 4)


# (d_row, d_col); north is row - 1
_HEADING_DELTAS = {Heading.N: (-1, 0), Heading.E: (0, 1), Heading.S: (1, 0), Heading.W: (0, -1)}


class AgentAction(IntEnum):
    MoveForward = 0
    TurnLeft = 1
    TurnRight = 2
    Stop = 3


class AttackerMove(IntEnum):
    MoveForward = 0
    TurnLeft = 1
    TurnRight = 2


class AttackerAction(NamedTuple):
    pos: int
    vol_index: int
    cat_index: int


class Pose(NamedTuple):
    node: tuple[int, int]
    heading: Heading


class RewardPair(NamedTuple):
    r_agent: float
    r_attacker: float


class WallError(ValueError):
    """A node that should be navigable is a wall or outside the grid."""


class EpisodeDone(RuntimeError):
    """Stepping an episode that has already terminated."""


@dataclass(frozen=True)
class Scene:
    """Occupancy grid with a goal cell.

    ``grid`` holds one string per row, ``'.'`` for free and ``'#'`` for wall.
    """

    grid: tuple[str, ...]
    goal: tuple[int, int]
    resolution: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ValueError("scenes must be at least 4x4")
        if any(len(row) != self.width or set(row) - {".", "#"} for row in self.grid):
            raise ValueError("grid rows must be equal-length strings of '.' and '#'")
        object.__setattr__(self, "goal", tuple(int(v) for v in self.goal))
        if not self.is_free(self.goal):
            raise WallError(f"goal {self.goal} is not a free cell")
        _, n_components = ndimage.label(~self.walls)
        if n_components != 1:
            raise ValueError("free cells must form one connected component")

    @property
    def height(self) -> int:
        return len(self.grid)

    @property
    def width(self) -> int:
        return len(self.grid[0]) if self.grid else 0

    @cached_property
    def walls(self) -> np.ndarray:
        w = np.array([[ch == "#" for ch in row] for row in self.grid], dtype=bool)
        w.setflags(write=False)
        return w

    @cached_property
    def nodes(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(~self.walls)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    def in_bounds(self, node) -> bool:
        r, c = node
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free(self, node) -> bool:
        return self.in_bounds(node) and not self.walls[node[0], node[1]]

    @cached_property
    def _distance_maps(self) -> dict:
        return {}

    def distance_map(self, target) -> np.ndarray:
        """BFS hop counts from every cell to ``target`` (``inf`` for walls)."""
        target = tuple(target)
        cache = self._distance_maps
        if target not in cache:
            if not self.is_free(target):
                raise WallError(f"{target} is not a free cell")
            dist = np.full((self.height, self.width), np.inf)
            dist[target] = 0.0
            queue = deque([target])
            while queue:
                r, c = queue.popleft()
                for dr, dc in _HEADING_DELTAS.values():
                    nb = (r + dr, c + dc)
                    if self.is_free(nb) and dist[nb] == np.inf:
                        dist[nb] = dist[r, c] + 1.0
                        queue.append(nb)
            dist.setflags(write=False)
            cache[target] = dist
        return cache[target]

    def to_json(self) -> dict:
        return {
            "format": SCENE_FORMAT,
            "version": SCENE_VERSION,
            "width": self.width,
            "height": self.height,
            "grid": list(self.grid),
            "goal": list(self.goal),
            "resolution": self.resolution,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scene":
        if data.get("format") != SCENE_FORMAT:
            raise ValueError(f"not a scene document (format={data.get('format')!r})")
        if data.get("version") != SCENE_VERSION:
            raise ValueError(f"unsupported scene version {data.get('version')}")
        scene = cls(tuple(data["grid"]), tuple(data["goal"]), float(data["resolution"]), data.get("seed"))
        if (scene.width, scene.height) != (data["width"], data["height"]):
            raise ValueError("declared width/height disagree with grid")
        return scene

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_json(json.loads(Path(path).read_text()))


def generate_scene(
    seed: int,
    width: int = 10,
    height: int = 10,
    obstacle_density: float = 0.2,
    resolution: float = 1.0,
    max_retries: int = 200,
) -> Scene:
    """Random connected occupancy grid with a uniformly placed goal."""
    if not 0.0 <= obstacle_density <= 0.4:
        raise ValueError("obstacle_density must lie in [0, 0.4]")
    if width < 4 or height < 4:
        raise ValueError("scenes must be at least 4x4")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        walls = rng.random((height, width)) < obstacle_density
        free = ~walls
        if free.sum() < 2:
            continue
        _, n_components = ndimage.label(free)
        if n_components != 1:
            continue
        rows, cols = np.nonzero(free)
        k = rng.integers(rows.size)
        grid = tuple("".join("#" if w else "." for w in row) for row in walls)
        return Scene(grid, (int(rows[k]), int(cols[k])), resolution, seed)
    raise RuntimeError(f"no connected layout after {max_retries} attempts (seed={seed})")


def geodesic_distance(scene: Scene, node, goal) -> float:
    """Shortest-path length between two free cells, in length units."""
    node = tuple(node)
    if not scene.is_free(node):
        raise WallError(f"{node} is not a free cell")
    return float(scene.distance_map(goal)[node]) * scene.resolution


def manhattan_distance(scene: Scene, node, goal) -> float:
    return (abs(node[0] - goal[0]) + abs(node[1] - goal[1])) * scene.resolution


# ---------------------------------------------------------------------------
# Attacker configuration


ATTACKER_HEAD_MODES = ("learned", "fixed", "random")


@dataclass(frozen=True)
class AttackerSpec:
    """How each attacker head is driven.

    ``pos``/``vol``/``cat`` take ``learned``, ``fixed`` or ``random``; the
    category head additionally accepts ``unseen`` (uniform over held-out
    categories). ``present=False`` is the clean environment: the attacker
    exists as a pose but is silent.
    """

    present: bool = True
    pos: str = "learned"
    vol: str = "learned"
    cat: str = "learned"
    vol_value: int = 1
    cat_value: int = 0

    def __post_init__(self):
        for head in ("pos", "vol"):
            if getattr(self, head) not in ATTACKER_HEAD_MODES:
                raise ValueError(f"bad {head} mode {getattr(self, head)!r}")
        if self.cat not in ATTACKER_HEAD_MODES + ("unseen",):
            raise ValueError(f"bad cat mode {self.cat!r}")
        if not 0 <= self.vol_value < N_VOLUME_LEVELS:
            raise ValueError(f"vol_value must index the volume set, got {self.vol_value}")

    @property
    def learned_heads(self) -> tuple[str, ...]:
        if not self.present:
            return ()
        return tuple(h for h in ("pos", "vol", "cat") if getattr(self, h) == "learned")

    @property
    def label(self) -> str:
        if not self.present:
            return "clean"
        parts = []
        for head in ("pos", "vol", "cat"):
            mode = getattr(self, head)
            if head == "vol" and mode == "fixed":
                parts.append(f"v={VOLUME_LEVELS[self.vol_value]}")
            elif head == "cat" and mode == "fixed":
                parts.append(f"c={self.cat_value}")
            else:
                parts.append(f"{head[0]}_{mode}" if mode != "learned" else head[0])
        return ",".join(parts)


def parse_env_spec(text: str) -> AttackerSpec:
    """Parse an environment name into an :class:`AttackerSpec`.

    Grammar: ``clean`` | ``<heads>[_fix|_random][,v=<alpha>][,c=<cat>][,c=unseen]``
    where ``<heads>`` is a subset of ``pvc`` naming the heads that follow the
    mode suffix (learned if no suffix); unnamed heads are fixed. Examples:
    ``pvc``, ``pvc_random``, ``p,v=0.1,c=0``, ``v``.
    """
    tokens = [t.strip().lower() for t in text.split(",") if t.strip()]
    if not tokens:
        raise ValueError("empty environment spec")
    head = tokens[0]
    if head == "clean":
        if len(tokens) > 1:
            raise ValueError("clean takes no options")
        return AttackerSpec(present=False, pos="fixed", vol="fixed", cat="fixed", vol_value=0)
    mode = "learned"
    for suffix, m in (("_fix", "fixed"), ("_random", "random")):
        if head.endswith(suffix):
            head, mode = head[: -len(suffix)], m
    if not head or set(head) - set("pvc"):
        raise ValueError(f"bad environment spec {text!r}")
    modes = {h: (mode if h[0] in head else "fixed") for h in ("pos", "vol", "cat")}
    vol_value, cat_value = 1, 0
    for tok in tokens[1:]:
        key, _, val = tok.partition("=")
        if key == "v":
            alpha = float(val)
            if not any(abs(alpha - lv) < 1e-9 for lv in VOLUME_LEVELS):
                raise ValueError(f"volume {alpha} not in the volume set")
            vol_value = int(round(alpha * 10))
        elif key == "c" and val == "unseen":
            modes["cat"] = "unseen"
        elif key == "c":
            cat_value = int(val)
        else:
            raise ValueError(f"unknown option {tok!r} in environment spec")
    return AttackerSpec(True, modes["pos"], modes["vol"], modes["cat"], vol_value, cat_value)


# ---------------------------------------------------------------------------
# Episode dynamics


@dataclass(frozen=True)
class WorldConfig:
    max_steps: int = 100
    success_reward: float = 10.0
    slack_reward: float = -0.01
    shaping_scale: float = 1.0
    shaping_metric: str = "geodesic"
    volume_mode: str = "skipping"
    min_start_distance: float = 0.0

    def __post_init__(self):
        if self.shaping_metric not in ("geodesic", "manhattan"):
            raise ValueError(f"unknown shaping metric {self.shaping_metric!r}")
        if self.volume_mode not in ("skipping", "sliding"):
            raise ValueError(f"unknown volume mode {self.volume_mode!r}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.min_start_distance < 0:
            raise ValueError("min_start_distance must be non-negative")


@dataclass(frozen=True)
class EpisodeState:
    agent: Pose
    attacker: Pose
    alpha: float
    vol_index: int
    attacker_cat: int
    target_cat: int
    attacker_present: bool = True
    step: int = 0
    prev_geodesic: float = 0.0
    start_geodesic: float = 0.0
    path_length: float = 0.0
    done: bool = False
    success: bool = False
    last_action: int | None = None


def _shaping_distance(scene: Scene, node, cfg: WorldConfig) -> float:
    if cfg.shaping_metric == "manhattan":
        return manhattan_distance(scene, node, scene.goal)
    return geodesic_distance(scene, node, scene.goal)


def reset(
    scene: Scene,
    episode_seed: int,
    attacker: AttackerSpec | None = None,
    target_categories=(0,),
    attacker_categories=None,
    min_start_distance: float = 0.0,
) -> EpisodeState:
    """Start an episode.

    Agent start/heading and target category come from one RNG stream and the
    attacker's start pose, volume and category from another, so the agent's
    episode is identical whatever the attacker configuration.
    """
    attacker = attacker or AttackerSpec()
    target_categories = tuple(target_categories)
    attacker_categories = tuple(attacker_categories or target_categories)
    rng = np.random.default_rng([episode_seed, 0])
    rng_att = np.random.default_rng([episode_seed, 1])
    candidates = [n for n in scene.nodes if n != scene.goal and geodesic_distance(scene, n, scene.goal) >= min_start_distance]
    if not candidates:
        raise ValueError(f"scene has no start cell at geodesic distance >= {min_start_distance} from the goal")
    start = candidates[rng.integers(len(candidates))]
    heading = Heading(int(rng.integers(4)))
    target_cat = target_categories[rng.integers(len(target_categories))]
    att_node = scene.nodes[rng_att.integers(len(scene.nodes))]
    att_heading = Heading(int(rng_att.integers(4)))
    random_vol = int(rng_att.integers(N_VOLUME_LEVELS))
    random_cat = attacker_categories[rng_att.integers(len(attacker_categories))]
    if not attacker.present:
        vol_index = 0
    elif attacker.vol == "fixed":
        vol_index = attacker.vol_value
    else:
        vol_index = random_vol
    cat = attacker.cat_value if attacker.cat == "fixed" else random_cat
    d0 = geodesic_distance(scene, start, scene.goal)
    return EpisodeState(
        agent=Pose(start, heading),
        attacker=Pose(att_node, att_heading),
        alpha=VOLUME_LEVELS[vol_index],
        vol_index=vol_index,
        attacker_cat=int(cat),
        target_cat=int(target_cat),
        attacker_present=attacker.present,
        prev_geodesic=d0,
        start_geodesic=d0,
    )


def volume_transition(current_index: int, proposed_index: int, mode: str = "skipping") -> int:
    """Apply the volume action under the sliding or skipping rule."""
    if mode == "skipping":
        return int(proposed_index)
    if mode == "sliding":
        lo, hi = max(current_index - 1, 0), min(current_index + 1, N_VOLUME_LEVELS - 1)
        return int(min(max(proposed_index, lo), hi))
    raise ValueError(f"unknown volume mode {mode!r}")


def _advance(scene: Scene, pose: Pose, move: int) -> tuple[Pose, bool]:
    """Apply a motion primitive; returns the new pose and whether it translated."""
    if move == AgentAction.TurnLeft:
        return Pose(pose.node, pose.heading.left()), False
    if move == AgentAction.TurnRight:
        return Pose(pose.node, pose.heading.right()), False
    if move == AgentAction.MoveForward:
        dr, dc = pose.heading.delta
        nxt = (pose.node[0] + dr, pose.node[1] + dc)
        if scene.is_free(nxt):
            return Pose(nxt, pose.heading), True
        return pose, False
    raise ValueError(f"not a motion primitive: {move}")


def step(
    scene: Scene,
    state: EpisodeState,
    a_agent,
    a_attacker: AttackerAction,
    cfg: WorldConfig | None = None,
) -> tuple[EpisodeState, RewardPair, bool]:
    """Advance the game by one joint action."""
    cfg = cfg or WorldConfig()
    if state.done:
        raise EpisodeDone("episode already terminated")
    a_agent = AgentAction(int(a_agent))
    pos, vol, cat = (int(v) for v in a_attacker)
    if pos not in (0, 1, 2):
        raise ValueError(f"illegal attacker position action {pos}")
    if not 0 <= vol < N_VOLUME_LEVELS:
        raise ValueError(f"illegal attacker volume index {vol}")

    agent = state.agent
    moved = False
    success = False
    stopped = a_agent == AgentAction.Stop
    if stopped:
        success = agent.node == scene.goal
    else:
        agent, moved = _advance(scene, agent, a_agent)

    attacker, _ = _advance(scene, state.attacker, pos)
    if state.attacker_present:
        vol_index = volume_transition(state.vol_index, vol, cfg.volume_mode)
        attacker_cat = cat
    else:
        vol_index, attacker_cat = 0, state.attacker_cat

    d_prev = _shaping_distance(scene, state.agent.node, cfg)
    d_now = _shaping_distance(scene, agent.node, cfg)
    r = cfg.shaping_scale * (d_prev - d_now) + cfg.slack_reward
    if success:
        r += cfg.success_reward
    n_step = state.step + 1
    done = stopped or n_step >= cfg.max_steps
    new_state = replace(
        state,
        agent=agent,
        attacker=attacker,
        alpha=VOLUME_LEVELS[vol_index],
        vol_index=vol_index,
        attacker_cat=attacker_cat,
        step=n_step,
        prev_geodesic=geodesic_distance(scene, agent.node, scene.goal),
        path_length=state.path_length + (scene.resolution if moved else 0.0),
        done=done,
        success=success,
        last_action=int(a_agent),
    )
    return new_state, RewardPair(r, -r), done


# ---------------------------------------------------------------------------
# Episode specs (JSON lines)


@dataclass(frozen=True)
class EpisodeSpec:
    scene: str
    episode_seed: int
    attacker_mode: str = "clean"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def write_episode_specs(path, specs) -> None:
    with open(path, "w") as fh:
        for spec in specs:
            fh.write(spec.to_json() + "\n")


def read_episode_specs(path) -> list[EpisodeSpec]:
    specs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                specs.append(EpisodeSpec(str(data["scene"]), int(data["episode_seed"]), str(data.get("attacker_mode", "clean"))))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed episode spec ({exc})") from exc
    return specs


@dataclass(frozen=True)
class ScenePool:
    """A fixed, seed-derived collection of scenes shared by all workers."""

    scenes: tuple[Scene, ...] = field(default_factory=tuple)

    @classmethod
    def generate(cls, seed: int, size: int, width: int = 10, height: int = 10, density: float = 0.2, resolution: float = 1.0):
        seeds = np.random.SeedSequence(seed).generate_state(size)
        return cls(tuple(generate_scene(int(s), width, height, density, resolution) for s in seeds))

    def __len__(self) -> int:
        return len(self.scenes)

    def __getitem__(self, i: int) -> Scene:
        return self.scenes[i]
