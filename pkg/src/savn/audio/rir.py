"""First-order geometric binaural impulse responses on a grid scene.

Direct path: delay ``distance / c`` (rounded to samples), gain
``1 / max(1, distance)``, attenuated by a fixed factor when the straight line
between source and listener crosses a wall cell. The binaural split is a
constant-power interaural level difference driven by the source bearing
relative to the listener heading. An optional image source mirrors the
emitter across the nearest outer wall of the room.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from savn.world import Heading, Pose, Scene, WallError

_HEADING_VECTORS = {Heading.N: (0.0, 1.0), Heading.E: (1.0, 0.0), Heading.S: (0.0, -1.0), Heading.W: (-1.0, 0.0)}


@dataclass(frozen=True)
class RirConfig:
    speed_of_sound: float = 343.0
    ild: float = 0.6
    wall_attenuation: float = 0.3
    reflection: bool = False
    reflection_coeff: float = 0.5
    rear_attenuation: float = 0.0
    unit_impulse: bool = False

    def __post_init__(self):
        if not 0.0 <= self.ild < 1.0:
            raise ValueError("ild must lie in [0, 1)")
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    left: np.ndarray
    right: np.ndarray
    source_node: tuple[int, int]
    listener_node: tuple[int, int]
    listener_heading: Heading

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ValueError("impulse response channels must have equal length")

    def __len__(self) -> int:
        return self.left.size

    @property
    def channels(self) -> np.ndarray:
        return np.stack([self.left, self.right])


def _xy(node) -> tuple[float, float]:
    # x grows with column, y grows northward (decreasing row)
    return float(node[1]), float(-node[0])


def relative_bearing(source_xy, listener_xy, heading: Heading) -> float:
    """Angle of the source seen from the listener, counter-clockwise from the
    heading (positive = to the listener's left)."""
    dx, dy = source_xy[0] - listener_xy[0], source_xy[1] - listener_xy[1]
    if dx == 0.0 and dy == 0.0:
        return 0.0
    hx, hy = _HEADING_VECTORS[Heading(heading)]
    return math.atan2(hx * dy - hy * dx, hx * dx + hy * dy)


def line_of_sight(scene: Scene, a, b, samples_per_cell: int = 8) -> bool:
    """True when the segment between cell centres ``a`` and ``b`` touches no wall."""
    (r0, c0), (r1, c1) = a, b
    n = max(abs(r1 - r0), abs(c1 - c0)) * samples_per_cell
    if n == 0:
        return True
    t = np.linspace(0.0, 1.0, n + 1)
    rows = np.rint(r0 + (r1 - r0) * t).astype(int)
    cols = np.rint(c0 + (c1 - c0) * t).astype(int)
    return not scene.walls[rows, cols].any()


def binaural_gains(gain: float, bearing: float, cfg: RirConfig) -> tuple[float, float]:
    shadow = 1.0 - cfg.rear_attenuation * (1.0 - math.cos(bearing)) / 2.0
    s = math.sin(bearing)
    g = gain * shadow
    return g * math.sqrt(1.0 + cfg.ild * s), g * math.sqrt(1.0 - cfg.ild * s)


def _image_source(scene: Scene, source_xy) -> tuple[float, float]:
    """Mirror the source across the nearest outer wall of the room."""
    x, y = source_xy
    # outer walls sit half a cell outside the border cells
    candidates = [
        (x + 0.5, (-1.0 - x, y)),  # west wall at x = -0.5
        ((scene.width - 0.5) - x, (2 * (scene.width - 0.5) - x, y)),
        (-y + 0.5, (x, 1.0 - y)),  # north wall at y = 0.5
        (y + (scene.height - 0.5), (x, -2 * (scene.height - 0.5) - y)),
    ]
    return min(candidates, key=lambda c: c[0])[1]


def synth_rir(scene: Scene, source, listener_pose: Pose, cfg: RirConfig | None = None, sample_rate: int = 8000) -> ImpulseResponse:
    """Binaural impulse response from ``source`` to ``listener_pose``."""
    cfg = cfg or RirConfig()
    return _synth_cached(scene, tuple(source), Pose(tuple(listener_pose[0]), Heading(listener_pose[1])), cfg, int(sample_rate))


@lru_cache(maxsize=65536)
def _synth_cached(scene: Scene, source, pose: Pose, cfg: RirConfig, sample_rate: int) -> ImpulseResponse:
    if not scene.is_free(source):
        raise WallError(f"source {source} is not a navigable node")
    if not scene.is_free(pose.node):
        raise WallError(f"listener {pose.node} is not a navigable node")
    if cfg.unit_impulse:
        one = np.ones(1)
        one.setflags(write=False)
        return ImpulseResponse(one, one, source, pose.node, pose.heading)

    src_xy, lst_xy = _xy(source), _xy(pose.node)
    paths = []
    d = math.dist(src_xy, lst_xy) * scene.resolution
    gain = 1.0 / max(1.0, d)
    if not line_of_sight(scene, source, pose.node):
        gain *= cfg.wall_attenuation
    paths.append((d, gain, relative_bearing(src_xy, lst_xy, pose.heading)))
    if cfg.reflection:
        img = _image_source(scene, src_xy)
        d_img = math.dist(img, lst_xy) * scene.resolution
        paths.append((d_img, cfg.reflection_coeff / max(1.0, d_img), relative_bearing(img, lst_xy, pose.heading)))

    delays = [int(round(dist / cfg.speed_of_sound * sample_rate)) for dist, _, _ in paths]
    left = np.zeros(max(delays) + 1)
    right = np.zeros_like(left)
    for k, (_, g, bearing) in zip(delays, paths):
        gl, gr = binaural_gains(g, bearing, cfg)
        left[k] += gl
        right[k] += gr
    left.setflags(write=False)
    right.setflags(write=False)
    return ImpulseResponse(left, right, source, pose.node, pose.heading)
