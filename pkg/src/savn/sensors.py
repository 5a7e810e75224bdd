"""Egocentric observations: a depth-ray scan plus a binaural spectrogram."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from savn.audio.bank import SoundBank
from savn.audio.rir import RirConfig, synth_rir
from savn.audio.signal import (
    Spectrogram,
    SpectrogramConfig,
    convolve,
    fit_length,
    magnitude_features,
    mix_attack,
    stft,
)
from savn.world import EpisodeState, Heading, Pose, Scene

OBS_MAGIC = b"SAVNOBS\x00"
OBS_VERSION = 1
_OBS_HEADER = struct.Struct("<8sIIIIII")  # magic, version, n_steps, n_rays, F, T, C

_RAY_STEP = 1.0 / 32.0


@dataclass(frozen=True)
class VisualConfig:
    n_rays: int = 16
    max_range: float = 10.0
    noise_std: float = 0.0
    blind: bool = False
    fov_degrees: float = 180.0

    def __post_init__(self):
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")
        if not math.isfinite(self.noise_std) or self.noise_std < 0:
            raise ValueError("noise_std must be finite and >= 0")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 8000
    chunk_seconds: float = 0.5
    window: int = 64
    hop: int = 16
    downsample: int = 4
    log: bool = True
    center: bool = False
    speed_of_sound: float = 343.0
    ild: float = 0.6
    wall_attenuation: float = 0.3
    reflection: bool = False
    reflection_coeff: float = 0.5
    rear_attenuation: float = 0.0
    unit_impulse: bool = False

    @property
    def chunk_samples(self) -> int:
        return int(round(self.sample_rate * self.chunk_seconds))

    @property
    def spectrogram(self) -> SpectrogramConfig:
        return SpectrogramConfig(self.window, self.hop, self.downsample, self.log, self.center)

    @property
    def rir(self) -> RirConfig:
        return RirConfig(
            self.speed_of_sound,
            self.ild,
            self.wall_attenuation,
            self.reflection,
            self.reflection_coeff,
            self.rear_attenuation,
            self.unit_impulse,
        )

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        return self.spectrogram.output_shape(self.chunk_samples, channels=2)


@dataclass(eq=False)
class Observation:
    visual: np.ndarray
    audio: Spectrogram
    stft: np.ndarray | None = None


@lru_cache(maxsize=32768)
def _clean_scan(scene: Scene, pose: Pose, n_rays: int, max_range: float, fov_degrees: float) -> np.ndarray:
    r0, c0 = pose.node
    heading_angle = math.pi / 2 - Heading(pose.heading) * math.pi / 2  # N = +y
    half = math.radians(fov_degrees) / 2
    offsets = np.linspace(half, -half, n_rays) if n_rays > 1 else np.zeros(1)
    angles = heading_angle + offsets
    t = np.arange(1, int(math.ceil(max_range / _RAY_STEP)) + 1) * _RAY_STEP
    xs = c0 + np.cos(angles)[:, None] * t
    ys = -r0 + np.sin(angles)[:, None] * t
    rows = np.rint(-ys).astype(int)
    cols = np.rint(xs).astype(int)
    inside = (rows >= 0) & (rows < scene.height) & (cols >= 0) & (cols < scene.width)
    blocked = ~inside
    blocked[inside] = scene.walls[rows[inside], cols[inside]]
    hit = blocked.any(axis=1)
    first = blocked.argmax(axis=1)
    # distance to the centre of the first blocking cell along the ray
    depth = np.where(hit, t[first] + 0.5, max_range)
    scan = np.minimum(depth, max_range) / max_range
    scan.setflags(write=False)
    return scan


def render_visual(scene: Scene, pose: Pose, cfg: VisualConfig | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Normalized depth scan fanned across the field of view (left to right)."""
    cfg = cfg or VisualConfig()
    if cfg.blind:
        return np.zeros(cfg.n_rays)
    pose = Pose(tuple(pose[0]), Heading(pose[1]))
    scan = _clean_scan(scene, pose, cfg.n_rays, float(cfg.max_range), float(cfg.fov_degrees)).copy()
    if cfg.noise_std > 0:
        if rng is None:
            raise ValueError("visual noise requires an rng")
        scan += rng.normal(0.0, cfg.noise_std, scan.shape)
    return scan


def _render_source(scene: Scene, source, pose: Pose, dry: np.ndarray, acfg: AudioConfig) -> np.ndarray:
    ir = synth_rir(scene, source, pose, acfg.rir, acfg.sample_rate)
    n = acfg.chunk_samples
    return np.stack([fit_length(convolve(dry, ir.left), n), fit_length(convolve(dry, ir.right), n)])


def render_sources(scene: Scene, state: EpisodeState, bank: SoundBank, acfg: AudioConfig | None = None):
    """Target and attacker renders at the agent's ears, before mixing."""
    acfg = acfg or AudioConfig()
    target = _render_source(scene, scene.goal, state.agent, bank[state.target_cat].samples, acfg)
    attacker = _render_source(scene, state.attacker.node, state.agent, bank[state.attacker_cat].samples, acfg)
    return target, attacker


def render_audio(scene: Scene, state: EpisodeState, bank: SoundBank, acfg: AudioConfig | None = None) -> np.ndarray:
    """Binaural ``(2, chunk)`` signal heard by the agent."""
    acfg = acfg or AudioConfig()
    if state.done:
        raise ValueError("cannot render audio for a finished episode")
    target = _render_source(scene, scene.goal, state.agent, bank[state.target_cat].samples, acfg)
    alpha = state.alpha if state.attacker_present else 0.0
    if alpha == 0.0:
        bank[state.attacker_cat]  # category must still be valid
        attacker = np.zeros_like(target)
    else:
        attacker = _render_source(scene, state.attacker.node, state.agent, bank[state.attacker_cat].samples, acfg)
    return mix_attack(target, attacker, alpha)


def make_observation(
    scene: Scene,
    state: EpisodeState,
    bank: SoundBank,
    vcfg: VisualConfig | None = None,
    acfg: AudioConfig | None = None,
    rng: np.random.Generator | None = None,
    keep_stft: bool = False,
) -> Observation:
    vcfg = vcfg or VisualConfig()
    acfg = acfg or AudioConfig()
    visual = render_visual(scene, state.agent, vcfg, rng)
    sc = acfg.spectrogram
    spec = stft(render_audio(scene, state, bank, acfg), sc.window, sc.hop, sc.center)
    return Observation(visual, Spectrogram(magnitude_features(spec, sc), sc), spec if keep_stft else None)


def save_observations(path, observations) -> None:
    """Dump a sequence of observations (visual + spectrogram) for replay."""
    observations = list(observations)
    if not observations:
        raise ValueError("nothing to save")
    n_rays = observations[0].visual.size
    shape = observations[0].audio.magnitudes.shape
    with open(path, "wb") as fh:
        fh.write(_OBS_HEADER.pack(OBS_MAGIC, OBS_VERSION, len(observations), n_rays, *shape))
        for obs in observations:
            if obs.visual.size != n_rays or obs.audio.magnitudes.shape != shape:
                raise ValueError("observation shapes must be constant across a dump")
            fh.write(np.asarray(obs.visual, dtype="<f8").tobytes())
            fh.write(np.asarray(obs.audio.magnitudes, dtype="<f8").tobytes())


def load_observations(path) -> list[tuple[np.ndarray, np.ndarray]]:
    data = Path(path).read_bytes()
    magic, version, n, n_rays, f, t, c = _OBS_HEADER.unpack_from(data, 0)
    if magic != OBS_MAGIC:
        raise ValueError(f"{path}: not an observation dump")
    if version != OBS_VERSION:
        raise ValueError(f"{path}: unsupported observation dump version {version}")
    per = n_rays + f * t * c
    flat = np.frombuffer(data, dtype="<f8", offset=_OBS_HEADER.size)
    if flat.size != n * per:
        raise ValueError(f"{path}: truncated observation dump")
    flat = flat.reshape(n, per).astype(np.float64)
    return [(row[:n_rays].copy(), row[n_rays:].reshape(f, t, c).copy()) for row in flat]
