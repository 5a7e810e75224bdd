"""Run configuration: one INI-style file, dotted-path overrides and a content digest.

Each section of the file maps to one settings dataclass; keys are the
dataclass field names. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from savn import __version__
from savn.env import BankConfig, SceneConfig
from savn.nn import EncoderConfig
from savn.rl.ppo import PpoConfig
from savn.sensors import AudioConfig, VisualConfig
from savn.world import WorldConfig

TRAIN_MODES = ("saavn", "avn", "fixed", "random", "idl")


class ConfigError(ValueError):
    """Invalid configuration file, key or value."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "runs"


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "saavn"
    env: str = "pvc"
    total_steps: int = 500_000
    n_envs: int = 4
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"train mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.n_envs < 1 or self.total_steps < 1:
            raise ValueError("n_envs and total_steps must be positive")


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 100
    n_runs: int = 5
    seed: int = 2024
    greedy: bool = True
    batch: int = 16


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    scene: SceneConfig = field(default_factory=SceneConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    visual: VisualConfig = field(default_factory=VisualConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    # -- serialization -------------------------------------------------

    def as_dict(self) -> dict:
        return {f.name: dataclasses.asdict(getattr(self, f.name)) for f in fields(self)}

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of every setting."""
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, values in self.as_dict().items():
            cp[section] = {k: _format(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, source: str = "<string>") -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        pairs = [(f"{s}.{k}", v) for s in cp.sections() for k, v in cp[s].items()]
        return cls().with_overrides(pairs, source=source)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_ini(path.read_text(), source=str(path))

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())

    # -- overrides -----------------------------------------------------

    def with_overrides(self, pairs, source: str = "override") -> "RunConfig":
        """Apply ``(dotted_key, text_value)`` pairs; values are parsed by field type."""
        sections = {f.name: dataclasses.asdict(getattr(self, f.name)) for f in fields(self)}
        for key, text in pairs:
            section, _, name = key.partition(".")
            if section not in sections or not name:
                raise ConfigError(f"{source}: unknown section in key {key!r}")
            if name not in sections[section]:
                raise ConfigError(f"{source}: unknown key {key!r}")
            sections[section][name] = _parse(text, _field_type(type(getattr(self, section)), name), key, source)
        built = {}
        for f in fields(self):
            cls = type(getattr(self, f.name))
            try:
                built[f.name] = cls(**sections[f.name])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{source}: invalid [{f.name}] settings: {exc}") from None
        return replace(self, **built)


def _field_type(cls, name):
    return typing.get_type_hints(cls)[name]


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, typ, key, source):
    text = str(text).strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if typ is int:
            return int(text.replace("_", ""))
        if typ is float:
            return float(_fraction(text))
        return text
    except ValueError as exc:
        raise ConfigError(f"{source}: bad value for {key}: {exc}") from None


def _fraction(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {text!r}")
    return key.strip(), value.strip()


def code_version() -> str:
    return f"savn {__version__}"
