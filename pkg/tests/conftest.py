from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from savn.audio.bank import build_sound_bank
from savn.config import RunConfig
from savn.env import build_setup
from savn.world import Scene, generate_scene

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def scene() -> Scene:
    return generate_scene(7, 10, 10, 0.2)


@pytest.fixture(scope="session")
def open_scene() -> Scene:
    return Scene(tuple("." * 6 for _ in range(6)), (2, 3))


@pytest.fixture(scope="session")
def bank():
    return build_sound_bank(99, 8, 16e6, 8000, 4000)


def small_config(**overrides) -> RunConfig:
    """A fast configuration for unit tests: short chunks, small pool and nets."""
    base = {
        "scene.pool_size": "6",
        "audio.chunk_seconds": "0.05",
        "model.visual_hidden": "8",
        "model.audio_hidden": "8",
        "model.gru_hidden": "8",
        "ppo.num_steps": "12",
        "train.n_envs": "2",
        "train.total_steps": "48",
        "world.max_steps": "20",
        "eval.n_episodes": "6",
        "eval.n_runs": "2",
        "eval.batch": "4",
    }
    base.update({k: str(v) for k, v in overrides.items()})
    return RunConfig().with_overrides(list(base.items()))


@pytest.fixture(scope="session")
def small_setup():
    cfg = small_config()
    return build_setup(cfg.scene, cfg.bank, cfg.world, cfg.visual, cfg.audio)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record_criterion(label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[str(label)] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("abc")), k)):
        passed, detail = ACCEPTANCE[label]
        terminalreporter.write_line(f"criterion {label:>3}: {'PASS' if passed else 'FAIL'}  {detail}")
