"""Configuration files, overrides and digests."""

from __future__ import annotations

import pytest

from savn.config import ConfigError, RunConfig, code_version, parse_override


def test_defaults_round_trip_through_ini(tmp_path):
    cfg = RunConfig()
    path = tmp_path / "run.cfg"
    cfg.save(path)
    back = RunConfig.load(path)
    assert back == cfg and back.digest() == cfg.digest()


def test_digest_tracks_every_setting():
    base = RunConfig()
    assert base.digest() == RunConfig().digest()
    assert len(base.digest()) == 64
    changed = base.with_overrides([("audio.ild", "0.5")])
    assert changed.digest() != base.digest()


def test_overrides_parse_by_type():
    cfg = RunConfig().with_overrides([
        ("run.seed", "7"), ("train.total_steps", "1_000"), ("ppo.w_agent", "1/2"),
        ("eval.greedy", "off"), ("train.env", "pvc_fix,v=0.3"), ("ppo.lr", "1e-3"),
    ])
    assert cfg.run.seed == 7 and cfg.train.total_steps == 1000
    assert cfg.ppo.w_agent == 0.5 and cfg.eval.greedy is False
    assert cfg.train.env == "pvc_fix,v=0.3" and cfg.ppo.lr == 1e-3


@pytest.mark.parametrize(
    "pairs,match",
    [
        ([("nosuch.key", "1")], "unknown section"),
        ([("run.nokey", "1")], "unknown key"),
        ([("run.seed", "abc")], "bad value"),
        ([("eval.greedy", "maybe")], "bad value"),
        ([("train.mode", "other")], "invalid \\[train\\]"),
        ([("ppo.w_agent", "0.9")], "invalid \\[ppo\\]"),
        ([("model.fusion", "sum")], "invalid \\[model\\]"),
    ],
)
def test_bad_overrides_are_rejected(pairs, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig().with_overrides(pairs)


def test_ini_errors_name_their_source(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[run]\nseed = x\n")
    with pytest.raises(ConfigError, match="bad.cfg"):
        RunConfig.load(path)
    path.write_text("no section header\n")
    with pytest.raises(ConfigError):
        RunConfig.load(path)
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "missing.cfg")


def test_partial_file_keeps_defaults():
    cfg = RunConfig.from_ini("[ppo]\nlr = 0.001\n")
    assert cfg.ppo.lr == 0.001 and cfg.ppo.clip == RunConfig().ppo.clip


def test_parse_override():
    assert parse_override(" a.b = c=d ") == ("a.b", "c=d")
    for bad in ("novalue", "=x"):
        with pytest.raises(ConfigError):
            parse_override(bad)


def test_code_version_string():
    assert code_version().startswith("savn ")


@pytest.mark.parametrize("name", ["desk", "paper-scale"])
def test_presets_load_and_build(name):
    from pathlib import Path

    from savn.nn import parameter_count
    from savn.rl.train import training_attacker

    cfg = RunConfig.load(Path(__file__).resolve().parents[1] / "presets" / f"{name}.cfg")
    training_attacker(cfg)
    shape = cfg.audio.feature_shape
    assert all(n > 0 for n in shape) and shape[-1] == 2
    assert parameter_count(cfg.model, cfg.visual.n_rays, int(shape[0] * shape[1] * shape[2]), {"agent": 4}) > 0
