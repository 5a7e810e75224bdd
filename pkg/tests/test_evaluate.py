"""Evaluation, transfer matrices, sweeps and trajectory files."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from conftest import GOLDEN, small_config
from savn.eval.evaluate import (
    SWEEP_KINDS,
    Contender,
    default_seeds,
    episode_plan,
    evaluate,
    run_episodes,
    sweep,
    transfer_matrix,
    write_cells,
)
from savn.eval.trajectory import read_trajectory, render_frame, replay, write_trajectory
from savn.nn import EncoderConfig, PolicyNet
from savn.rl.train import setup_from_config, train
from savn.world import Scene, parse_env_spec


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A tiny SAAVN run and a tiny clean run sharing one configuration otherwise."""
    root = tmp_path_factory.mktemp("runs")
    saavn = train(small_config(), root / "saavn").checkpoints[-1]
    avn = train(small_config(**{"train.mode": "avn", "train.env": "clean"}), root / "avn").checkpoints[-1]
    return saavn, avn


def test_episode_plan_is_seeded():
    a = episode_plan(10, 5, 3)
    assert a == episode_plan(10, 5, 3) and a != episode_plan(10, 5, 4)
    assert all(0 <= s < 10 for s, _ in a)


def test_evaluate_is_repeatable(trained):
    contender, cfg = Contender.from_checkpoint(trained[0])
    setup = setup_from_config(cfg)
    a = evaluate(contender, setup, "pvc", 6, 2, [1, 2])
    b = evaluate(contender, setup, "pvc", 6, 2, [1, 2])
    assert a.as_dict() == b.as_dict()
    assert a.meta["agent_digest"] == cfg.digest()


def test_evaluate_leaves_checkpoint_untouched(trained):
    before = trained[0].read_bytes()
    contender, cfg = Contender.from_checkpoint(trained[0])
    evaluate(contender, setup_from_config(cfg), "clean", 4, 1, [0])
    assert trained[0].read_bytes() == before


def test_random_agent_stops_perfectly(small_setup):
    plan = episode_plan(len(small_setup.pool), 12, 0)
    for s in run_episodes(small_setup, parse_env_spec("clean"), plan, None):
        # the random baseline only fails by running out of steps
        assert s.success or s.steps == small_setup.world.max_steps


def test_evaluate_errors(small_setup, trained):
    contender, _ = Contender.from_checkpoint(trained[1])
    with pytest.raises(ValueError, match="learned attacker heads"):
        evaluate(contender, small_setup, "pvc", 2, 1, [0])
    with pytest.raises(ValueError, match="seeds"):
        evaluate(contender, small_setup, "clean", 2, 2, [0])
    odd = Contender("odd", PolicyNet(EncoderConfig(4, 4), 5, (2, 2, 2), {"agent": 4}))
    with pytest.raises(ValueError, match="expects observations"):
        evaluate(odd, small_setup, "clean", 2, 1, [0])


def test_transfer_matrix_with_error_cell(tmp_path, trained):
    saavn, cfg = Contender.from_checkpoint(trained[0], "saavn")
    avn, _ = Contender.from_checkpoint(trained[1], "avn")
    setup = setup_from_config(cfg)
    cells = transfer_matrix([saavn, avn], ["clean", "pvc"], setup, cfg)
    assert [(c["train"], c["test"]) for c in cells] == [("saavn", "clean"), ("saavn", "pvc"), ("avn", "clean"), ("avn", "pvc")]
    assert all("SPL" in c for c in cells[:3])
    # the clean-trained network has no attacker to drive a learned environment
    assert "error" in cells[3]
    cells = transfer_matrix([saavn, avn], ["clean", "pvc"], setup, cfg, attacker=saavn.attacker)
    assert all("error" not in c for c in cells)
    write_cells(cells, tmp_path / "t.csv", tmp_path / "t.json", {"config_digest": cfg.digest()})
    with open(tmp_path / "t.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and "SPL_std" in rows[0]
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["config_digest"] == cfg.digest() and doc["code_version"].startswith("savn")


def _row(rows, **match):
    return next(r for r in rows if all(r.get(k) == v for k, v in match.items()))


def test_attack_strength_zero_equals_clean(trained):
    for ckpt in trained:
        contender, cfg = Contender.from_checkpoint(ckpt)
        rows = sweep("attack_strength", contender, cfg)
        clean, zero = _row(rows, alpha="clean"), _row(rows, alpha=0.0)
        assert clean["report"]["runs"] == zero["report"]["runs"]
        assert [r["alpha"] for r in rows] == ["clean", 0.0, 0.1, 0.3, 0.5, 0.7, 0.9]


def test_unseen_sweep_uses_disjoint_categories(trained):
    contender, cfg = Contender.from_checkpoint(trained[0])
    rows = sweep("unseen_categories", contender, cfg)
    seen = set(_row(rows, categories="seen")["ids"].split())
    unseen = set(_row(rows, categories="unseen")["ids"].split())
    assert seen and unseen and not seen & unseen
    assert all("error" not in r for r in rows)


@pytest.mark.parametrize("kind", [k for k in SWEEP_KINDS if k not in ("attack_strength", "unseen_categories")])
def test_other_sweeps_run(trained, kind):
    contender, cfg = Contender.from_checkpoint(trained[1])
    cfg = cfg.with_overrides([("eval.n_episodes", "3"), ("eval.n_runs", "1")])
    rows = sweep(kind, contender, cfg)
    assert rows and all("error" not in r for r in rows), rows


def test_unknown_sweep_kind(trained):
    contender, cfg = Contender.from_checkpoint(trained[1])
    with pytest.raises(ValueError, match="unknown sweep"):
        sweep("nope", contender, cfg)


def test_default_seeds():
    cfg = small_config(**{"eval.seed": 10, "eval.n_runs": 3})
    assert default_seeds(cfg) == [10, 11, 12]


# -- trajectories ----------------------------------------------------------------

FIXTURE_SCENE = Scene(("....", ".#..", "....", "...."), (0, 3))
FIXTURE_STEPS = [
    {"step": 0, "agent": [2, 3, "N"], "attacker": [3, 0, "E"], "alpha": 0.0, "category": 1, "reward": None, "done": False},
    {"step": 1, "agent": [1, 3, "N"], "attacker": [3, 1, "E"], "alpha": 0.3, "category": 1, "reward": 0.99, "done": False},
    {"step": 2, "agent": [0, 3, "N"], "attacker": [3, 2, "E"], "alpha": 0.3, "category": 2, "reward": 0.99, "done": False},
    {"step": 3, "agent": [0, 3, "N"], "attacker": [2, 2, "N"], "alpha": 0.4, "category": 2, "reward": 9.99, "done": True},
]


def test_replay_matches_golden_render(tmp_path):
    path = tmp_path / "fixture.jsonl"
    write_trajectory(path, FIXTURE_SCENE, FIXTURE_STEPS, "0" * 64, {"env": "pvc"})
    text = replay(path)
    assert text == (GOLDEN / "replay_fixture.txt").read_text()
    assert text.rstrip().splitlines()[-5].endswith("done  agent on goal")


def test_single_step_trajectory_is_one_frame(tmp_path):
    path = tmp_path / "one.jsonl"
    write_trajectory(path, FIXTURE_SCENE, FIXTURE_STEPS[:1], "0" * 64)
    assert replay(path).count("step ") == 1


def test_trajectory_round_trip_and_errors(tmp_path):
    path = tmp_path / "t.jsonl"
    write_trajectory(path, FIXTURE_SCENE, FIXTURE_STEPS, "ab" * 32, {"episode_seed": 5})
    header, scene, steps = read_trajectory(path)
    assert scene == FIXTURE_SCENE and steps == FIXTURE_STEPS
    assert header["config_digest"] == "ab" * 32 and header["episode_seed"] == 5
    assert header["code_version"].startswith("savn")
    lines = path.read_text().splitlines()
    bad_pose = json.dumps({**FIXTURE_STEPS[1], "agent": [9, 9, "N"]})
    path.write_text("\n".join(lines[:2] + [bad_pose]) + "\n")
    with pytest.raises(ValueError, match=":3:"):
        read_trajectory(path)
    path.write_text("\n".join(lines[:2] + ["{not json"]) + "\n")
    with pytest.raises(ValueError, match=":3:"):
        read_trajectory(path)
    path.write_text(json.dumps({"format": "other"}) + "\n")
    with pytest.raises(ValueError, match=":1:"):
        read_trajectory(path)
    path.write_text("")
    with pytest.raises(ValueError, match=":1:"):
        read_trajectory(path)


def test_recorded_episode_replays(tmp_path, trained):
    contender, cfg = Contender.from_checkpoint(trained[0])
    setup = setup_from_config(cfg)
    plan = episode_plan(len(setup.pool), 1, 0)
    (s,) = run_episodes(setup, parse_env_spec("pvc"), plan, contender.net, contender.attacker, keep_trajectories=True)
    path = tmp_path / "ep.jsonl"
    write_trajectory(path, setup.pool[s.scene_index], s.trajectory, cfg.digest())
    frames = replay(path).strip().split("\n\n")
    assert len(frames) == s.steps + 1
    assert frames[-1].splitlines()[0].find("done") > 0


def test_render_frame_marks():
    frame = render_frame(FIXTURE_SCENE, FIXTURE_STEPS[1])
    rows = frame.splitlines()[1:]
    assert rows[0][3] == "G" and rows[1][3] == "^" and rows[3][1] == "X" and rows[1][1] == "#"
