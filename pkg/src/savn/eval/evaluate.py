"""Policy evaluation, transfer matrices and ablation sweeps."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from savn.config import RunConfig, code_version
from savn.env import Env, GameSetup
from savn.eval.metrics import METRICS, EpisodeRecord, MetricsReport, compute_metrics
from savn.nn import PolicyNet, log_softmax, sample
from savn.rl.baselines import RandomAgent
from savn.rl.train import load_checkpoint, setup_from_config
from savn.world import AttackerSpec, parse_env_spec

SWEEP_KINDS = ("attack_strength", "volume_ablation", "env_complexity", "unseen_categories", "visual_noise", "blindness")
ATTACK_STRENGTHS = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
NOISE_STDS = (0.0, 0.01, 0.05)


@dataclass
class Contender:
    """An agent to evaluate: a network, or ``None`` for the random baseline."""

    label: str
    net: PolicyNet | None
    attacker: PolicyNet | None = None
    digest: str = ""

    @classmethod
    def from_checkpoint(cls, path, label: str | None = None) -> tuple["Contender", RunConfig]:
        cfg, policies, _ = load_checkpoint(path)
        return cls(label or Path(path).stem, policies.agent, policies.attacker, cfg.digest()), cfg

    @classmethod
    def random(cls) -> "Contender":
        return cls("random", None)


def episode_plan(n_pool: int, n_episodes: int, seed: int) -> list[tuple[int, int]]:
    """Deterministic (scene index, episode seed) pairs for one evaluation run."""
    rng = np.random.default_rng([seed, 77])
    return [(int(rng.integers(n_pool)), int(rng.integers(2**31))) for _ in range(n_episodes)]


def run_episodes(
    setup: GameSetup,
    spec: AttackerSpec,
    plan,
    agent: PolicyNet | None,
    attacker: PolicyNet | None = None,
    greedy: bool = True,
    batch: int = 16,
    keep_trajectories: bool = False,
):
    """Play every planned episode to completion; returns EpisodeSummary objects in plan order.

    ``agent=None`` plays the random baseline with perfect stopping. Learned
    attacker heads named by ``spec`` are driven by ``attacker`` (sampled from
    a per-episode stream); all other heads follow their generators.
    """
    learned = spec.learned_heads
    if learned and (attacker is None or not set(learned) <= set(attacker.heads)):
        have = sorted(attacker.heads) if attacker is not None else []
        raise ValueError(f"environment needs learned attacker heads {list(learned)}, attacker provides {have}")
    out = []
    for start in range(0, len(plan), batch):
        chunk = plan[start:start + batch]
        envs = [Env(setup, spec, record_trajectory=keep_trajectories) for _ in chunk]
        obs = [env.reset(s, e) for env, (s, e) in zip(envs, chunk)]
        n = len(envs)
        visual = np.stack([o[0] for o in obs])
        audio = np.stack([o[1] for o in obs])
        h_ag = agent.initial_state(n) if agent is not None else None
        h_at = attacker.initial_state(n) if learned else None
        rand = [RandomAgent(np.random.default_rng([e, 4])) for _, e in chunk]
        att_rng = [np.random.default_rng([e, 5]) for _, e in chunk]
        act_rng = [np.random.default_rng([e, 6]) for _, e in chunk]
        active = list(range(n))
        results = [None] * n
        while active:
            idx = np.array(active)
            if agent is not None:
                logits, _, h_new = agent.act(visual[idx], audio[idx], h_ag[idx])
                h_ag[idx] = h_new
                if greedy:
                    actions = np.argmax(logits["agent"], axis=-1)
                else:
                    probs = np.exp(log_softmax(logits["agent"]))
                    actions = np.array([sample(probs[k:k + 1], act_rng[i])[0][0] for k, i in enumerate(active)])
            else:
                actions = np.array([rand[i](envs[i].scene, envs[i].state) for i in active])
            att_actions = [None] * len(active)
            if learned:
                logits_at, _, h_new = attacker.act(visual[idx], audio[idx], h_at[idx])
                h_at[idx] = h_new
                probs = {h: np.exp(log_softmax(logits_at[h])) for h in learned}
                att_actions = [{h: int(sample(probs[h][k:k + 1], att_rng[i])[0][0]) for h in learned} for k, i in enumerate(active)]
            still = []
            for k, i in enumerate(active):
                o, info = envs[i].step(int(actions[k]), att_actions[k])
                if info.done:
                    results[i] = info.record
                else:
                    visual[i], audio[i] = o
                    still.append(i)
            active = still
        out.extend(results)
    return out


def evaluate(
    contender: Contender,
    setup: GameSetup,
    env_spec: str,
    n_episodes: int = 100,
    n_runs: int = 5,
    seeds=None,
    attacker: PolicyNet | None = None,
    greedy: bool = True,
    batch: int = 16,
) -> MetricsReport:
    """Mean and std of the navigation metrics over ``n_runs`` fresh episode sets."""
    spec = parse_env_spec(env_spec)
    seeds = list(seeds) if seeds is not None else list(range(n_runs))
    if len(seeds) != n_runs:
        raise ValueError(f"need {n_runs} seeds, got {len(seeds)}")
    if contender.net is not None:
        n_rays, audio_shape = setup.obs_shapes
        if (contender.net.n_visual, contender.net.audio_shape) != (n_rays, audio_shape):
            raise ValueError(
                f"checkpoint expects observations {contender.net.n_visual}+{contender.net.audio_shape}, "
                f"environment gives {n_rays}+{audio_shape}"
            )
    runs = []
    for seed in seeds:
        plan = episode_plan(len(setup.pool), n_episodes, seed)
        summaries = run_episodes(setup, spec, plan, contender.net, attacker or contender.attacker, greedy, batch)
        runs.append(compute_metrics([EpisodeRecord.from_summary(s) for s in summaries]))
    return MetricsReport(runs, n_episodes, seeds, label=f"{contender.label}@{env_spec}",
                         meta={"env": env_spec, "agent": contender.label, "agent_digest": contender.digest})


def default_seeds(cfg: RunConfig) -> list[int]:
    return [cfg.eval.seed + r for r in range(cfg.eval.n_runs)]


def transfer_matrix(contenders, env_specs, setup: GameSetup, cfg: RunConfig, attacker: PolicyNet | None = None) -> list[dict]:
    """Evaluate every contender (rows) in every environment (columns).

    A cell that fails is kept with its error message instead of metrics.
    """
    cells = []
    for c in contenders:
        for env in env_specs:
            cell = {"train": c.label, "test": env}
            try:
                rep = evaluate(c, setup, env, cfg.eval.n_episodes, cfg.eval.n_runs, default_seeds(cfg), attacker, cfg.eval.greedy, cfg.eval.batch)
                cell.update(rep.row())
                cell["report"] = rep.as_dict()
            except Exception as exc:  # cell-level failure is reported, not fatal
                cell["error"] = f"{type(exc).__name__}: {exc}"
            cells.append(cell)
    return cells


def write_cells(cells, csv_path, json_path, meta: dict) -> None:
    """Plot-ready CSV (one row per cell) and nested JSON."""
    keys = []
    for c in cells:
        for k in c:
            if k != "report" and k not in keys:
                keys.append(k)
    for m in METRICS:
        for k in (m, f"{m}_std"):
            if k not in keys:
                keys.append(k)
    if "error" not in keys:
        keys.append("error")
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for c in cells:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in c.items() if k != "report"})
    doc = {"code_version": code_version(), **meta, "cells": cells}
    Path(json_path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def sweep(kind: str, contender: Contender, cfg: RunConfig, attacker: PolicyNet | None = None) -> list[dict]:
    """Grid of evaluations for one ablation family; returns one row per point."""
    if kind not in SWEEP_KINDS:
        raise ValueError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")
    base = setup_from_config(cfg)
    learned = attacker if attacker is not None else contender.attacker
    points: list[tuple[dict, GameSetup, str]] = []
    if kind == "attack_strength":
        points.append(({"alpha": "clean"}, base, "clean"))
        for a in ATTACK_STRENGTHS:
            env = f"pc,v={a}" if learned is not None else f"pvc_fix,v={a}"
            points.append(({"alpha": a}, base, env))
    elif kind == "volume_ablation":
        envs = ["pvc", "pvc_random"] if learned is not None else ["pvc_random"]
        for mode in ("skipping", "sliding"):
            s = replace(base, world=replace(base.world, volume_mode=mode))
            for env in envs:
                points.append(({"volume_mode": mode, "attacker": env}, s, env))
    elif kind == "env_complexity":
        envs = ["clean", "p", "pv", "pvc"] if learned is not None else ["clean", "pvc_fix", "pvc_random"]
        points.extend(({"environment": e}, base, e) for e in envs)
    elif kind == "unseen_categories":
        seen, unseen = base.seen, base.unseen
        if set(seen) & set(unseen):
            raise AssertionError("seen and unseen categories overlap")
        pairs = [("seen", "pvc"), ("unseen", "pv,c=unseen")] if learned is not None else [("seen", "pvc_random"), ("unseen", "pv_random,c=unseen")]
        for name, env in pairs:
            points.append(({"categories": name, "ids": " ".join(map(str, seen if name == "seen" else unseen))}, base, env))
    elif kind == "visual_noise":
        for std in NOISE_STDS:
            s = replace(base, visual=replace(base.visual, noise_std=std))
            for env in ("clean", "pvc" if learned is not None else "pvc_random"):
                points.append(({"noise_std": std, "environment": env}, s, env))
    elif kind == "blindness":
        for blind in (False, True):
            s = replace(base, visual=replace(base.visual, blind=blind))
            for env in ("clean", "pvc" if learned is not None else "pvc_random"):
                points.append(({"blind": blind, "environment": env}, s, env))

    rows = []
    seeds = default_seeds(cfg)
    for params, setup, env in points:
        row = {"sweep": kind, **params, "test": env}
        try:
            rep = evaluate(contender, setup, env, cfg.eval.n_episodes, cfg.eval.n_runs, seeds, learned, cfg.eval.greedy, cfg.eval.batch)
            row.update(rep.row())
            row["report"] = rep.as_dict()
        except Exception as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows

