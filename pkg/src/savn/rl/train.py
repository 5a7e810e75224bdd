"""Training loop, learning curves and checkpoints."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from savn.config import RunConfig, code_version
from savn.env import GameSetup, VecEnv, build_setup
from savn.nn import load_store_arrays, read_checkpoint, store_to_arrays, write_checkpoint
from savn.rl.rollout import PolicySet, RolloutState, rollout, update
from savn.world import AttackerSpec, parse_env_spec

CURVE_FIELDS = (
    "iteration",
    "env_steps",
    "episodes",
    "mean_episode_reward_agent",
    "mean_episode_reward_attacker",
    "spl_online",
    "success_rate_online",
    "entropy_agent",
    "entropy_pos",
    "entropy_vol",
    "entropy_cat",
    "loss_agent",
    "loss_pos",
    "loss_vol",
    "loss_cat",
    "loss_attacker",
    "loss_total",
    "total_critic",
    "grad_norm",
)


def setup_from_config(cfg: RunConfig) -> GameSetup:
    return build_setup(cfg.scene, cfg.bank, cfg.world, cfg.visual, cfg.audio)


def training_attacker(cfg: RunConfig) -> AttackerSpec:
    """Attacker specification implied by the training mode, validated against ``train.env``."""
    mode, env = cfg.train.mode, cfg.train.env
    spec = parse_env_spec(env)
    if mode == "avn":
        if spec.present:
            raise ValueError(f"train mode avn trains in the clean environment; train.env is {env!r}")
        return spec
    if not spec.present:
        raise ValueError(f"train mode {mode} needs an attacker; train.env is 'clean'")
    if mode in ("saavn", "idl") and not spec.learned_heads:
        raise ValueError(f"train mode {mode} needs at least one learned attacker head; got {env!r}")
    if mode == "fixed" and (spec.learned_heads or "random" in (spec.pos, spec.vol, spec.cat)):
        raise ValueError(f"train mode fixed needs an all-fixed attacker; got {env!r}")
    if mode == "random" and spec.learned_heads:
        raise ValueError(f"train mode random needs a non-learned attacker; got {env!r}")
    return spec


def spl_of(episodes) -> float:
    if not episodes:
        return float("nan")
    return float(np.mean([e.success * e.shortest_path / max(e.executed_path, e.shortest_path) for e in episodes]))


@dataclass
class TrainResult:
    out_dir: Path
    checkpoints: list[Path] = field(default_factory=list)
    curve: Path | None = None
    rows: list[dict] = field(default_factory=list)
    policies: PolicySet | None = None


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def save_checkpoint(path, cfg: RunConfig, policies: PolicySet, iteration: int, env_steps: int, rng_state: dict | None = None) -> None:
    arrays = {}
    for name, net in policies.nets().items():
        arrays.update(store_to_arrays(net.store, name))
    meta = {
        "code_version": code_version(),
        "config": cfg.to_ini(),
        "iteration": iteration,
        "env_steps": env_steps,
        "heads": {name: net.heads for name, net in policies.nets().items()},
        "adam_steps": {name: net.store.step for name, net in policies.nets().items()},
        "rng": rng_state or {},
    }
    write_checkpoint(path, arrays, cfg.digest(), meta)


def load_checkpoint(path):
    """Returns ``(cfg, policies, meta)`` rebuilt from a checkpoint file."""
    arrays, digest, meta = read_checkpoint(path)
    cfg = RunConfig.from_ini(meta["config"], source=f"{path}[config]")
    if cfg.digest() != digest:
        raise ValueError(f"{path}: embedded config does not match its digest")
    setup = setup_from_config(cfg)
    policies = PolicySet(setup, cfg.model, training_attacker(cfg), cfg.run.seed)
    for name, net in policies.nets().items():
        if dict(meta["heads"].get(name, {})) != net.heads:
            raise ValueError(f"{path}: network {name} heads {meta['heads'].get(name)} != {net.heads}")
        load_store_arrays(net.store, arrays, name, meta["adam_steps"][name])
    return cfg, policies, meta


def train(cfg: RunConfig, out_dir=None, progress=None) -> TrainResult:
    """Alternate rollouts and PPO updates until ``train.total_steps`` env steps.

    Modes: ``saavn`` (joint update of agent and attacker), ``avn`` (clean
    environment, no attacker network), ``fixed``/``random`` (agent against a
    scripted attacker) and ``idl`` (agent and attacker updated in alternating
    iterations, each with its own loss and gradient clip).
    """
    attacker = training_attacker(cfg)
    out = Path(out_dir if out_dir is not None else cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    setup = setup_from_config(cfg)
    policies = PolicySet(setup, cfg.model, attacker, cfg.run.seed)
    venv = VecEnv(setup, attacker, cfg.train.n_envs, cfg.run.seed)
    rngs = {"agent": np.random.default_rng([cfg.run.seed, 100]), "attacker": np.random.default_rng([cfg.run.seed, 101])}
    state = RolloutState.start(venv, policies)
    T = cfg.ppo.num_steps
    n_iter = -(-cfg.train.total_steps // (T * cfg.train.n_envs))
    result = TrainResult(out, policies=policies)
    result.curve = out / "curve.csv"
    cfg.save(out / "config.cfg")

    def rng_state():
        return {"envs": venv.rng_states(), **{k: g.bit_generator.state for k, g in rngs.items()}}

    with open(result.curve, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        for it in range(1, n_iter + 1):
            batch, episodes = rollout(venv, policies, T, state, rngs)
            if cfg.train.mode == "idl":
                players = ("agent",) if it % 2 == 1 else ("attacker",)
                stats = update(policies, batch, cfg.ppo, players=players, joint=False)
            else:
                stats = update(policies, batch, cfg.ppo, joint=True)
            row = {k: stats.get(k, float("nan")) for k in CURVE_FIELDS}
            row.update(
                iteration=it,
                env_steps=it * T * cfg.train.n_envs,
                episodes=len(episodes),
                mean_episode_reward_agent=float(np.mean([e.reward_agent for e in episodes])) if episodes else float("nan"),
                mean_episode_reward_attacker=float(np.mean([e.reward_attacker for e in episodes])) if episodes else float("nan"),
                spl_online=spl_of(episodes),
                success_rate_online=float(np.mean([e.success for e in episodes])) if episodes else float("nan"),
            )
            writer.writerow({k: _fmt(v) for k, v in row.items()})
            fh.flush()
            result.rows.append(row)
            if progress is not None:
                progress(row)
            every = cfg.train.checkpoint_every
            if (every and it % every == 0) or it == n_iter:
                path = out / f"ckpt_{it:06d}.ckpt"
                save_checkpoint(path, cfg, policies, it, row["env_steps"], rng_state())
                result.checkpoints.append(path)
    return result


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (float(v) if v not in ("", None) else float("nan")) for k, v in r.items()} for r in rows]
