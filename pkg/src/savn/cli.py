"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (arguments, config, files), 2 failure
while running.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from savn.config import ConfigError, RunConfig, code_version, parse_override


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 1."""


def _add_common(p: argparse.ArgumentParser, out_default: str | None = None) -> None:
    p.add_argument("--config", type=Path, help="INI-style run configuration file")
    p.add_argument("--seed", type=int, help="master seed (run.seed)")
    p.add_argument("--out", type=Path, default=out_default, help="output directory or file")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="dotted-path setting, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="savn", description="Sound-adversarial audio-visual navigation lab")
    parser.add_argument("--version", action="version", version=code_version())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train agent (and attacker) with PPO")
    _add_common(p)
    p.add_argument("--log-every", type=int, default=10)

    p = sub.add_parser("eval", help="evaluate one checkpoint in one environment")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint path, or 'random' for the random baseline")
    p.add_argument("--env", default="clean", help="environment spec, e.g. clean, pvc, pvc_random, 'pc,v=0.5'")
    p.add_argument("--attacker", help="checkpoint providing the learned attacker")
    p.add_argument("--trajectories", type=int, default=0, help="write this many episode trajectories (JSON lines)")

    p = sub.add_parser("transfer", help="train-env x test-env evaluation matrix")
    _add_common(p)
    p.add_argument("--checkpoints", required=True, help="comma-separated checkpoint paths ('random' allowed)")
    p.add_argument("--envs", required=True, help="comma-separated environment specs")
    p.add_argument("--attacker", help="checkpoint providing the learned attacker")

    p = sub.add_parser("sweep", help="ablation / robustness sweep")
    _add_common(p)
    p.add_argument("--kind", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attacker", help="checkpoint providing the learned attacker")

    p = sub.add_parser("verify-theory", help="numerical check of the bounded-intervention result")
    _add_common(p)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--fourier-trials", type=int, default=200)
    p.add_argument("--no-geometric", action="store_true", help="skip the synthesized-RIR comparison")

    p = sub.add_parser("replay", help="render a trajectory file as ASCII frames")
    p.add_argument("trajectory", type=Path)
    p.add_argument("--out", type=Path, help="write frames to this file instead of stdout")
    return parser


def _config(args, base: RunConfig | None = None) -> RunConfig:
    try:
        cfg = RunConfig.load(args.config) if args.config else (base or RunConfig())
        pairs = [parse_override(o) for o in args.override]
        if args.seed is not None:
            pairs.append(("run.seed", str(args.seed)))
        return cfg.with_overrides(pairs, source="command line")
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _load_contender(spec: str, label: str | None = None):
    from savn.eval.evaluate import Contender

    if spec == "random":
        return Contender.random(), None
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return Contender.from_checkpoint(path, label)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _attacker_net(path):
    if not path:
        return None
    contender, _ = _load_contender(path)
    if contender.attacker is None:
        raise UsageError(f"{path} holds no learned attacker")
    return contender.attacker


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    from savn.rl.train import train, training_attacker

    cfg = _config(args)
    try:
        training_attacker(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args, cfg.run.out)

    def progress(row):
        if row["iteration"] % max(args.log_every, 1) == 0:
            print(
                f"iter {row['iteration']} steps {row['env_steps']} "
                f"R_agent {row['mean_episode_reward_agent']:.3f} SPL {row['spl_online']:.3f} "
                f"loss {row['loss_total']:.4f}",
                flush=True,
            )

    result = train(cfg, out, progress)
    print(f"checkpoints: {', '.join(str(p) for p in result.checkpoints)}")
    print(f"learning curve: {result.curve}")
    print(f"config digest: {cfg.digest()}")
    return 0


def cmd_eval(args) -> int:
    from savn.eval.evaluate import default_seeds, episode_plan, evaluate, run_episodes, setup_from_config
    from savn.eval.trajectory import write_trajectory
    from savn.world import parse_env_spec

    contender, ck_cfg = _load_contender(args.checkpoint)
    cfg = _config(args, ck_cfg)
    attacker = _attacker_net(args.attacker)
    try:
        parse_env_spec(args.env)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    setup = setup_from_config(cfg)
    report = evaluate(contender, setup, args.env, cfg.eval.n_episodes, cfg.eval.n_runs, default_seeds(cfg), attacker, cfg.eval.greedy, cfg.eval.batch)
    out = _out_dir(args, str(Path(cfg.run.out) / "eval"))
    doc = {"code_version": code_version(), "config_digest": cfg.digest(), **report.as_dict()}
    (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(report.summary())
    if args.trajectories:
        plan = episode_plan(len(setup.pool), args.trajectories, default_seeds(cfg)[0])
        spec = parse_env_spec(args.env)
        summaries = run_episodes(setup, spec, plan, contender.net, attacker or contender.attacker, cfg.eval.greedy, keep_trajectories=True)
        for k, s in enumerate(summaries):
            write_trajectory(out / f"trajectory_{k:03d}.jsonl", setup.pool[s.scene_index], s.trajectory, cfg.digest(),
                             {"episode_seed": s.episode_seed, "env": args.env, "agent": contender.label})
    print(f"report: {out / 'report.json'}")
    return 0


def _split(text: str) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise UsageError("empty list")
    return items


def _split_envs(text: str) -> list[str]:
    """Split env specs on commas, keeping ``,v=``/``,c=`` options with their spec."""
    out: list[str] = []
    for tok in _split(text):
        if "=" in tok and out:
            out[-1] += "," + tok
        else:
            out.append(tok)
    return out


def cmd_transfer(args) -> int:
    from savn.eval.evaluate import setup_from_config, transfer_matrix, write_cells
    from savn.world import parse_env_spec

    contenders, cfg = [], None
    for spec in _split(args.checkpoints):
        c, c_cfg = _load_contender(spec)
        contenders.append(c)
        cfg = cfg or c_cfg
    cfg = _config(args, cfg)
    envs = _split_envs(args.envs)
    for e in envs:
        try:
            parse_env_spec(e)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    attacker = _attacker_net(args.attacker) or next((c.attacker for c in contenders if c.attacker is not None), None)
    cells = transfer_matrix(contenders, envs, setup_from_config(cfg), cfg, attacker)
    out = _out_dir(args, str(Path(cfg.run.out) / "transfer"))
    write_cells(cells, out / "transfer.csv", out / "transfer.json",
                {"config_digest": cfg.digest(), "rows": [c.label for c in contenders], "columns": envs})
    for c in cells:
        shown = f"SPL {c['SPL']:.3f} R_mean {c['R_mean']:.3f}" if "SPL" in c else c.get("error")
        print(f"{c['train']:>24} | {c['test']:<16} {shown}")
    print(f"matrix: {out / 'transfer.csv'}")
    return 0 if all("error" not in c for c in cells) else 2


def cmd_sweep(args) -> int:
    from savn.eval.evaluate import SWEEP_KINDS, sweep, write_cells

    if args.kind not in SWEEP_KINDS:
        raise UsageError(f"unknown sweep kind {args.kind!r}; choose from {', '.join(SWEEP_KINDS)}")
    contender, ck_cfg = _load_contender(args.checkpoint)
    cfg = _config(args, ck_cfg)
    rows = sweep(args.kind, contender, cfg, _attacker_net(args.attacker))
    out = _out_dir(args, str(Path(cfg.run.out) / "sweep"))
    write_cells(rows, out / f"{args.kind}.csv", out / f"{args.kind}.json", {"config_digest": cfg.digest(), "kind": args.kind})
    for r in rows:
        print({k: v for k, v in r.items() if k not in ("report",) and not k.endswith("_std")})
    return 0 if all("error" not in r for r in rows) else 2


def cmd_verify_theory(args) -> int:
    from savn.audio.bank import build_sound_bank
    from savn.theory import verify_fourier_properties, verify_theorem_bound
    from savn.world import generate_scene

    cfg = _config(args)
    if args.trials < 1 or args.fourier_trials < 1:
        raise UsageError("--trials and --fourier-trials must be >= 1")
    scene = generate_scene(cfg.run.seed, cfg.scene.width, cfg.scene.height, cfg.scene.density, cfg.scene.resolution)
    bank = build_sound_bank(cfg.bank.seed, cfg.bank.n_categories, cfg.bank.energy_cap, cfg.audio.sample_rate, cfg.audio.chunk_samples)
    report = verify_theorem_bound(scene, bank, args.trials, cfg.run.seed, cfg.audio, cfg.visual, geometric=not args.no_geometric)
    fourier = verify_fourier_properties(np.random.default_rng(cfg.run.seed), args.fourier_trials)
    print("bounded intervention:")
    print(report.summary())
    print("fourier properties:")
    print(fourier.summary())
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "code_version": code_version(),
            "config_digest": cfg.digest(),
            "e": report.e,
            "e_disc": report.e_disc,
            "trials": args.trials,
            "unit_failures": len(report.failures("unit")),
            "max_ratio_unit": report.max_ratio("unit"),
            "max_ratio_geometric": report.max_ratio("geometric") if not args.no_geometric else None,
            "proof_chain": report.proof_chain,
            "fourier": fourier.max_errors,
            "passed": report.passed and fourier.passed,
        }
        args.out.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return 0 if report.passed and fourier.passed else 2


def cmd_replay(args) -> int:
    from savn.eval.trajectory import replay

    if not args.trajectory.is_file():
        raise UsageError(f"trajectory file not found: {args.trajectory}")
    try:
        text = replay(args.trajectory)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "transfer": cmd_transfer,
    "sweep": cmd_sweep,
    "verify-theory": cmd_verify_theory,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
