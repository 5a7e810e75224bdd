"""Trajectory JSON-lines files and their ASCII replay."""

from __future__ import annotations

import json
from pathlib import Path

from savn.config import code_version
from savn.world import Scene

TRAJ_FORMAT = "savn-trajectory"
TRAJ_VERSION = 1
STEP_KEYS = ("step", "agent", "attacker", "alpha", "category", "reward", "done")
_ARROWS = {"N": "^", "E": ">", "S": "v", "W": "<"}


def write_trajectory(path, scene: Scene, steps, digest: str, extra: dict | None = None) -> None:
    """Header line (format, version, digests, scene) then one JSON object per step."""
    header = {"format": TRAJ_FORMAT, "version": TRAJ_VERSION, "config_digest": digest,
              "code_version": code_version(), "scene": scene.to_json(), **(extra or {})}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in steps:
            fh.write(json.dumps({k: s[k] for k in STEP_KEYS}, sort_keys=True) + "\n")


def read_trajectory(path):
    """Returns ``(header, scene, steps)``; malformed lines raise with their line number."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}:1: empty trajectory file")
    try:
        header = json.loads(lines[0])
        if header.get("format") != TRAJ_FORMAT:
            raise ValueError(f"not a trajectory (format={header.get('format')!r})")
        if header.get("version") != TRAJ_VERSION:
            raise ValueError(f"unsupported trajectory version {header.get('version')}")
        scene = Scene.from_json(header["scene"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"{path}:1: bad header ({exc})") from None
    steps = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            missing = [k for k in STEP_KEYS if k not in rec]
            if missing:
                raise KeyError(f"missing {missing}")
            for key in ("agent", "attacker"):
                r, c, h = rec[key]
                if not scene.in_bounds((r, c)) or h not in _ARROWS:
                    raise ValueError(f"bad {key} pose {rec[key]}")
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed step ({exc})") from None
        steps.append(rec)
    return header, scene, steps


def render_frame(scene: Scene, step: dict) -> str:
    """ASCII snapshot: '#' wall, 'G' goal, 'X' attacker, arrow = agent and heading."""
    grid = [list(row) for row in scene.grid]
    gr, gc = scene.goal
    grid[gr][gc] = "G"
    ar, ac, _ = step["attacker"]
    grid[ar][ac] = "X"
    r, c, h = step["agent"]
    grid[r][c] = _ARROWS[h]
    reward = "-" if step["reward"] is None else f"{step['reward']:+.2f}"
    head = f"step {step['step']}  alpha={step['alpha']:.1f}  category={step['category']}  reward={reward}"
    if step["done"]:
        head += "  done" + ("  agent on goal" if (r, c) == scene.goal else "")
    return "\n".join([head] + ["".join(row) for row in grid])


def replay(path) -> str:
    _, scene, steps = read_trajectory(path)
    return "\n\n".join(render_frame(scene, s) for s in steps) + "\n"
