"""Navigation metrics over sets of finished episodes."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

METRICS = ("SPL", "SSPL", "SR", "R_mean", "DTG", "NDTG")


@dataclass
class EpisodeRecord:
    """One finished episode.

    ``shortest_path`` (l) and ``executed_path`` (p) are in length units;
    turning contributes no length. ``start_distance`` (d) and
    ``final_distance`` (d_a) are geodesic distances to the goal.
    """

    success: bool
    shortest_path: float
    executed_path: float
    start_distance: float
    final_distance: float
    reward: float = 0.0
    trajectory: list | None = None

    def __post_init__(self):
        if self.executed_path < 0 or self.shortest_path < 0:
            raise ValueError("path lengths must be non-negative")
        if self.success and self.final_distance != 0:
            raise ValueError("a successful episode must end on the goal")

    @classmethod
    def from_summary(cls, s, keep_trajectory: bool = False) -> "EpisodeRecord":
        return cls(bool(s.success), s.shortest_path, s.executed_path, s.start_distance, s.final_distance, s.reward_agent,
                   s.trajectory if keep_trajectory else None)


def _check(records):
    records = list(records)
    if not records:
        raise ValueError("metrics need at least one episode")
    return records


def _efficiency(r: EpisodeRecord) -> float:
    denom = max(r.executed_path, r.shortest_path)
    return r.shortest_path / denom if denom > 0 else 1.0


def spl(records) -> float:
    """Success weighted by (shortest / max(executed, shortest)) path length."""
    records = _check(records)
    return float(sum(r.success * _efficiency(r) for r in records) / len(records))


def _with_start_distance(records, name):
    kept = [r for r in records if r.start_distance > 0]
    if len(kept) < len(records):
        warnings.warn(f"{name}: excluded {len(records) - len(kept)} episode(s) starting on the goal", stacklevel=3)
    if not kept:
        raise ValueError(f"{name}: no episode with a positive start distance")
    return kept


def sspl(records) -> float:
    """Soft SPL: ``max(0, 1 - d_a / d)`` in place of binary success."""
    records = _with_start_distance(_check(records), "SSPL")
    return float(sum(max(0.0, 1.0 - r.final_distance / r.start_distance) * _efficiency(r) for r in records) / len(records))


def sr(records) -> float:
    records = _check(records)
    return float(np.mean([float(r.success) for r in records]))


def dtg(records) -> float:
    records = _check(records)
    return float(np.mean([r.final_distance for r in records]))


def ndtg(records) -> float:
    records = _with_start_distance(_check(records), "NDTG")
    return float(np.mean([r.final_distance / r.start_distance for r in records]))


def r_mean(records) -> float:
    records = _check(records)
    return float(np.mean([r.reward for r in records]))


METRIC_FUNCS = {"SPL": spl, "SSPL": sspl, "SR": sr, "R_mean": r_mean, "DTG": dtg, "NDTG": ndtg}


def compute_metrics(records) -> dict[str, float]:
    return {name: fn(records) for name, fn in METRIC_FUNCS.items()}


@dataclass
class MetricsReport:
    """Metric means and standard deviations across evaluation runs."""

    runs: list[dict[str, float]]
    n_episodes: int
    seeds: list[int]
    label: str = ""
    meta: dict = field(default_factory=dict)

    def mean(self, metric: str) -> float:
        return float(np.mean([r[metric] for r in self.runs]))

    def std(self, metric: str) -> float:
        return float(np.std([r[metric] for r in self.runs]))

    def __getitem__(self, metric: str) -> float:
        return self.mean(metric)

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "n_episodes": self.n_episodes,
            "seeds": list(self.seeds),
            "mean": {m: self.mean(m) for m in METRICS},
            "std": {m: self.std(m) for m in METRICS},
            "runs": self.runs,
            **({"meta": self.meta} if self.meta else {}),
        }

    def row(self) -> dict:
        out = {}
        for m in METRICS:
            out[m] = self.mean(m)
            out[f"{m}_std"] = self.std(m)
        return out

    def summary(self) -> str:
        parts = [f"{m} {self.mean(m):.3f}±{self.std(m):.3f}" for m in METRICS]
        return f"{self.label or 'eval'}: " + ", ".join(parts)

