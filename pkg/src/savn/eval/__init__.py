"""Navigation metrics, evaluation protocols and trajectory files."""

from savn.eval.metrics import (
    METRICS,
    EpisodeRecord,
    MetricsReport,
    compute_metrics,
    dtg,
    ndtg,
    r_mean,
    sr,
    spl,
    sspl,
)

__all__ = ["METRICS", "EpisodeRecord", "MetricsReport", "compute_metrics", "dtg", "ndtg", "r_mean", "sr", "spl", "sspl"]
