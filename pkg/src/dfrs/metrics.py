"""Post-processing of simulation reports."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .bound import BoundResult
from .core import STRETCH_THRESHOLD, bounded_stretch
from .engine import GIB, Ledger, SimReport

HOUR = 3600.0


def bounded_stretches(report: SimReport, threshold: float = STRETCH_THRESHOLD) -> np.ndarray:
    return np.array([bounded_stretch(r.turnaround, r.proc_time, threshold)
                     for r in report.completed])


def raw_stretches(report: SimReport) -> np.ndarray:
    return np.array([r.raw_stretch for r in report.completed])


def degradation(report: SimReport, bound: BoundResult,
                threshold: float = STRETCH_THRESHOLD) -> float:
    """Max bounded stretch over the certified-infeasible end of the bound."""
    return float(bounded_stretches(report, threshold).max()) / bound.s_lower


def underutilization(report: SimReport) -> tuple:
    """(integral of min(P, D) - u in node-seconds, that value over total work)."""
    t = report.curve_t
    if len(t) < 2:
        return 0.0, 0.0
    gap = np.minimum(report.num_nodes, report.curve_demand) - report.curve_util
    value = float(np.dot(gap[:-1], np.diff(t)))
    work = sum(r.cpu_need * r.num_tasks * r.proc_time for r in report.completed)
    if -1e-9 * max(1.0, work) < value < 0:  # rounding on an idle-free schedule
        value = 0.0
    return value, (value / work if work > 0 else float("nan"))


@dataclass(frozen=True)
class BandwidthStats:
    gib_per_s: float
    preemptions_per_hour: float
    migrations_per_hour: float
    preemptions_per_job: float
    migrations_per_job: float


def bandwidth_stats(ledger: Ledger, span: float, num_jobs: int) -> BandwidthStats:
    if not span > 0:
        raise ValueError("span must be positive")
    per_job = max(num_jobs, 1)
    return BandwidthStats(
        ledger.bytes_moved / GIB / span,
        ledger.preemptions / span * HOUR,
        ledger.migrations / span * HOUR,
        ledger.preemptions / per_job,
        ledger.migrations / per_job,
    )


@dataclass(frozen=True)
class MetricsRecord:
    max_stretch: float
    mean_stretch: float
    std_stretch: float
    max_raw_stretch: float
    s_lower: Optional[float]
    degradation: Optional[float]
    underutilization: float
    normalized_underutilization: float
    gib_per_s: float
    preemptions_per_hour: float
    migrations_per_hour: float
    preemptions_per_job: float
    migrations_per_job: float

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(report: SimReport, bound: Optional[BoundResult] = None,
                    threshold: float = STRETCH_THRESHOLD) -> MetricsRecord:
    bs = bounded_stretches(report, threshold)
    under, norm = underutilization(report)
    span = report.span
    bw = bandwidth_stats(report.ledger, span, len(report.completed)) if span > 0 else \
        BandwidthStats(0.0, 0.0, 0.0, 0.0, 0.0)
    return MetricsRecord(
        float(bs.max()), float(bs.mean()), float(bs.std()),
        float(raw_stretches(report).max()),
        bound.s_lower if bound else None,
        degradation(report, bound, threshold) if bound else None,
        under, norm, bw.gib_per_s, bw.preemptions_per_hour, bw.migrations_per_hour,
        bw.preemptions_per_job, bw.migrations_per_job,
    )
