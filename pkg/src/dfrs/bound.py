"""Offline lower bound on the optimal maximum stretch.

For a target stretch S each job gets a deadline r + S p. Cutting time at all
releases and deadlines gives intervals; S is achievable by a preemptive,
divisible schedule (memory ignored) iff fractions alpha[j, t] of each job can
be spread over the intervals inside its window without exceeding the
interval length per job or the cluster's capacity per interval. That is an
LP feasibility problem; bisection on S brackets the smallest feasible value.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .core import JobSpec

logger = logging.getLogger(__name__)

CERT_TOL = 1e-9
_MARGINS = (0.0, 1e-8, 1e-7, 1e-6)


class BoundError(RuntimeError):
    """The LP solver failed for reasons other than infeasibility."""


class BoundUnavailable(RuntimeError):
    """The instance is larger than the configured job cap."""


@dataclass(frozen=True)
class IntervalSet:
    points: np.ndarray  # sorted distinct breakpoints; interval i = [points[i], points[i+1])

    @property
    def starts(self) -> np.ndarray:
        return self.points[:-1]

    @property
    def ends(self) -> np.ndarray:
        return self.points[1:]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.points)

    def __len__(self) -> int:
        return max(len(self.points) - 1, 0)


def _arrays(jobs: Sequence[JobSpec]):
    r = np.array([j.release for j in jobs], dtype=float)
    p = np.array([j.proc_time for j in jobs], dtype=float)
    dem = np.array([j.demand for j in jobs], dtype=float)
    return r, p, dem


def build_intervals(jobs: Sequence[JobSpec], stretch: float) -> IntervalSet:
    if stretch < 1:
        raise ValueError("stretch must be >= 1")
    r, p, _ = _arrays(jobs)
    return IntervalSet(np.unique(np.concatenate([r, r + stretch * p])))


def _windows(r, d, iv: IntervalSet):
    """Index range [lo, hi) of the intervals lying inside each job's window."""
    lo = np.searchsorted(iv.points, r)
    hi = np.searchsorted(iv.points, d)
    return lo, hi


@dataclass
class _Lp:
    rows: np.ndarray
    cols: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    iv: IntervalSet


def _solve(jobs, num_nodes, stretch, margin=0.0):
    """Solve the feasibility LP; returns (status, alpha or None, intervals)."""
    r, p, dem = _arrays(jobs)
    iv = build_intervals(jobs, stretch)
    ell = iv.lengths
    lo, hi = _windows(r, r + stretch * p, iv)
    counts = hi - lo
    if (counts <= 0).any():
        return 2, None, iv
    job_of = np.repeat(np.arange(len(jobs)), counts)
    offs = np.concatenate([[0], np.cumsum(counts)[:-1]])
    int_of = np.arange(counts.sum()) - np.repeat(offs, counts) + np.repeat(lo, counts)
    nv = len(job_of)
    shrink = 1.0 - margin
    # each job fully processed
    a_eq = coo_matrix((np.ones(nv), (job_of, np.arange(nv))), shape=(len(jobs), nv))
    b_eq = np.ones(len(jobs))
    # cluster capacity per interval, scaled to be dimensionless
    ni = len(ell)
    cap = num_nodes * ell
    coef = p[job_of] * dem[job_of] / cap[int_of]
    a_ub = coo_matrix((coef, (int_of, np.arange(nv))), shape=(ni, nv))
    b_ub = np.full(ni, shrink)
    # a job cannot run longer than the interval
    ub = np.minimum(1.0, shrink * ell[int_of] / p[job_of])
    res = linprog(np.zeros(nv), A_ub=a_ub.tocsr(), b_ub=b_ub, A_eq=a_eq.tocsr(), b_eq=b_eq,
                  bounds=np.column_stack([np.zeros(nv), ub]), method="highs")
    if res.status == 2:
        return 2, None, iv
    if res.status != 0:
        raise BoundError(f"LP failed at S={stretch}: {res.message}")
    alpha = np.zeros((len(jobs), ni))
    alpha[job_of, int_of] = np.clip(res.x, 0.0, None)
    return 0, alpha, iv


def feasible(jobs: Sequence[JobSpec], num_nodes: int, stretch: float):
    """(is S achievable, alpha certificate or None)."""
    if not jobs:
        return True, np.zeros((0, 0))
    status, alpha, _ = _solve(jobs, num_nodes, stretch)
    return status == 0, alpha


def certificate_violations(jobs: Sequence[JobSpec], num_nodes: int, stretch: float,
                           alpha: np.ndarray, tol: float = CERT_TOL) -> list:
    """Replay every constraint family on ``alpha``; returns descriptions of failures.

    Constraints are checked in normalized form (divided by their right-hand side).
    """
    r, p, dem = _arrays(jobs)
    iv = build_intervals(jobs, stretch)
    ell = iv.lengths
    out = []
    if alpha.shape != (len(jobs), len(ell)):
        return [f"certificate shape {alpha.shape} != {(len(jobs), len(ell))}"]
    if (alpha < -tol).any():
        out.append("negative fraction")
    total = alpha.sum(axis=1)
    bad = np.abs(total - 1.0) > tol
    out += [f"job {jobs[i].id}: fractions sum to {total[i]!r}" for i in np.flatnonzero(bad)]
    d = r + stretch * p
    before = iv.ends[None, :] <= r[:, None]
    after = iv.starts[None, :] >= d[:, None]
    if (alpha[before] != 0).any():
        out.append("work scheduled before a release")
    if (alpha[after] != 0).any():
        out.append("work scheduled after a deadline")
    per_job = alpha * p[:, None] / ell[None, :] - 1.0
    if (per_job > tol).any():
        out.append(f"a job runs longer than an interval (excess {per_job.max():.3g})")
    load = (alpha * (p * dem)[:, None]).sum(axis=0) / (num_nodes * ell) - 1.0
    if (load > tol).any():
        out.append(f"cluster capacity exceeded (excess {load.max():.3g})")
    return out


def certify(jobs, num_nodes, stretch):
    """A certificate at ``stretch`` that replays cleanly, or None."""
    for margin in _MARGINS:
        status, alpha, _ = _solve(jobs, num_nodes, stretch, margin)
        if status != 0:
            return None
        alpha = alpha / alpha.sum(axis=1, keepdims=True)
        if not certificate_violations(jobs, num_nodes, stretch, alpha):
            return alpha
    return None


def serial_stretch(jobs: Sequence[JobSpec], num_nodes: int) -> float:
    """Max stretch of running jobs one at a time in release order."""
    t = -math.inf
    worst = 1.0
    for j in sorted(jobs, key=lambda j: (j.release, j.id)):
        t = max(t, j.release) + j.proc_time * max(1.0, j.demand / num_nodes)
        worst = max(worst, (t - j.release) / j.proc_time)
    return worst


@dataclass
class BoundResult:
    s_lower: float
    s_upper: float
    certificate: np.ndarray
    intervals: IntervalSet
    iterations: int


def lower_bound_stretch(jobs: Sequence[JobSpec], num_nodes: int, tol: float = 1e-3,
                        max_jobs: Optional[int] = None) -> BoundResult:
    """Bracket the optimal max stretch of the relaxed problem within relative ``tol``.

    ``s_lower`` is infeasible (or exactly 1) and so a safe lower bound;
    ``s_upper`` comes with a certificate.
    """
    if not jobs:
        raise ValueError("need at least one job")
    if max_jobs is not None and len(jobs) > max_jobs:
        raise BoundUnavailable(f"{len(jobs)} jobs exceed the cap of {max_jobs}")
    if num_nodes < 1 or not tol > 0:
        raise ValueError("need num_nodes >= 1 and tol > 0")
    iters = 1
    ok, _ = feasible(jobs, num_nodes, 1.0)
    if ok:
        lo = hi = 1.0
    else:
        lo, hi = 1.0, serial_stretch(jobs, num_nodes)
        iters += 1
        ok, _ = feasible(jobs, num_nodes, hi)
        if not ok:
            raise BoundError(f"serial schedule stretch {hi} reported infeasible")
        # leave half the tolerance for nudging s_upper up if the certificate is tight
        while hi - lo > 0.5 * tol * hi:
            mid = math.sqrt(lo * hi)
            iters += 1
            ok, _ = feasible(jobs, num_nodes, mid)
            if ok:
                hi = mid
            else:
                lo = mid
    s_upper = hi
    alpha = certify(jobs, num_nodes, s_upper)
    step = 1e-6
    while alpha is None:
        s_upper = hi * (1 + step)
        if s_upper - lo > tol * s_upper:
            raise BoundError(f"no clean certificate near S={hi}")
        alpha = certify(jobs, num_nodes, s_upper)
        step *= 4
    logger.debug("bound: %d jobs, S in [%g, %g] after %d LPs", len(jobs), lo, s_upper, iters)
    return BoundResult(lo, s_upper, alpha, build_intervals(jobs, s_upper), iters)
