"""CPU allocation for a fixed task-to-node mapping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.optimize import linprog

from .core import EPS


class AllocationError(RuntimeError):
    pass


@dataclass
class AllocProblem:
    mapping: Mapping[int, tuple]  # job id -> node per task
    cpu_need: Mapping[int, float]
    floor: Optional[Mapping[int, float]] = None
    flow_time: Mapping[int, float] = field(default_factory=dict)
    virtual_time: Mapping[int, float] = field(default_factory=dict)
    period: float = 600.0

    def __post_init__(self):
        self.jobs = sorted(self.mapping)
        nodes = sorted({n for nodes in self.mapping.values() for n in nodes})
        index = {n: i for i, n in enumerate(nodes)}
        w = np.zeros((len(nodes), len(self.jobs)))
        for j, jid in enumerate(self.jobs):
            for n in self.mapping[jid]:
                w[index[n], j] += self.cpu_need[jid]
        self.weights = w  # node x job: CPU consumed per unit of yield

    def floors(self, default: float) -> np.ndarray:
        if self.floor is None:
            return np.full(len(self.jobs), default)
        return np.array([self.floor.get(j, default) for j in self.jobs])


def max_load(problem: AllocProblem) -> float:
    if not problem.jobs:
        return 0.0
    return float(problem.weights.sum(axis=1).max())


def min_yield_base(problem: AllocProblem) -> float:
    """1/max(1, max node CPU load): the best uniform yield for the mapping."""
    return 1.0 / max(1.0, max_load(problem))


def _as_dict(problem: AllocProblem, y: np.ndarray) -> dict:
    return {jid: float(v) for jid, v in zip(problem.jobs, y)}


def _repair(problem: AllocProblem, y: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """Clip solver noise so bounds and node capacities hold exactly."""
    y = np.clip(y, lo, 1.0)
    w = problem.weights
    for _ in range(len(y) + 1):
        load = w @ y
        over = load - 1.0
        if over.max(initial=0.0) <= 0:
            break
        i = int(over.argmax())
        slack = np.where(w[i] > 0, y - lo, 0.0)
        total = float(w[i] @ slack)
        if total <= 0:
            break
        y = np.clip(y - slack * min(1.0, over[i] / total), lo, 1.0)
    return y


def _solve(c, a_ub, b_ub, a_eq=None, b_eq=None, bounds=None):
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    if res.status != 0:
        raise AllocationError(f"LP failed: {res.message}")
    return res


def optimize_avg(problem: AllocProblem, floor: Optional[float] = None) -> dict:
    """Maximize the sum of yields, never below ``floor`` (default: base yield).

    Among optimal allocations, a second LP prefers larger yields for smaller
    job ids so that the result does not depend on solver internals.
    """
    if not problem.jobs:
        return {}
    base = min_yield_base(problem) if floor is None else floor
    lo = problem.floors(base)
    n = len(problem.jobs)
    bounds = list(zip(lo, np.ones(n)))
    w = problem.weights
    res = _solve(-np.ones(n), w, np.ones(len(w)), bounds=bounds)
    best = -res.fun
    tie = -np.linspace(1.0, 0.5, n)
    res2 = linprog(tie, A_ub=np.vstack([w, -np.ones((1, n))]),
                   b_ub=np.append(np.ones(len(w)), -(best - 1e-9 * max(1.0, best))),
                   bounds=bounds, method="highs")
    y = res2.x if res2.status == 0 else res.x
    return _as_dict(problem, _repair(problem, y, lo))


def optimize_maxmin(problem: AllocProblem, floor: Optional[float] = None) -> dict:
    """Lexicographic max-min yields by progressive filling.

    All unfrozen jobs share a common level, raised until some node saturates
    or the level reaches 1; jobs on saturated nodes freeze, and the process
    repeats with the rest.
    """
    if not problem.jobs:
        return {}
    base = min_yield_base(problem) if floor is None else floor
    lo = problem.floors(base)
    w = problem.weights
    n = len(problem.jobs)
    y = np.zeros(n)
    frozen = np.zeros(n, dtype=bool)
    while not frozen.all():
        fixed = w[:, frozen] @ y[frozen]
        moving = w[:, ~frozen].sum(axis=1)
        active = moving > 0
        level = 1.0
        if active.any():
            level = min(1.0, float(((1.0 - fixed[active]) / moving[active]).min()))
        y[~frozen] = level
        if level >= 1.0:
            break
        residual = 1.0 - (fixed + moving * level)
        saturated = active & (residual < EPS)
        newly = (~frozen) & (w[saturated] > 0).any(axis=0)
        if not newly.any():  # float noise: freeze the tightest node's jobs
            i = int(np.where(active, residual, np.inf).argmin())
            newly = (~frozen) & (w[i] > 0)
        frozen |= newly
    y = np.maximum(y, lo)
    return _as_dict(problem, _repair(problem, y, lo))


def predicted_stretch(flow_time: float, virtual_time: float, y: float, period: float) -> float:
    return (flow_time + period) / (virtual_time + y * period)


def optimize_stretch(problem: AllocProblem, mode: str = "max",
                     floors: Optional[Mapping[int, float]] = None) -> dict:
    """Improve yields of a fixed mapping against predicted stretch at the next period.

    ``floors`` (default: the problem's floor) are never lowered. Mode "avg"
    maximizes the first-order decrease of the summed predicted stretch in one
    LP; mode "max" progressively lowers the common stretch target of the jobs
    that are still free to improve.
    """
    if not problem.jobs:
        return {}
    if floors is not None:
        lo = np.array([floors.get(j, 0.0) for j in problem.jobs])
    else:
        lo = problem.floors(min_yield_base(problem))
    lo = np.clip(lo, 0.0, 1.0)
    w = problem.weights
    t = problem.period
    ft = np.array([problem.flow_time.get(j, 0.0) for j in problem.jobs])
    vt = np.array([problem.virtual_time.get(j, 0.0) for j in problem.jobs])
    n = len(problem.jobs)
    if mode == "avg":
        denom = np.maximum(vt + lo * t, 1e-12)
        gain = (ft + t) * t / denom**2
        res = _solve(-gain, w, np.ones(len(w)), bounds=list(zip(lo, np.ones(n))))
        return _as_dict(problem, _repair(problem, res.x, lo))
    if mode != "max":
        raise ValueError(f"unknown mode {mode!r}")

    def yields_at(x, mask):
        out = y.copy()
        out[mask] = np.clip(((ft[mask] + t) * x - vt[mask]) / t, lo[mask], 1.0)
        return out

    y = lo.copy()
    frozen = np.zeros(n, dtype=bool)
    while not frozen.all():
        free = ~frozen
        x_top = float(((vt[free] + t) / (ft[free] + t)).max())
        if (w @ yields_at(x_top, free) <= 1.0 + EPS).all():
            y = yields_at(x_top, free)
            break
        x_lo, x_hi = 0.0, x_top
        for _ in range(100):
            mid = 0.5 * (x_lo + x_hi)
            if (w @ yields_at(mid, free) <= 1.0).all():
                x_lo = mid
            else:
                x_hi = mid
            if x_hi - x_lo <= 1e-15 * x_hi:
                break
        y = yields_at(x_lo, free)
        over = w @ yields_at(x_hi, free) > 1.0
        newly = free & ((w[over] > 0).any(axis=0) | (y >= 1.0))
        if not newly.any():
            newly = free
        frozen |= newly
    return _as_dict(problem, _repair(problem, y, lo))
