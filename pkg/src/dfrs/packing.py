"""Two-dimensional (CPU, memory) vector packing with MCB8 and the searches built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import EPS, priority_key

Mapping_ = dict  # job id -> tuple of node ids, one per task


@dataclass(frozen=True)
class PackItem:
    job_id: int
    num_tasks: int
    cpu_req: float
    mem_req: float
    priority: float = math.inf
    pinned_nodes: Optional[tuple] = None
    order: Optional[int] = None  # submission order, defaults to job_id

    @property
    def seq(self) -> int:
        return self.job_id if self.order is None else self.order


@dataclass(frozen=True)
class PackJob:
    """A job as seen by the searches: CPU *need* instead of requirement."""

    job_id: int
    num_tasks: int
    cpu_need: float
    mem_req: float
    priority: float = math.inf
    pinned_nodes: Optional[tuple] = None
    order: Optional[int] = None
    flow_time: float = 0.0
    virtual_time: float = 0.0

    @property
    def seq(self) -> int:
        return self.job_id if self.order is None else self.order

    def item(self, cpu_req: float) -> PackItem:
        return PackItem(self.job_id, self.num_tasks, cpu_req, self.mem_req,
                        self.priority, self.pinned_nodes, self.order)


@dataclass
class PackOutcome:
    value: float  # yield Y, or 1/stretch for the stretch search
    mapping: Mapping_ = field(default_factory=dict)
    rejected: list = field(default_factory=list)
    yields: dict = field(default_factory=dict)


def mcb_pack(items: Sequence[PackItem], num_nodes: int) -> Optional[Mapping_]:
    """Map every task of every item to a node, or return None.

    Pinned items are reserved first. The others are split into CPU-intensive
    (cpu_req >= mem_req) and memory-intensive lists, each sorted by
    non-increasing largest requirement. Nodes are filled one at a time, always
    drawing from the list that counters the node's current imbalance.
    """
    cpu_free = [1.0] * num_nodes
    mem_free = [1.0] * num_nodes
    touched = [False] * num_nodes
    mapping: Mapping_ = {}
    free_items = []
    for it in items:
        if it.pinned_nodes is None:
            free_items.append(it)
            continue
        if len(it.pinned_nodes) != it.num_tasks:
            raise ValueError(f"job {it.job_id}: pinned_nodes does not cover every task")
        for node in it.pinned_nodes:
            cpu_free[node] -= it.cpu_req
            mem_free[node] -= it.mem_req
            touched[node] = True
            if cpu_free[node] < -EPS or mem_free[node] < -EPS:
                return None
        mapping[it.job_id] = tuple(it.pinned_nodes)

    left = sum(it.num_tasks for it in free_items)
    if left == 0:
        return mapping
    if (sum(it.cpu_req * it.num_tasks for it in free_items) > sum(cpu_free) + EPS
            or sum(it.mem_req * it.num_tasks for it in free_items) > sum(mem_free) + EPS):
        return None

    order = sorted(free_items, key=lambda it: (-max(it.cpu_req, it.mem_req), it.job_id))
    lists = (
        [it for it in order if it.cpu_req >= it.mem_req],
        [it for it in order if it.cpu_req < it.mem_req],
    )
    remaining = {it.job_id: it.num_tasks for it in free_items}
    placed = {it.job_id: [] for it in free_items}

    def first_fit(lst, start, node):
        c, m = cpu_free[node] + EPS, mem_free[node] + EPS
        i = start
        while i < len(lst):
            it = lst[i]
            if remaining[it.job_id] and it.cpu_req <= c and it.mem_req <= m:
                return i
            i += 1
        return i

    for node in range(num_nodes):
        # items skipped on this node never fit later on it: pointers only advance
        ptr = [0, 0]
        while left:
            if not touched[node]:
                heads = []
                for k in (0, 1):
                    ptr[k] = first_fit(lists[k], ptr[k], node)
                    heads.append(lists[k][ptr[k]] if ptr[k] < len(lists[k]) else None)
                if heads[0] is None and heads[1] is None:
                    break
                if heads[1] is None:
                    pref = 0
                elif heads[0] is None:
                    pref = 1
                else:
                    s0 = max(heads[0].cpu_req, heads[0].mem_req)
                    s1 = max(heads[1].cpu_req, heads[1].mem_req)
                    pref = 0 if s0 >= s1 else 1
            else:
                pref = 1 if mem_free[node] > cpu_free[node] + EPS else 0
            chosen = None
            for k in (pref, 1 - pref):
                ptr[k] = first_fit(lists[k], ptr[k], node)
                if ptr[k] < len(lists[k]):
                    chosen = lists[k][ptr[k]]
                    break
            if chosen is None:
                break
            cpu_free[node] -= chosen.cpu_req
            mem_free[node] -= chosen.mem_req
            touched[node] = True
            remaining[chosen.job_id] -= 1
            placed[chosen.job_id].append(node)
            left -= 1
        if not left:
            break
    if left:
        return None
    for jid, nodes in placed.items():
        mapping[jid] = tuple(nodes)
    return mapping


def _lowest_priority(jobs: Sequence[PackJob]) -> PackJob:
    return min(jobs, key=lambda j: priority_key(j.priority, j.seq))


def max_yield_search(jobs: Sequence[PackJob], num_nodes: int,
                     tol: float = 0.01) -> PackOutcome:
    """Largest uniform yield (to ``tol``) at which MCB8 packs the jobs.

    When even a yield of ``tol`` cannot be packed the lowest-priority job is
    dropped and the search restarts.
    """
    active = list(jobs)
    rejected = []

    def attempt(y):
        return mcb_pack([j.item(min(1.0, y * j.cpu_need)) for j in active], num_nodes)

    while active:
        best = attempt(1.0)
        lo = 1.0
        if best is None:
            best = attempt(tol)
            if best is None:
                victim = _lowest_priority(active)
                active.remove(victim)
                rejected.append(victim.job_id)
                continue
            lo, hi = tol, 1.0
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                res = attempt(mid)
                if res is None:
                    hi = mid
                else:
                    lo, best = mid, res
        return PackOutcome(lo, best, rejected, {j.job_id: lo for j in active})
    return PackOutcome(0.0, {}, rejected, {})


def stretch_yield(job: PackJob, inv_stretch: float, period: float,
                  min_yield: float = 0.01) -> float:
    """Yield that brings the job's predicted stretch at the next event to 1/inv_stretch."""
    y = ((job.flow_time + period) * inv_stretch - job.virtual_time) / period
    return max(y, min_yield)


def stretch_search(jobs: Sequence[PackJob], period: float, num_nodes: int,
                   tol: float = 0.01, min_yield: float = 0.01) -> PackOutcome:
    """Binary search on the inverse of the largest predicted stretch.

    For a candidate x = 1/S each job needs yield ((ft + T) x - vt) / T so that
    its stretch at the next periodic event is S; a need above 1 makes x
    infeasible, needs below ``min_yield`` are raised to it. Bisection stops
    once the bracket is within ``tol`` relative to its upper end.
    """
    if period <= 0:
        raise ValueError("period must be positive")
    active = list(jobs)
    rejected = []

    def attempt(x):
        ys = {j.job_id: stretch_yield(j, x, period, min_yield) for j in active}
        if any(y > 1 + EPS for y in ys.values()):
            return None, ys
        items = [j.item(min(1.0, ys[j.job_id]) * j.cpu_need) for j in active]
        return mcb_pack(items, num_nodes), ys

    while active:
        x_hi = min((j.virtual_time + period) / (j.flow_time + period) for j in active)
        best, ys = attempt(x_hi)
        lo = x_hi
        if best is None:
            x_lo = min((j.virtual_time + min_yield * period) / (j.flow_time + period)
                       for j in active)
            best, ys = attempt(x_lo)
            if best is None:
                victim = _lowest_priority(active)
                active.remove(victim)
                rejected.append(victim.job_id)
                continue
            lo, hi = x_lo, x_hi
            while hi - lo > tol * hi:
                mid = 0.5 * (lo + hi)
                res, mys = attempt(mid)
                if res is None:
                    hi = mid
                else:
                    lo, best, ys = mid, res, mys
        yields = {jid: min(1.0, y) for jid, y in ys.items()}
        return PackOutcome(lo, best, rejected, yields)
    return PackOutcome(0.0, {}, rejected, {})


