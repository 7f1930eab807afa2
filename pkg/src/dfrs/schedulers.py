"""Scheduling policies: the DFRS family, FCFS/EASY, and EquiPartition."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import allocation as alloc
from .core import EPS, JobSpec, InvalidInput, priority, priority_key
from .packing import PackJob, max_yield_search, stretch_search


class AdmissionError(RuntimeError):
    """The job cannot run on this cluster even when it is empty."""


class AlgorithmNameError(ValueError):
    pass


# ---------------------------------------------------------------- interface

@dataclass
class JobView:
    """What a policy may know about an active job.

    ``proc_time`` is filled in only for clairvoyant policies (EASY).
    """

    id: int
    seq: int
    release: float
    num_tasks: int
    cpu_need: float
    mem_req: float
    vt: float = 0.0
    started: bool = False
    proc_time: Optional[float] = None


@dataclass
class SchedContext:
    now: float
    num_nodes: int
    period: float
    jobs: dict  # id -> JobView, every active (pending, paused, running) job
    mapping: dict  # id -> node per task, running jobs only
    yields: dict

    def flow_time(self, jid: int) -> float:
        return self.now - self.jobs[jid].release

    def priority(self, jid: int) -> float:
        return priority(self.flow_time(jid), self.jobs[jid].vt)

    def key(self, jid: int) -> tuple:
        return priority_key(self.priority(jid), self.jobs[jid].seq)

    def by_priority(self, ids: Iterable[int], descending: bool = True) -> list:
        return sorted(ids, key=self.key, reverse=descending)


@dataclass
class Decision:
    mapping: dict
    yields: dict
    postponed: list = field(default_factory=list)


# ---------------------------------------------------------------- naming

SUBMIT_ACTIONS = ("none", "greedy", "greedyp", "greedypm", "mcb8")
ALGORITHM_TABLE = {
    ("greedy", "greedy", "none"),
    ("greedyp", "greedy", "none"),
    ("greedypm", "greedy", "none"),
    ("greedy", "none", "mcb8"),
    ("greedyp", "none", "mcb8"),
    ("greedypm", "none", "mcb8"),
    ("greedy", "greedy", "mcb8"),
    ("greedyp", "greedy", "mcb8"),
    ("greedypm", "greedy", "mcb8"),
    ("mcb8", "mcb8", "none"),
    ("mcb8", "none", "mcb8"),
    ("mcb8", "mcb8", "mcb8"),
    ("none", "none", "mcb8"),
    ("none", "none", "mcb8-stretch"),
}


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "dfrs"  # dfrs | fcfs | easy | equipartition
    on_submit: str = "none"
    on_complete: str = "none"
    periodic: str = "none"
    optimizer: str = "min"
    remap_limit: Optional[tuple] = None  # ("mvt" | "mft", seconds)
    period: Optional[float] = None

    @property
    def name(self) -> str:
        if self.kind != "dfrs":
            return self.kind
        head = "" if self.on_submit == "none" else self.on_submit
        if self.on_complete != "none":
            head += "*"
        parts = [head]
        if self.periodic == "mcb8":
            parts.append("per")
        elif self.periodic == "mcb8-stretch":
            parts.append("stretch-per")
        parts.append(f"opt={self.optimizer}")
        if self.remap_limit:
            kind, bound = self.remap_limit
            parts.append(f"{kind}={bound:g}")
        return "/".join(parts)

    @property
    def uses_mcb8(self) -> bool:
        return "mcb8" in (self.on_submit, self.on_complete) or self.periodic != "none"


def parse_algorithm_name(text: str) -> PolicyConfig:
    """Parse names such as ``greedypm*/per/opt=min/mvt=600`` or ``easy``."""
    s = text.strip().lower()
    if s in ("fcfs", "easy", "equipartition"):
        return PolicyConfig(kind=s)
    parts = s.split("/")
    head = parts[0]
    star = head.endswith("*")
    base = head[:-1] if star else head
    if "*" in base:
        raise AlgorithmNameError(f"{text!r}: misplaced '*'")
    if base not in SUBMIT_ACTIONS or base == "none":
        if base != "":
            raise AlgorithmNameError(f"{text!r}: unknown submission policy {base!r}")
        base = "none"
    if star and base == "none":
        raise AlgorithmNameError(f"{text!r}: '*' needs a submission policy")
    periodic, optimizer, limit = "none", None, None
    for part in parts[1:]:
        if part in ("per", "stretch-per"):
            if periodic != "none":
                raise AlgorithmNameError(f"{text!r}: duplicate periodic part {part!r}")
            periodic = "mcb8" if part == "per" else "mcb8-stretch"
        elif part.startswith("opt="):
            if optimizer is not None:
                raise AlgorithmNameError(f"{text!r}: duplicate opt= part")
            optimizer = part[4:]
        elif re.fullmatch(r"m[vf]t=\d+(\.\d+)?", part):
            if limit is not None:
                raise AlgorithmNameError(f"{text!r}: duplicate remap limit")
            limit = (part[:3], float(part[4:]))
        else:
            raise AlgorithmNameError(f"{text!r}: unknown part {part!r}")
    on_complete = "none"
    if star:
        on_complete = "mcb8" if base == "mcb8" else "greedy"
    if (base, on_complete, periodic) not in ALGORITHM_TABLE:
        raise AlgorithmNameError(f"{text!r}: combination is not a known DFRS algorithm")
    if optimizer is None:
        raise AlgorithmNameError(f"{text!r}: missing opt= part")
    allowed = ("avg", "max") if periodic == "mcb8-stretch" else ("avg", "min")
    if optimizer not in allowed:
        raise AlgorithmNameError(f"{text!r}: opt={optimizer} not valid here, use one of {allowed}")
    cfg = PolicyConfig("dfrs", base, on_complete, periodic, optimizer, limit)
    if limit and not cfg.uses_mcb8:
        raise AlgorithmNameError(f"{text!r}: remap limits only apply to MCB8-based algorithms")
    return cfg


# ---------------------------------------------------------------- greedy family

class ClusterState:
    """Per-node CPU load and memory usage of the running tasks."""

    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        self.load = np.zeros(num_nodes)
        self.mem = np.zeros(num_nodes)
        self.placed: dict = {}  # jid -> (nodes, cpu_need, mem_req)

    @classmethod
    def from_context(cls, ctx: SchedContext) -> "ClusterState":
        st = cls(ctx.num_nodes)
        for jid, nodes in ctx.mapping.items():
            v = ctx.jobs[jid]
            st.add(jid, nodes, v.cpu_need, v.mem_req)
        return st

    def copy(self) -> "ClusterState":
        st = ClusterState(self.num_nodes)
        st.load, st.mem, st.placed = self.load.copy(), self.mem.copy(), dict(self.placed)
        return st

    def add(self, jid, nodes, cpu, mem):
        for n in nodes:
            self.load[n] += cpu
            self.mem[n] += mem
        self.placed[jid] = (tuple(nodes), cpu, mem)

    def remove(self, jid):
        nodes, cpu, mem = self.placed.pop(jid)
        for n in nodes:
            self.load[n] -= cpu
            self.mem[n] -= mem

    def fits(self, nodes, mem) -> bool:
        extra = np.bincount(np.asarray(nodes, dtype=int), minlength=self.num_nodes) * mem
        return bool((self.mem + extra <= 1.0 + EPS).all())

    def mapping(self) -> dict:
        return {jid: v[0] for jid, v in self.placed.items()}


def greedy_place(job, state: ClusterState) -> Optional[tuple]:
    """Put each task on the least CPU-loaded node with room for it; all or nothing."""
    load = state.load.copy()
    mem = state.mem.copy()
    nodes = []
    for _ in range(job.num_tasks):
        cand = np.where(mem + job.mem_req <= 1.0 + EPS, load, np.inf)
        n = int(cand.argmin())
        if cand[n] == np.inf:
            return None
        nodes.append(n)
        load[n] += job.cpu_need
        mem[n] += job.mem_req
    return tuple(nodes)


def check_admissible(job, num_nodes: int) -> None:
    if greedy_place(job, ClusterState(num_nodes)) is None:
        raise AdmissionError(f"job {job.id} does not fit on an empty cluster")


def greedyP_admit(job, state: ClusterState, ctx: SchedContext):
    """Place ``job``, pausing as few low-priority running jobs as the marking rule allows.

    Returns (nodes or None, paused ids). Running jobs whose priority is not
    strictly below the incoming job's are never marked.
    """
    check_admissible(job, state.num_nodes)
    nodes = greedy_place(job, state)
    if nodes is not None:
        return nodes, []
    incoming = priority_key(priority(ctx.now - job.release, job.vt), job.seq)
    trial = state.copy()
    marked = []
    for jid in ctx.by_priority(state.placed, descending=False):
        if ctx.key(jid) >= incoming:
            break
        trial.remove(jid)
        marked.append(jid)
        nodes = greedy_place(job, trial)
        if nodes is not None:
            break
    if nodes is None:
        return None, []
    trial.add(job.id, nodes, job.cpu_need, job.mem_req)
    for jid in list(reversed(marked)):
        old, cpu, mem = state.placed[jid]
        if trial.fits(old, mem):
            trial.add(jid, old, cpu, mem)
            marked.remove(jid)
    return nodes, marked


def greedyPM_admit(job, state: ClusterState, ctx: SchedContext):
    """GreedyP, then try to re-place each would-be-paused job instead of pausing it.

    Returns (nodes or None, paused ids, {migrated id: new nodes}).
    """
    nodes, paused = greedyP_admit(job, state, ctx)
    if nodes is None:
        return None, [], {}
    trial = state.copy()
    for jid in paused:
        trial.remove(jid)
    trial.add(job.id, nodes, job.cpu_need, job.mem_req)
    moved = {}
    still = []
    for jid in ctx.by_priority(paused):
        v = ctx.jobs[jid]
        new = greedy_place(v, trial)
        if new is None:
            still.append(jid)
        else:
            trial.add(jid, new, v.cpu_need, v.mem_req)
            moved[jid] = new
    return nodes, still, moved


def remap_pin_set(jobs: Iterable[JobView], now: float, remap_limit) -> set:
    """Jobs whose node mapping must be kept if they keep running (mft/mvt)."""
    if not remap_limit:
        return set()
    kind, bound = remap_limit
    if kind == "mft":
        return {j.id for j in jobs if now - j.release < bound}
    if kind == "mvt":
        return {j.id for j in jobs if j.vt < bound}
    raise InvalidInput(f"unknown remap limit {kind!r}")


class DfrsPolicy:
    clairvoyant = False

    def __init__(self, config: PolicyConfig):
        if config.kind != "dfrs":
            raise InvalidInput("DfrsPolicy needs a dfrs configuration")
        self.config = config
        self.stretch = config.periodic == "mcb8-stretch"

    @property
    def periodic(self) -> bool:
        return self.config.periodic != "none"

    def admit_check(self, job, num_nodes):
        check_admissible(job, num_nodes)

    # hooks ---------------------------------------------------------------
    def on_submit(self, ctx: SchedContext, jid: int) -> Decision:
        action = self.config.on_submit
        if action == "mcb8":
            return self._mcb8(ctx)
        state = ClusterState.from_context(ctx)
        job = ctx.jobs[jid]
        postponed = []
        if action == "greedy":
            nodes = greedy_place(job, state)
            if nodes is not None:
                state.add(jid, nodes, job.cpu_need, job.mem_req)
        elif action in ("greedyp", "greedypm"):
            if action == "greedyp":
                nodes, paused = greedyP_admit(job, state, ctx)
                moved = {}
            else:
                nodes, paused, moved = greedyPM_admit(job, state, ctx)
            if nodes is not None:
                for other in paused:
                    state.remove(other)
                for other, new in moved.items():
                    v = ctx.jobs[other]
                    state.remove(other)
                    state.add(other, new, v.cpu_need, v.mem_req)
                state.add(jid, nodes, job.cpu_need, job.mem_req)
        mapping = state.mapping()
        if jid not in mapping:
            postponed.append(jid)
        return Decision(mapping, self._allocate(ctx, mapping), postponed)

    def on_complete(self, ctx: SchedContext, jid: int) -> Decision:
        action = self.config.on_complete
        if action == "mcb8":
            return self._mcb8(ctx)
        mapping = dict(ctx.mapping)
        if action == "greedy":
            state = ClusterState.from_context(ctx)
            waiting = [j for j in ctx.jobs if j not in ctx.mapping]
            for other in ctx.by_priority(waiting):
                v = ctx.jobs[other]
                nodes = greedy_place(v, state)
                if nodes is not None:
                    state.add(other, nodes, v.cpu_need, v.mem_req)
            mapping = state.mapping()
        return Decision(mapping, self._allocate(ctx, mapping))

    def on_tick(self, ctx: SchedContext) -> Decision:
        if self.config.periodic == "mcb8":
            return self._mcb8(ctx)
        if self.stretch:
            return self._mcb8_stretch(ctx)
        return Decision(dict(ctx.mapping), self._allocate(ctx, ctx.mapping))

    # internals -----------------------------------------------------------
    def _pack_jobs(self, ctx: SchedContext) -> list:
        pins = remap_pin_set(
            (ctx.jobs[j] for j in ctx.mapping), ctx.now, self.config.remap_limit)
        out = []
        for jid in sorted(ctx.jobs):
            v = ctx.jobs[jid]
            out.append(PackJob(
                jid, v.num_tasks, v.cpu_need, v.mem_req, ctx.priority(jid),
                ctx.mapping[jid] if jid in pins else None, v.seq,
                ctx.flow_time(jid), v.vt,
            ))
        return out

    def _mcb8(self, ctx: SchedContext) -> Decision:
        if not ctx.jobs:
            return Decision({}, {})
        out = max_yield_search(self._pack_jobs(ctx), ctx.num_nodes)
        return Decision(out.mapping, self._allocate(ctx, out.mapping))

    def _mcb8_stretch(self, ctx: SchedContext) -> Decision:
        if not ctx.jobs:
            return Decision({}, {})
        out = stretch_search(self._pack_jobs(ctx), ctx.period, ctx.num_nodes)
        return Decision(out.mapping, self._allocate(ctx, out.mapping, out.yields))

    def _allocate(self, ctx: SchedContext, mapping: dict, floors=None) -> dict:
        if not mapping:
            return {}
        need = {j: ctx.jobs[j].cpu_need for j in mapping}
        if self.stretch:
            if floors is None:
                base = alloc.min_yield_base(alloc.AllocProblem(mapping, need))
                floors = {j: ctx.yields.get(j, base) for j in mapping}
            problem = alloc.AllocProblem(
                mapping, need,
                flow_time={j: ctx.flow_time(j) for j in mapping},
                virtual_time={j: ctx.jobs[j].vt for j in mapping},
                period=ctx.period,
            )
            return alloc.optimize_stretch(problem, self.config.optimizer, floors)
        problem = alloc.AllocProblem(mapping, need)
        if self.config.optimizer == "avg":
            return alloc.optimize_avg(problem)
        return alloc.optimize_maxmin(problem)


# ---------------------------------------------------------------- batch

class EasyReservationError(AssertionError):
    pass


@dataclass
class BatchState:
    num_nodes: int
    queue: list = field(default_factory=list)
    free: list = field(default_factory=list)  # sorted idle node ids
    running: dict = field(default_factory=dict)  # jid -> (nodes, expected end)
    reservation: Optional[tuple] = None  # (head jid, start time, node set)

    def __post_init__(self):
        if not self.free and not self.running:
            self.free = list(range(self.num_nodes))

    def start(self, jid: int, width: int, end: float) -> tuple:
        nodes = tuple(self.free[:width])
        del self.free[:width]
        self.running[jid] = (nodes, end)
        return nodes

    def finish(self, jid: int) -> None:
        nodes, _ = self.running.pop(jid)
        self.free = sorted(self.free + list(nodes))

    def shadow(self, width: int, now: float):
        """Earliest time ``width`` nodes are idle, and the spare nodes then."""
        avail = len(self.free)
        pool = list(self.free)
        if avail >= width:
            return now, avail - width, tuple(pool[:width])
        for jid, (nodes, end) in sorted(self.running.items(), key=lambda kv: (kv[1][1], kv[0])):
            avail += len(nodes)
            pool.extend(nodes)
            if avail >= width:
                return end, avail - width, tuple(sorted(pool)[:width])
        raise AdmissionError(f"width {width} exceeds the cluster")


def fcfs_step(state: BatchState, ctx: SchedContext) -> list:
    """Start queue heads while enough idle nodes exist."""
    starts = []
    while state.queue:
        head = ctx.jobs[state.queue[0]]
        if head.num_tasks > len(state.free):
            break
        state.queue.pop(0)
        end = ctx.now + head.proc_time if head.proc_time is not None else math.inf
        starts.append((head.id, state.start(head.id, head.num_tasks, end)))
    return starts


def easy_step(state: BatchState, ctx: SchedContext) -> list:
    """FCFS plus backfilling that never delays the queue head's reservation."""
    starts = fcfs_step(state, ctx)
    if not state.queue:
        state.reservation = None
        return starts
    head = ctx.jobs[state.queue[0]]
    shadow, extra, nodes = state.shadow(head.num_tasks, ctx.now)
    prev = state.reservation
    if prev is not None and prev[0] == head.id and shadow > prev[1] + 1e-6:
        raise EasyReservationError(
            f"reservation of job {head.id} moved from {prev[1]} to {shadow}")
    for jid in list(state.queue[1:]):
        job = ctx.jobs[jid]
        if job.num_tasks > len(state.free):
            continue
        end = ctx.now + job.proc_time
        if end <= shadow + 1e-9:
            pass
        elif job.num_tasks <= extra:
            extra -= job.num_tasks
        else:
            continue
        state.queue.remove(jid)
        starts.append((jid, state.start(jid, job.num_tasks, end)))
        after, _, _ = state.shadow(head.num_tasks, ctx.now)
        if after > shadow + 1e-9:
            raise EasyReservationError(
                f"backfilling job {jid} delayed the reservation of job {head.id}")
    state.reservation = (head.id, shadow, nodes)
    return starts


class BatchPolicy:
    periodic = False

    def __init__(self, backfill: bool):
        self.backfill = backfill
        self.clairvoyant = backfill
        self.state: Optional[BatchState] = None
        self.reservations: list = []  # (time, head, start) history

    def admit_check(self, job, num_nodes):
        if job.num_tasks > num_nodes:
            raise AdmissionError(f"job {job.id} needs {job.num_tasks} nodes")

    def _step(self, ctx: SchedContext) -> Decision:
        if self.state is None:
            self.state = BatchState(ctx.num_nodes)
        starts = (easy_step if self.backfill else fcfs_step)(self.state, ctx)
        if self.state.reservation:
            self.reservations.append((ctx.now, *self.state.reservation[:2]))
        mapping = dict(ctx.mapping)
        for jid, nodes in starts:
            mapping[jid] = nodes
        return Decision(mapping, {j: 1.0 for j in mapping})

    def on_submit(self, ctx, jid):
        if self.state is None:
            self.state = BatchState(ctx.num_nodes)
        self.state.queue.append(jid)
        return self._step(ctx)

    def on_complete(self, ctx, jid):
        self.state.finish(jid)
        return self._step(ctx)

    def on_tick(self, ctx):
        return Decision(dict(ctx.mapping), dict(ctx.yields))


# ---------------------------------------------------------------- equipartition

def equipartition_step(active: Sequence[int]) -> dict:
    """Equal share 1/m of a single node for each of the m active jobs."""
    if not active:
        return {}
    share = 1.0 / len(active)
    return {jid: share for jid in active}


class EquiPartitionPolicy:
    """Single-node, fully parallel abstraction: every active job runs on node 0."""

    clairvoyant = False
    periodic = False

    def admit_check(self, job, num_nodes):
        pass

    def _step(self, ctx):
        shares = equipartition_step(sorted(ctx.jobs))
        mapping, yields = {}, {}
        for jid, share in shares.items():
            v = ctx.jobs[jid]
            mapping[jid] = (0,) * v.num_tasks
            yields[jid] = min(1.0, share / (v.cpu_need * v.num_tasks))
        return Decision(mapping, yields)

    def on_submit(self, ctx, jid):
        return self._step(ctx)

    def on_complete(self, ctx, jid):
        return self._step(ctx)

    def on_tick(self, ctx):
        return self._step(ctx)


def theorem4_instance(n: int) -> list:
    """Adversarial single-node instance on which EquiPartition reaches stretch n.

    p_1 = p_2 = n-1, p_i = (n-1)/(i-1) for i >= 3; jobs 1 and 2 arrive at 0
    and each later job arrives when its predecessor would finish alone.
    """
    if n < 3:
        raise InvalidInput("n must be >= 3")
    p = [float(n - 1), float(n - 1)] + [(n - 1) / (i - 1) for i in range(3, n + 1)]
    r = [0.0, 0.0]
    for i in range(2, n):
        r.append(r[i - 1] + p[i - 1])
    mem = 0.5 / n
    return [JobSpec(i + 1, r[i], 1, 1.0, mem, p[i]) for i in range(n)]


def theorem4_sequential_completions(jobs: Sequence[JobSpec]) -> dict:
    """Completion times of the witness schedule: jobs 2..n back to back, then job 1.

    Job 1 runs in the idle gap that opens once the last job has finished.
    """
    n = len(jobs)
    done = {}
    t = 0.0
    for job in jobs[1:]:
        t = max(t, job.release) + job.proc_time
        done[job.id] = t
    done[jobs[0].id] = t + jobs[0].proc_time
    assert math.isclose(done[jobs[0].id], jobs[-1].release + n, rel_tol=1e-12)
    return done


def make_policy(config: PolicyConfig):
    if config.kind == "dfrs":
        return DfrsPolicy(config)
    if config.kind == "fcfs":
        return BatchPolicy(backfill=False)
    if config.kind == "easy":
        return BatchPolicy(backfill=True)
    if config.kind == "equipartition":
        return EquiPartitionPolicy()
    raise InvalidInput(f"unknown policy kind {config.kind!r}")
