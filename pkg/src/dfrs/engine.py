"""Fluid discrete-event simulation of a cluster under a scheduling policy."""
from __future__ import annotations

import heapq
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Mapping, Optional, Sequence

import numpy as np

from .core import EPS, JobSpec
from .schedulers import AdmissionError, Decision, JobView, SchedContext

logger = logging.getLogger(__name__)

GIB = float(2**30)

# event kinds, in tie-breaking order at equal times
PENALTY_END, COMPLETE, SUBMIT, TICK = 0, 1, 2, 3


class SimulationError(RuntimeError):
    pass


@dataclass
class EngineConfig:
    penalty: float = 300.0
    period: float = 600.0
    node_mem_bytes: float = 8 * GIB
    event_log: Optional[IO[str]] = None
    check_invariants: bool = True


@dataclass
class JobRuntime:
    spec: JobSpec
    seq: int
    status: str = "pending"  # pending running paused penalty complete rejected
    vt: float = 0.0
    yield_: float = 0.0
    mapping: Optional[tuple] = None
    penalty_until: float = -math.inf
    submit_time: float = 0.0
    start_time: Optional[float] = None
    completion: Optional[float] = None
    preemptions: int = 0
    migrations: int = 0
    resumes: int = 0
    penalties: int = 0
    version: int = 0
    history: list = field(default_factory=list)  # (t0, t1, effective yield)
    _seg_start: float = 0.0
    _seg_yield: float = 0.0

    @property
    def started(self) -> bool:
        return self.start_time is not None

    def effective_yield(self, now: float) -> float:
        if self.mapping is None or now < self.penalty_until:
            return 0.0
        return self.yield_

    def close_segment(self, now: float, new_yield: float) -> None:
        if new_yield == self._seg_yield:
            return
        if now > self._seg_start and self._seg_yield > 0:
            self.history.append((self._seg_start, now, self._seg_yield))
        self._seg_start, self._seg_yield = now, new_yield

    def history_integral(self) -> float:
        return math.fsum((t1 - t0) * y for t0, t1, y in self.history)


@dataclass(frozen=True)
class RemapAction:
    job_id: int
    kind: str  # start | preempt | resume | migrate
    tasks_moved: int = 0
    bytes: float = 0.0


@dataclass
class Ledger:
    preemptions: int = 0
    resumes: int = 0
    migrations: int = 0
    penalties: int = 0
    preempt_bytes: float = 0.0
    resume_bytes: float = 0.0
    migrate_bytes: float = 0.0
    per_job: dict = field(default_factory=dict)  # jid -> Counter of action kinds

    @property
    def bytes_moved(self) -> float:
        return self.preempt_bytes + self.resume_bytes + self.migrate_bytes

    def record(self, action: RemapAction) -> None:
        if action.kind == "start":
            return
        self.per_job.setdefault(action.job_id, Counter())[action.kind] += 1
        if action.kind == "preempt":
            self.preemptions += 1
            self.preempt_bytes += action.bytes
        elif action.kind == "resume":
            self.resumes += 1
            self.resume_bytes += action.bytes
        elif action.kind == "migrate":
            self.migrations += 1
            self.migrate_bytes += action.bytes


@dataclass(frozen=True)
class JobRecord:
    id: int
    release: float
    proc_time: float
    num_tasks: int
    cpu_need: float
    start: Optional[float]
    completion: Optional[float]
    vt: float
    vt_integral: float
    preemptions: int
    migrations: int
    resumes: int
    rejected: bool = False

    @property
    def turnaround(self) -> float:
        return self.completion - self.release

    @property
    def raw_stretch(self) -> float:
        return self.turnaround / self.proc_time


@dataclass
class SimReport:
    records: list
    ledger: Ledger
    curve_t: np.ndarray
    curve_demand: np.ndarray
    curve_util: np.ndarray
    num_nodes: int
    events: int
    histories: dict = field(default_factory=dict)

    @property
    def completed(self) -> list:
        return [r for r in self.records if not r.rejected]

    @property
    def rejected(self) -> list:
        return [r.id for r in self.records if r.rejected]

    @property
    def span(self) -> float:
        done = self.completed
        if not done:
            return 0.0
        return max(r.completion for r in done) - min(r.release for r in self.records)


def _moved_tasks(old: Sequence[int], new: Sequence[int]) -> int:
    """Tasks that must change node, counting nodes as a multiset."""
    common = Counter(old) & Counter(new)
    return len(new) - sum(common.values())


def apply_remap(old: Mapping[int, tuple], new: Mapping[int, tuple],
                jobs: Mapping[int, JobSpec], started, now: float, penalty: float,
                node_mem_bytes: float = 8 * GIB):
    """Diff two mappings into pause/resume/migrate actions and penalty deadlines.

    ``started`` holds the ids of jobs that have already run; a job that goes
    from pending to running for the first time is a free start.
    """
    actions = []
    penalties = {}
    for jid in sorted(set(old) | set(new)):
        job = jobs[jid]
        image = job.mem_req * node_mem_bytes
        if jid in old and jid not in new:
            actions.append(RemapAction(jid, "preempt", job.num_tasks, job.num_tasks * image))
        elif jid in new and jid not in old:
            if jid in started:
                actions.append(RemapAction(jid, "resume", job.num_tasks, job.num_tasks * image))
            else:
                actions.append(RemapAction(jid, "start"))
                continue
        else:
            moved = _moved_tasks(old[jid], new[jid])
            if not moved:
                continue
            actions.append(RemapAction(jid, "migrate", moved, 2 * moved * image))
        penalties[jid] = now + penalty
    return actions, penalties


def demand_utilization_sample(jobs: Sequence[JobRuntime], now: float) -> tuple:
    """(D, u): CPU demand of unfinished jobs and CPU actually delivered at ``now``."""
    d = u = 0.0
    for rt in jobs:
        if rt.status in ("complete", "rejected"):
            continue
        d += rt.spec.demand
        u += rt.effective_yield(now) * rt.spec.demand
    return d, u


class _Sim:
    def __init__(self, trace, policy, num_nodes, config):
        self.policy = policy
        self.num_nodes = num_nodes
        self.cfg = config
        self.now = 0.0
        self.heap = []
        self.counter = 0
        order = sorted(trace, key=lambda j: (j.release, j.id))
        if len({j.id for j in order}) != len(order):
            raise ValueError("job ids must be unique")
        self.jobs = {j.id: JobRuntime(j, seq) for seq, j in enumerate(order)}
        self.active = {}  # jid -> runtime, submitted and not finished
        self.ledger = Ledger()
        self.curve = []
        self.events = 0
        self.first_release = order[0].release if order else 0.0
        self.tick_armed = False
        for j in order:
            self.push(j.release, SUBMIT, j.id)

    def push(self, t, kind, jid=None, version=None):
        self.counter += 1
        heapq.heappush(self.heap, (t, kind, self.counter, jid, version))

    def log(self, kind, jid="", action="", nodes=()):
        if self.cfg.event_log is not None:
            self.cfg.event_log.write(
                f"{self.now:.6f}\t{kind}\t{jid}\t{action}\t{','.join(map(str, nodes))}\n")

    # time ----------------------------------------------------------------
    def advance(self, t):
        dt = t - self.now
        if dt < 0:
            raise SimulationError(f"time went backwards: {self.now} -> {t}")
        if dt > 0:
            # penalty ends are events, so the yield is constant over (now, t)
            mid = self.now + 0.5 * dt
            for rt in self.active.values():
                rt.vt += rt.effective_yield(mid) * dt
        self.now = t

    def sample(self):
        d, u = demand_utilization_sample(self.active.values(), self.now)
        self.curve.append((self.now, d, u))

    def reschedule_completion(self, rt):
        rt.version += 1
        y = rt.yield_
        if rt.mapping is None or y <= 0:
            return
        begin = max(self.now, rt.penalty_until)
        remaining = max(rt.spec.proc_time - rt.vt, 0.0)
        self.push(begin + remaining / y, COMPLETE, rt.spec.id, rt.version)

    # policy interface ------------------------------------------------------
    def context(self):
        clair = getattr(self.policy, "clairvoyant", False)
        views = {}
        mapping, yields = {}, {}
        for jid, rt in self.active.items():
            s = rt.spec
            views[jid] = JobView(s.id, rt.seq, s.release, s.num_tasks, s.cpu_need, s.mem_req,
                                 rt.vt, rt.started, s.proc_time if clair else None)
            if rt.mapping is not None:
                mapping[jid] = rt.mapping
                yields[jid] = rt.yield_
        return SchedContext(self.now, self.num_nodes, self.cfg.period, views, mapping, yields)

    def apply(self, decision: Decision, event: str, ctx: SchedContext):
        unknown = set(decision.mapping) - set(self.active)
        if unknown:
            raise SimulationError(f"policy mapped inactive jobs {sorted(unknown)}")
        specs = {jid: rt.spec for jid, rt in self.active.items()}
        started = {jid for jid, rt in self.active.items() if rt.started}
        actions, penalties = apply_remap(ctx.mapping, decision.mapping, specs, started,
                                         self.now, self.cfg.penalty, self.cfg.node_mem_bytes)
        for act in actions:
            self.ledger.record(act)
            rt = self.active[act.job_id]
            if act.kind == "preempt":
                rt.preemptions += 1
            elif act.kind == "resume":
                rt.resumes += 1
            elif act.kind == "migrate":
                rt.migrations += 1
            nodes = decision.mapping.get(act.job_id, ())
            self.log(event, act.job_id, act.kind, nodes)
        for jid in decision.postponed:
            self.log(event, jid, "postpone")
        for jid, until in penalties.items():
            rt = self.active[jid]
            rt.penalties += 1
            self.ledger.penalties += 1
            if self.cfg.penalty > 0:
                rt.penalty_until = until
                if jid in decision.mapping:
                    self.push(until, PENALTY_END, jid)
        for jid, rt in self.active.items():
            old_map, old_y, old_pen = rt.mapping, rt.yield_, rt.penalty_until
            if jid in decision.mapping:
                rt.mapping = tuple(decision.mapping[jid])
                rt.yield_ = float(decision.yields[jid])
                if rt.start_time is None:
                    rt.start_time = self.now
                rt.status = "penalty" if self.now < rt.penalty_until else "running"
            else:
                rt.mapping = None
                rt.yield_ = 0.0
                rt.status = "paused" if rt.started else "pending"
            rt.close_segment(self.now, rt.effective_yield(self.now))
            if (rt.mapping, rt.yield_, rt.penalty_until) != (old_map, old_y, old_pen):
                self.reschedule_completion(rt)
        if self.cfg.check_invariants:
            self.check_capacity()

    def check_capacity(self):
        cpu = np.zeros(self.num_nodes)
        mem = np.zeros(self.num_nodes)
        for rt in self.active.values():
            if rt.mapping is None:
                continue
            if not -EPS <= rt.yield_ <= 1 + EPS:
                raise SimulationError(f"job {rt.spec.id}: yield {rt.yield_} outside [0, 1]")
            for n in rt.mapping:
                cpu[n] += rt.yield_ * rt.spec.cpu_need
                mem[n] += rt.spec.mem_req
        if cpu.max(initial=0) > 1 + EPS or mem.max(initial=0) > 1 + EPS:
            raise SimulationError(
                f"t={self.now}: capacity exceeded (cpu {cpu.max()}, mem {mem.max()})")

    # main loop ---------------------------------------------------------------
    def arm_tick(self):
        if self.tick_armed or not getattr(self.policy, "periodic", False):
            return
        period = self.cfg.period
        k = math.floor((self.now - self.first_release) / period) + 1
        self.push(self.first_release + max(k, 1) * period, TICK)
        self.tick_armed = True

    def run(self):
        while self.heap:
            t, kind, _, jid, version = heapq.heappop(self.heap)
            if kind == COMPLETE and self.jobs[jid].version != version:
                continue
            self.advance(t)
            self.events += 1
            if kind == SUBMIT:
                self.on_submit(jid)
            elif kind == COMPLETE:
                self.on_complete(jid)
            elif kind == PENALTY_END:
                rt = self.jobs[jid]
                if rt.mapping is not None and rt.penalty_until <= self.now:
                    rt.status = "running"
                    rt.close_segment(self.now, rt.effective_yield(self.now))
                    self.log("penalty_end", jid)
            else:
                self.on_tick()
            self.sample()
        rejected = sum(rt.status == "rejected" for rt in self.jobs.values())
        if rejected:
            logger.warning("%d of %d jobs rejected as unrunnable", rejected, len(self.jobs))
        if self.active:
            raise SimulationError(
                f"simulation stalled with {len(self.active)} unfinished jobs at t={self.now}")

    def on_submit(self, jid):
        rt = self.jobs[jid]
        rt.submit_time = self.now
        try:
            self.policy.admit_check(rt.spec, self.num_nodes)
        except AdmissionError as exc:
            rt.status = "rejected"
            logger.info("rejecting job %s: %s", jid, exc)
            self.log("submit", jid, "reject")
            return
        self.active[jid] = rt
        self.log("submit", jid)
        ctx = self.context()
        self.apply(self.policy.on_submit(ctx, jid), "submit", ctx)
        self.arm_tick()

    def on_complete(self, jid):
        rt = self.active.pop(jid)
        if abs(rt.vt - rt.spec.proc_time) > 1e-6 * max(1.0, rt.spec.proc_time):
            raise SimulationError(f"job {jid} completed with vt {rt.vt} != {rt.spec.proc_time}")
        rt.vt = rt.spec.proc_time
        rt.close_segment(self.now, 0.0)
        rt.status = "complete"
        rt.completion = self.now
        rt.mapping = None
        rt.yield_ = 0.0
        rt.version += 1
        self.log("complete", jid)
        ctx = self.context()
        self.apply(self.policy.on_complete(ctx, jid), "complete", ctx)

    def on_tick(self):
        self.tick_armed = False
        if not self.active:
            return
        self.log("tick")
        ctx = self.context()
        self.apply(self.policy.on_tick(ctx), "tick", ctx)
        self.push(self.now + self.cfg.period, TICK)
        self.tick_armed = True

    def report(self) -> SimReport:
        records = []
        for rt in sorted(self.jobs.values(), key=lambda r: r.spec.id):
            s = rt.spec
            records.append(JobRecord(
                s.id, s.release, s.proc_time, s.num_tasks, s.cpu_need, rt.start_time,
                rt.completion, rt.vt, rt.history_integral(), rt.preemptions, rt.migrations,
                rt.resumes, rt.status == "rejected",
            ))
        curve = np.array(self.curve, dtype=float).reshape(-1, 3)
        return SimReport(records, self.ledger, curve[:, 0], curve[:, 1], curve[:, 2],
                         self.num_nodes, self.events,
                         {rt.spec.id: list(rt.history) for rt in self.jobs.values()})


def run(trace: Sequence[JobSpec], policy, num_nodes: int,
        config: Optional[EngineConfig] = None) -> SimReport:
    """Simulate ``trace`` to completion and return the report."""
    sim = _Sim(trace, policy, num_nodes, config or EngineConfig())
    sim.run()
    return sim.report()
