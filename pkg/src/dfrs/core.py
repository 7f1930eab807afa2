"""Domain types and elementary formulas shared by the whole package."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

EPS = 1e-9
STRETCH_THRESHOLD = 10.0


class InvalidInput(ValueError):
    """Raised when a value violates a documented precondition."""


@dataclass(frozen=True)
class JobSpec:
    """A submitted job. ``proc_time`` is hidden from non-clairvoyant policies."""

    id: int
    release: float
    num_tasks: int
    cpu_need: float
    mem_req: float
    proc_time: float

    def __post_init__(self):
        if self.release < 0:
            raise InvalidInput(f"job {self.id}: negative release {self.release}")
        if self.num_tasks < 1:
            raise InvalidInput(f"job {self.id}: num_tasks must be >= 1")
        if not 0 < self.cpu_need <= 1 + EPS:
            raise InvalidInput(f"job {self.id}: cpu_need {self.cpu_need} outside (0, 1]")
        if not 0 < self.mem_req <= 1 + EPS:
            raise InvalidInput(f"job {self.id}: mem_req {self.mem_req} outside (0, 1]")
        if not self.proc_time > 0:
            raise InvalidInput(f"job {self.id}: proc_time must be positive")

    @property
    def work(self) -> float:
        """CPU work in node-seconds: c_j * |T_j| * p_j."""
        return self.cpu_need * self.num_tasks * self.proc_time

    @property
    def demand(self) -> float:
        return self.cpu_need * self.num_tasks

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "release": self.release,
            "num_tasks": self.num_tasks,
            "cpu_need": self.cpu_need,
            "mem_req": self.mem_req,
            "proc_time": self.proc_time,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "JobSpec":
        return cls(
            id=int(d["id"]),
            release=float(d["release"]),
            num_tasks=int(d["num_tasks"]),
            cpu_need=float(d["cpu_need"]),
            mem_req=float(d["mem_req"]),
            proc_time=float(d["proc_time"]),
        )


@dataclass(frozen=True)
class ClusterConfig:
    num_nodes: int
    node_mem_bytes: float = 8 * 2**30
    cores_per_node: int = 4

    def __post_init__(self):
        if self.num_nodes < 1:
            raise InvalidInput("num_nodes must be >= 1")


@dataclass
class NodeState:
    node_id: int
    placed_tasks: set = field(default_factory=set)
    cpu_load: float = 0.0
    mem_used: float = 0.0

    @property
    def mem_free(self) -> float:
        return 1.0 - self.mem_used


@dataclass
class PlacementMap:
    """Task placement of running jobs plus their (uniform per job) yields."""

    task_node: dict = field(default_factory=dict)  # (job id, task index) -> node
    yields: dict = field(default_factory=dict)  # job id -> yield

    @classmethod
    def from_job_nodes(cls, job_nodes: Mapping[int, Iterable[int]], yields=None):
        task_node = {}
        for jid, nodes in job_nodes.items():
            for k, node in enumerate(nodes):
                task_node[(jid, k)] = node
        return cls(task_node, dict(yields or {}))

    def job_nodes(self) -> dict:
        out: dict = {}
        for (jid, k), node in sorted(self.task_node.items()):
            out.setdefault(jid, []).append(node)
        return {jid: tuple(nodes) for jid, nodes in out.items()}

    def violations(self, jobs: Mapping[int, JobSpec], tol: float = EPS) -> list:
        """Return human-readable descriptions of capacity violations."""
        cpu: dict = {}
        mem: dict = {}
        for (jid, _), node in self.task_node.items():
            job = jobs[jid]
            cpu[node] = cpu.get(node, 0.0) + self.yields.get(jid, 0.0) * job.cpu_need
            mem[node] = mem.get(node, 0.0) + job.mem_req
        out = []
        for node in sorted(cpu):
            if cpu[node] > 1 + tol:
                out.append(f"node {node}: cpu {cpu[node]:.12g} > 1")
            if mem[node] > 1 + tol:
                out.append(f"node {node}: mem {mem[node]:.12g} > 1")
        for jid, y in self.yields.items():
            if y > 1 + tol or y < -tol:
                out.append(f"job {jid}: yield {y} outside [0, 1]")
        return out


def bounded_stretch(turnaround: float, proc_time: float,
                    threshold: float = STRETCH_THRESHOLD) -> float:
    """Stretch with both turnaround and processing time clamped below at ``threshold``."""
    if not proc_time > 0:
        raise InvalidInput(f"proc_time must be positive, got {proc_time}")
    if not threshold > 0:
        raise InvalidInput(f"threshold must be positive, got {threshold}")
    return max(turnaround, threshold) / max(proc_time, threshold)


def priority(flow_time: float, virtual_time: float) -> float:
    """flow time / virtual time**2; infinite before the job has received any CPU."""
    if virtual_time <= 0:
        return math.inf
    return flow_time / (virtual_time * virtual_time)


def priority_key(prio: float, seq: int) -> tuple:
    """Sort key, larger is more urgent. Earlier submission wins ties."""
    return (prio, -seq)


def cpu_load(node: NodeState, jobs: Mapping[int, JobSpec], running: Iterable[int]) -> float:
    """Sum of CPU needs of the running tasks placed on ``node``."""
    running = set(running)
    return sum(jobs[jid].cpu_need for jid, _ in node.placed_tasks if jid in running)


def virtual_time(segments: Iterable[tuple]) -> float:
    """Integral of yield over (duration, yield) segments."""
    return sum(d * y for d, y in segments)
