"""Trace ingestion, the HPC2N transform, synthetic generation and trace scaling."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import IO, Iterable, Sequence

import numpy as np

from .core import ClusterConfig, InvalidInput, JobSpec

logger = logging.getLogger(__name__)

SWF_FIELDS = (
    "job_id", "submit_time", "wait_time", "run_time", "allocated_procs",
    "avg_cpu_time", "used_memory", "requested_procs", "requested_time",
    "requested_memory", "status", "user_id", "group_id", "executable",
    "queue", "partition", "preceding_job", "think_time",
)
UNKNOWN = -1
WEEK = 604800.0
MIN_MEM_FRACTION = 0.10


class SwfParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class SwfRecord:
    job_id: int
    submit_time: float
    wait_time: float
    run_time: float
    allocated_procs: int
    avg_cpu_time: float
    used_memory: float  # KB per processor
    requested_procs: int
    requested_time: float
    requested_memory: float  # KB per processor
    status: int
    extra: tuple = ()  # remaining SWF columns, untouched


def _num(tok: str, lineno: int):
    try:
        v = float(tok)
    except ValueError:
        raise SwfParseError(lineno, f"non-numeric field {tok!r}") from None
    return v


def parse_swf(stream: IO[str] | Iterable[str]) -> list[SwfRecord]:
    records = []
    for lineno, line in enumerate(stream, start=1):
        s = line.strip()
        if not s or s.startswith(";"):
            continue
        toks = s.split()
        if len(toks) < 18:
            raise SwfParseError(lineno, f"expected 18 fields, found {len(toks)}")
        v = [_num(t, lineno) for t in toks[:11]]
        records.append(SwfRecord(
            job_id=int(v[0]), submit_time=v[1], wait_time=v[2], run_time=v[3],
            allocated_procs=int(v[4]), avg_cpu_time=v[5], used_memory=v[6],
            requested_procs=int(v[7]), requested_time=v[8], requested_memory=v[9],
            status=int(v[10]), extra=tuple(_num(t, lineno) for t in toks[11:]),
        ))
    return records


def hpc2n_transform(records: Iterable[SwfRecord], node_mem_bytes: float = 2 * 2**30,
                    cores: int = 2) -> list[JobSpec]:
    """Turn SWF records into jobs with tasks, CPU needs and memory fractions.

    Per-processor memory is max(requested, used) over node memory, floored at
    10%. A job whose processor count is a multiple of ``cores`` and whose
    per-processor memory is below 1/cores runs as multi-threaded tasks that
    saturate a node (one task per ``cores`` processors); otherwise each
    processor is a sequential task using 1/cores of the node CPU. With the
    default ``cores=2`` this is the dual-core HPC2N rule.
    """
    jobs = []
    skipped = 0
    for rec in records:
        procs = rec.allocated_procs if rec.allocated_procs > 0 else rec.requested_procs
        if rec.run_time <= 0 or procs <= 0 or rec.submit_time < 0:
            skipped += 1
            continue
        mem_kb = max(rec.requested_memory, rec.used_memory)
        if mem_kb > 0:
            frac = max(mem_kb * 1024.0 / node_mem_bytes, MIN_MEM_FRACTION)
        else:
            frac = MIN_MEM_FRACTION
        if procs % cores == 0 and frac < 1.0 / cores:
            num_tasks, cpu_need, mem_req = procs // cores, 1.0, frac * cores
        else:
            num_tasks, cpu_need, mem_req = procs, 1.0 / cores, frac
        jobs.append(JobSpec(
            id=rec.job_id, release=float(rec.submit_time), num_tasks=num_tasks,
            cpu_need=cpu_need, mem_req=min(mem_req, 1.0), proc_time=float(rec.run_time),
        ))
    if skipped:
        logger.warning("hpc2n_transform: skipped %d unusable records", skipped)
    return jobs


@dataclass
class SyntheticParams:
    """Inputs of the synthetic generator.

    The defaults are simple stand-ins, not the Lublin-Feitelson model:
    Poisson arrivals, log-uniform runtimes between 30 s and 30 h, and task
    counts 2**k with k uniform on {0..max_exp}.
    """

    num_jobs: int = 1000
    arrival: dict = field(default_factory=lambda: {"dist": "exponential", "mean": 300.0})
    tasks: dict = field(default_factory=lambda: {"dist": "pow2", "max_exp": 7})
    runtime: dict = field(default_factory=lambda: {"dist": "loguniform", "low": 30.0, "high": 108000.0})
    cores_per_node: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_jobs < 1:
            raise InvalidInput("num_jobs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _draw(spec: dict, n: int, rng: np.random.Generator, what: str) -> np.ndarray:
    dist = spec.get("dist")
    if dist == "exponential":
        if spec.get("mean", 0) <= 0:
            raise InvalidInput(f"{what}: exponential mean must be positive")
        return rng.exponential(spec["mean"], n)
    if dist == "constant":
        if spec.get("value", 0) <= 0:
            raise InvalidInput(f"{what}: constant value must be positive")
        return np.full(n, float(spec["value"]))
    if dist == "uniform":
        lo, hi = spec["low"], spec["high"]
        if not 0 < lo <= hi:
            raise InvalidInput(f"{what}: need 0 < low <= high")
        return rng.uniform(lo, hi, n)
    if dist == "loguniform":
        lo, hi = spec["low"], spec["high"]
        if not 0 < lo <= hi:
            raise InvalidInput(f"{what}: need 0 < low <= high")
        return np.exp(rng.uniform(math.log(lo), math.log(hi), n))
    if dist == "pow2":
        k = int(spec.get("max_exp", 7))
        if k < 0:
            raise InvalidInput(f"{what}: max_exp must be >= 0")
        return 2.0 ** rng.integers(0, k + 1, n)
    raise InvalidInput(f"{what}: unknown distribution {dist!r}")


def synth_generate(params: SyntheticParams) -> list[JobSpec]:
    rng = np.random.default_rng(params.seed)
    n = params.num_jobs
    gaps = _draw(params.arrival, n, rng, "arrival")
    gaps[0] = 0.0
    releases = np.cumsum(gaps)
    tasks = _draw(params.tasks, n, rng, "tasks").astype(int)
    runtimes = _draw(params.runtime, n, rng, "runtime")
    if (tasks < 1).any() or (runtimes <= 0).any():
        raise InvalidInput("distributions must produce positive values")
    small = rng.random(n) < 0.55
    x = rng.integers(2, 11, n)
    mem = np.where(small, 0.10, 0.10 * x)
    jobs = []
    for i in range(n):
        cpu = 1.0 / params.cores_per_node if tasks[i] == 1 else 1.0
        jobs.append(JobSpec(
            id=i, release=float(releases[i]), num_tasks=int(tasks[i]), cpu_need=cpu,
            mem_req=round(float(mem[i]), 10), proc_time=float(runtimes[i]),
        ))
    return jobs


@dataclass(frozen=True)
class TraceMeta:
    num_jobs: int
    delta: float
    total_work: float
    span: float


def trace_meta(jobs: Sequence[JobSpec]) -> TraceMeta:
    if not jobs:
        raise InvalidInput("empty trace")
    p = [j.proc_time for j in jobs]
    r = [j.release for j in jobs]
    return TraceMeta(len(jobs), max(p) / min(p), sum(j.work for j in jobs), max(r) - min(r))


def offered_load(jobs: Sequence[JobSpec], cluster: ClusterConfig) -> float:
    """Total work over cluster capacity times the submission span."""
    meta = trace_meta(jobs)
    if meta.span <= 0:
        raise InvalidInput("offered load undefined for a zero submission span")
    return meta.total_work / (cluster.num_nodes * meta.span)


def scale_load(jobs: Sequence[JobSpec], target_load: float,
               cluster: ClusterConfig) -> list[JobSpec]:
    """Stretch or compress inter-arrival times so the offered load hits ``target_load``."""
    if len(jobs) < 2:
        raise InvalidInput("need at least two jobs to scale load")
    if not target_load > 0:
        raise InvalidInput("target_load must be positive")
    factor = offered_load(jobs, cluster) / target_load
    first = min(j.release for j in jobs)
    return [
        JobSpec(j.id, first + (j.release - first) * factor, j.num_tasks,
                j.cpu_need, j.mem_req, j.proc_time)
        for j in jobs
    ]


def split_segments(jobs: Sequence[JobSpec], segment: float = WEEK) -> list[list[JobSpec]]:
    buckets: dict = {}
    for j in jobs:
        buckets.setdefault(int(j.release // segment), []).append(j)
    out = []
    for key in sorted(buckets):
        seg = buckets[key]
        base = min(j.release for j in seg)
        out.append([
            JobSpec(j.id, j.release - base, j.num_tasks, j.cpu_need, j.mem_req, j.proc_time)
            for j in seg
        ])
    return out


def dump_trace(jobs: Sequence[JobSpec], fp: IO[str]) -> None:
    json.dump([j.to_dict() for j in jobs], fp, indent=1)


def load_trace(fp: IO[str]) -> list[JobSpec]:
    return [JobSpec.from_dict(d) for d in json.load(fp)]
