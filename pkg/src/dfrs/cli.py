"""Experiment driver: workloads in, CSV of metrics and a JSON manifest out."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .bound import BoundUnavailable, lower_bound_stretch
from .core import ClusterConfig
from .engine import GIB, EngineConfig, run
from .metrics import compute_metrics
from .schedulers import AlgorithmNameError, make_policy, parse_algorithm_name
from .workload import (
    SyntheticParams, dump_trace, hpc2n_transform, load_trace, offered_load, parse_swf,
    scale_load, split_segments, synth_generate,
)

logger = logging.getLogger("dfrs")

SYNTH_LOAD = 0.7  # raw synthetic traces are heavily overloaded

CSV_COLUMNS = (
    "trace", "load", "algorithm", "penalty", "period", "num_jobs", "rejected",
    "max_stretch", "mean_stretch", "s_lower", "degradation", "underutilization",
    "normalized_underutilization", "gb_per_s", "preemptions_per_hour",
    "migrations_per_hour", "preemptions_per_job", "migrations_per_job", "wall_time", "error",
)


@dataclass
class ExperimentSpec:
    algorithms: list
    nodes: int = 32
    workload: Optional[str] = None  # None means synthetic
    format: str = "swf"
    synthetic: dict = field(default_factory=dict)  # SyntheticParams overrides
    loads: Optional[list] = None
    traces: int = 1
    seed: int = 0
    penalty: float = 300.0
    periods: Optional[list] = None  # default: twice the penalty
    bound: bool = False
    bound_tol: float = 1e-3
    bound_max_jobs: int = 2000
    node_mem_bytes: float = 8 * GIB
    swf_node_mem_bytes: float = 2 * GIB
    swf_cores: int = 2
    out: str = "results"
    event_log: bool = False
    workers: int = 1

    def __post_init__(self):
        for name in self.algorithms:
            parse_algorithm_name(name)
        for load in self.loads or ():
            if not 0 < load <= 1:
                raise ValueError(f"load {load} outside (0, 1]")
        if self.nodes < 1 or self.traces < 1:
            raise ValueError("nodes and traces must be >= 1")

    def period_list(self) -> list:
        if self.periods:
            return list(self.periods)
        return [2 * self.penalty if self.penalty > 0 else 600.0]

    def to_dict(self) -> dict:
        return asdict(self)


def build_traces(spec: ExperimentSpec) -> list:
    """[(trace id, load, jobs)] in a deterministic order."""
    cluster = ClusterConfig(spec.nodes, spec.node_mem_bytes)
    base = []
    if spec.workload is None:
        for i in range(spec.traces):
            params = SyntheticParams(**{**spec.synthetic, "seed": spec.seed + i})
            base.append((f"s{i}", synth_generate(params)))
    else:
        with open(spec.workload) as fp:
            if spec.format == "swf":
                jobs = hpc2n_transform(parse_swf(fp), spec.swf_node_mem_bytes, spec.swf_cores)
                segments = split_segments(jobs)
            else:
                segments = [load_trace(fp)]
        base = [(f"w{i}", seg) for i, seg in enumerate(segments[:spec.traces])]
    out = []
    for tid, jobs in base:
        if spec.loads:
            for load in spec.loads:
                out.append((tid, load, scale_load(jobs, load, cluster)))
        else:
            load = offered_load(jobs, cluster) if len(jobs) > 1 else float("nan")
            out.append((tid, load, jobs))
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9=.]+", "_", text).strip("_")


def _bound_task(args):
    jobs, spec = args
    try:
        return lower_bound_stretch(jobs, spec.nodes, spec.bound_tol, spec.bound_max_jobs), ""
    except BoundUnavailable as exc:
        return None, f"bound unavailable: {exc}"


def _sim_task(args):
    tid, load, jobs, algo, period, bound, spec = args
    row = dict(trace=tid, load=load, algorithm=algo, penalty=spec.penalty, period=period,
               num_jobs=len(jobs))
    started = time.perf_counter()
    log_fp = None
    try:
        if spec.event_log:
            path = Path(spec.out) / "events" / f"{tid}_{load}_{_slug(algo)}_{period:g}.tsv"
            path.parent.mkdir(parents=True, exist_ok=True)
            log_fp = open(path, "w")
        cfg = EngineConfig(spec.penalty, period, spec.node_mem_bytes, log_fp)
        report = run(jobs, make_policy(parse_algorithm_name(algo)), spec.nodes, cfg)
        m = compute_metrics(report, bound)
        row.update(
            rejected=len(report.rejected), max_stretch=m.max_stretch,
            mean_stretch=m.mean_stretch, s_lower=m.s_lower, degradation=m.degradation,
            underutilization=m.underutilization,
            normalized_underutilization=m.normalized_underutilization,
            gb_per_s=m.gib_per_s, preemptions_per_hour=m.preemptions_per_hour,
            migrations_per_hour=m.migrations_per_hour,
            preemptions_per_job=m.preemptions_per_job, migrations_per_job=m.migrations_per_job,
        )
    except Exception as exc:  # one failure must not end the sweep
        logger.exception("%s/%s/%s failed", tid, load, algo)
        row["error"] = f"{type(exc).__name__}: {exc}"
    finally:
        if log_fp:
            log_fp.close()
    row["wall_time"] = time.perf_counter() - started
    return row


def _map(fn, items, workers):
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def run_experiment(spec: ExperimentSpec) -> Path:
    """Run every (trace, load, algorithm, period) combination; returns the CSV path."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = build_traces(spec)
    bounds = [(None, "")] * len(traces)
    if spec.bound:
        bounds = _map(_bound_task, [(jobs, spec) for _, _, jobs in traces], spec.workers)
    tasks = []
    for (tid, load, jobs), (bound, _) in zip(traces, bounds):
        for algo in spec.algorithms:
            for period in spec.period_list():
                tasks.append((tid, load, jobs, algo, period, bound, spec))
    rows = _map(_sim_task, tasks, spec.workers)
    notes = {f"{tid}@{load}": msg for (tid, load, _), (_, msg) in zip(traces, bounds) if msg}
    csv_path = out / "results.csv"
    with open(csv_path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
    manifest = {"version": __version__, "spec": spec.to_dict(), "bound_notes": notes,
                "rows": len(rows)}
    with open(out / "manifest.json", "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
    return csv_path


def spec_from_manifest(path: str, out: Optional[str] = None) -> ExperimentSpec:
    with open(path) as fp:
        data = json.load(fp)["spec"]
    if out is not None:
        data["out"] = out
    return ExperimentSpec(**data)


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dfrs", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate algorithms on workloads and write metrics")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--workload", metavar="PATH")
    src.add_argument("--synthetic", action="store_true")
    src.add_argument("--manifest", metavar="PATH", help="rerun a previous experiment")
    r.add_argument("--format", choices=("swf", "json"), default="swf")
    r.add_argument("--nodes", type=int, default=32)
    r.add_argument("--algorithms", default="greedypm*/per/opt=min/mvt=600,easy",
                   help="comma-separated algorithm names")
    r.add_argument("--penalty", type=float, default=300.0)
    per = r.add_mutually_exclusive_group()
    per.add_argument("--period", type=float)
    per.add_argument("--period-sweep", type=_floats, metavar="LIST")
    r.add_argument("--load", type=_floats, metavar="LIST",
                   help=f"target offered loads (synthetic default {SYNTH_LOAD})")
    r.add_argument("--traces", type=int, default=1)
    r.add_argument("--num-jobs", type=int, default=200, help="jobs per synthetic trace")
    r.add_argument("--max-exp", type=int, default=5,
                   help="synthetic task counts are 2**k, k <= max-exp")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--bound", nargs="?", type=float, const=1e-3, default=None, metavar="TOL")
    r.add_argument("--bound-max-jobs", type=int, default=2000)
    r.add_argument("--out", default="results")
    r.add_argument("--event-log", action="store_true")
    r.add_argument("--workers", type=int, default=1)

    b = sub.add_parser("bound", help="lower bound on optimal max stretch of a JSON trace")
    b.add_argument("trace")
    b.add_argument("--nodes", type=int, required=True)
    b.add_argument("--tol", type=float, default=1e-3)

    t = sub.add_parser("transform", help="SWF log to JSON traces, one per week")
    t.add_argument("swf")
    t.add_argument("out_dir")
    t.add_argument("--node-mem-gib", type=float, default=2.0)
    t.add_argument("--cores", type=int, default=2)
    t.add_argument("--no-split", action="store_true")

    g = sub.add_parser("generate", help="write a synthetic JSON trace")
    g.add_argument("out")
    g.add_argument("--num-jobs", type=int, default=200)
    g.add_argument("--max-exp", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--nodes", type=int, default=32)
    g.add_argument("--load", type=float, default=SYNTH_LOAD)
    return ap


def _cmd_run(ns) -> int:
    if ns.manifest:
        spec = spec_from_manifest(ns.manifest, ns.out)
    else:
        if not ns.workload and not ns.synthetic:
            raise ValueError("give --workload PATH, --synthetic or --manifest PATH")
        periods = ns.period_sweep or ([ns.period] if ns.period else None)
        spec = ExperimentSpec(
            algorithms=[a.strip() for a in ns.algorithms.split(",") if a.strip()],
            nodes=ns.nodes, workload=ns.workload, format=ns.format,
            synthetic={"num_jobs": ns.num_jobs, "tasks": {"dist": "pow2", "max_exp": ns.max_exp}},
            loads=ns.load or (None if ns.workload else [SYNTH_LOAD]),
            traces=ns.traces, seed=ns.seed, penalty=ns.penalty,
            periods=periods, bound=ns.bound is not None,
            bound_tol=ns.bound if ns.bound is not None else 1e-3,
            bound_max_jobs=ns.bound_max_jobs, out=ns.out, event_log=ns.event_log,
            workers=ns.workers,
        )
    path = run_experiment(spec)
    print(path)
    return 0


def _cmd_bound(ns) -> int:
    with open(ns.trace) as fp:
        jobs = load_trace(fp)
    res = lower_bound_stretch(jobs, ns.nodes, ns.tol)
    print(json.dumps({"s_lower": res.s_lower, "s_upper": res.s_upper,
                      "iterations": res.iterations}))
    return 0


def _cmd_transform(ns) -> int:
    with open(ns.swf) as fp:
        jobs = hpc2n_transform(parse_swf(fp), ns.node_mem_gib * GIB, ns.cores)
    segments = [jobs] if ns.no_split else split_segments(jobs)
    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, seg in enumerate(segments):
        with open(out / f"trace_{i:03d}.json", "w") as fp:
            dump_trace(seg, fp)
    print(f"{len(segments)} traces, {len(jobs)} jobs")
    return 0


def _cmd_generate(ns) -> int:
    jobs = synth_generate(SyntheticParams(
        num_jobs=ns.num_jobs, tasks={"dist": "pow2", "max_exp": ns.max_exp}, seed=ns.seed))
    if ns.load > 0:  # --load 0 keeps the generator's natural load
        jobs = scale_load(jobs, ns.load, ClusterConfig(ns.nodes))
    with open(ns.out, "w") as fp:
        dump_trace(jobs, fp)
    return 0


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * ns.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "bound": _cmd_bound, "transform": _cmd_transform,
               "generate": _cmd_generate}[ns.command]
    try:
        return handler(ns)
    except (AlgorithmNameError, ValueError, OSError) as exc:
        print(f"dfrs {ns.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
