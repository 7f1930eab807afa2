import numpy as np

from dfrs.core import JobSpec
from dfrs.engine import EngineConfig, run
from dfrs.schedulers import make_policy, parse_algorithm_name

ALGORITHMS = (
    "greedy*/opt=min", "greedyp*/opt=min", "greedypm*/opt=avg", "greedy/per/opt=min",
    "greedyp/per/opt=avg", "greedypm/per/opt=min/mft=600", "greedy*/per/opt=avg",
    "greedyp*/per/opt=min", "greedypm*/per/opt=min/mvt=600", "mcb8*/opt=min",
    "mcb8/per/opt=avg", "mcb8*/per/opt=min/mvt=600", "/per/opt=min", "/stretch-per/opt=max",
    "/stretch-per/opt=avg", "fcfs", "easy",
)


def simulate(jobs, name, nodes, penalty=0.0, period=600.0, **kw):
    return run(jobs, make_policy(parse_algorithm_name(name)), nodes,
               EngineConfig(penalty=penalty, period=period, **kw))


def random_trace(rng, n_jobs, nodes, max_tasks=None, span=2000.0, p_max=800.0):
    max_tasks = max_tasks or nodes
    jobs = []
    for i in range(n_jobs):
        tasks = int(rng.integers(1, max_tasks + 1))
        jobs.append(JobSpec(
            i, float(np.round(rng.uniform(0, span), 3)), tasks,
            float(rng.choice([0.25, 0.5, 1.0])), float(rng.choice([0.1, 0.2, 0.3, 0.5, 0.8])),
            float(np.round(rng.uniform(1, p_max), 3)),
        ))
    return jobs


def check_conservation(report):
    for rec in report.completed:
        assert abs(rec.vt - rec.proc_time) <= 1e-6, rec
        assert abs(rec.vt_integral - rec.proc_time) <= 1e-6 * max(1.0, rec.proc_time), rec
