import math

import pytest
from hypothesis import given, strategies as st

from dfrs.core import (
    ClusterConfig, InvalidInput, JobSpec, NodeState, PlacementMap, bounded_stretch,
    cpu_load, priority, priority_key, virtual_time,
)


def test_bounded_stretch_examples():
    assert bounded_stretch(14400, 7200) == 2.0
    assert bounded_stretch(8, 2) == 1.0
    assert bounded_stretch(3600, 60) == 60.0


def test_bounded_stretch_rejects_nonpositive_proc_time():
    with pytest.raises(InvalidInput):
        bounded_stretch(10, 0)
    with pytest.raises(InvalidInput):
        bounded_stretch(10, 5, threshold=0)


@given(st.floats(0.01, 1e6), st.floats(0, 1e6))
def test_bounded_stretch_at_least_one(p, extra):
    assert bounded_stretch(p + extra, p) >= 1.0


def test_virtual_time_and_priority_walkthrough():
    vt = virtual_time([(10, 1.0), (120, 0.0), (30, 0.5)])
    assert vt == 25
    assert priority(10 + 120 + 30, vt) == pytest.approx(0.256)
    assert priority(50, 0) == math.inf


@given(st.floats(0.1, 1e5), st.floats(0.1, 1e5), st.floats(0.01, 10))
def test_priority_monotone(ft, vt, bump):
    assert priority(ft, vt + bump) < priority(ft, vt)
    assert priority(ft + bump, vt) > priority(ft, vt)


def test_priority_ties_go_to_earlier_submission():
    assert priority_key(1.0, 3) > priority_key(1.0, 7)
    assert priority_key(math.inf, 9) > priority_key(1e9, 0)


def test_cpu_load_counts_running_tasks_only():
    jobs = {1: JobSpec(1, 0, 1, 1.0, 0.1, 5), 2: JobSpec(2, 0, 1, 0.5, 0.1, 5)}
    node = NodeState(0, {(1, 0), (2, 0)})
    assert cpu_load(NodeState(0), jobs, []) == 0.0
    assert cpu_load(node, jobs, [1, 2]) == 1.5
    assert cpu_load(NodeState(0, {(2, 0)}), jobs, [1]) == 0.0


@pytest.mark.parametrize("kwargs", [
    dict(release=-1), dict(num_tasks=0), dict(cpu_need=0), dict(cpu_need=1.5),
    dict(mem_req=0), dict(mem_req=2), dict(proc_time=0),
])
def test_jobspec_validation(kwargs):
    base = dict(id=1, release=0, num_tasks=1, cpu_need=1.0, mem_req=0.5, proc_time=1)
    base.update(kwargs)
    with pytest.raises(InvalidInput):
        JobSpec(**base)


def test_jobspec_round_trip_and_work():
    j = JobSpec(4, 2.5, 3, 0.5, 0.2, 100)
    assert JobSpec.from_dict(j.to_dict()) == j
    assert j.work == 150 and j.demand == 1.5


def test_cluster_config_needs_nodes():
    with pytest.raises(InvalidInput):
        ClusterConfig(0)


def test_placement_violations():
    jobs = {1: JobSpec(1, 0, 2, 1.0, 0.6, 5), 2: JobSpec(2, 0, 1, 1.0, 0.6, 5)}
    ok = PlacementMap.from_job_nodes({1: (0, 1)}, {1: 1.0})
    assert ok.violations(jobs) == []
    assert ok.job_nodes() == {1: (0, 1)}
    bad = PlacementMap.from_job_nodes({1: (0, 1), 2: (0,)}, {1: 0.5, 2: 0.5})
    assert bad.violations(jobs) == ["node 0: mem 1.2 > 1"]
