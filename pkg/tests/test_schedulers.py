import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfrs.core import JobSpec
from dfrs.schedulers import (
    AdmissionError, AlgorithmNameError, BatchState, ClusterState, EasyReservationError,
    JobView, SchedContext, ALGORITHM_TABLE, easy_step, equipartition_step, fcfs_step, greedyP_admit,
    greedyPM_admit, greedy_place, parse_algorithm_name, remap_pin_set, theorem4_instance,
    theorem4_sequential_completions,
)


def view(jid, seq=None, tasks=1, cpu=1.0, mem=0.1, vt=0.0, release=0.0, p=None):
    return JobView(jid, jid if seq is None else seq, release, tasks, cpu, mem, vt, vt > 0, p)


def ctx_of(views, mapping, now=1000.0, nodes=1):
    return SchedContext(now, nodes, 600.0, {v.id: v for v in views}, dict(mapping),
                        {j: 1.0 for j in mapping})


def test_parse_recommended_name():
    cfg = parse_algorithm_name("greedypm*/per/opt=min/mvt=600")
    assert (cfg.on_submit, cfg.on_complete, cfg.periodic, cfg.optimizer) == \
        ("greedypm", "greedy", "mcb8", "min")
    assert cfg.remap_limit == ("mvt", 600.0)
    assert cfg.name == "greedypm*/per/opt=min/mvt=600"


def test_parse_stretch_name():
    cfg = parse_algorithm_name("/stretch-per/opt=max")
    assert (cfg.on_submit, cfg.on_complete, cfg.periodic, cfg.optimizer) == \
        ("none", "none", "mcb8-stretch", "max")


@pytest.mark.parametrize("name", [
    "greedy/opt=avg/per/per", "greedy/opt=min", "mcb8/opt=min", "greedy*/opt=max",
    "/stretch-per/opt=min", "greedy*/opt=min/mvt=600", "bogus*/opt=min", "greedy*/per",
    "*/per/opt=min", "greedy**/opt=min", "greedy*/opt=min/opt=avg", "greedy*/opt=min/xyz",
])
def test_parse_rejects(name):
    with pytest.raises(AlgorithmNameError):
        parse_algorithm_name(name)


def test_every_table_row_round_trips():
    names = set()
    for sub, comp, per in ALGORITHM_TABLE:
        head = "" if sub == "none" else sub
        head += "*" if comp != "none" else ""
        tail = {"none": "", "mcb8": "/per", "mcb8-stretch": "/stretch-per"}[per]
        opt = "max" if per == "mcb8-stretch" else "min"
        name = f"{head}{tail}/opt={opt}"
        cfg = parse_algorithm_name(name)
        assert (cfg.on_submit, cfg.on_complete, cfg.periodic) == (sub, comp, per)
        assert parse_algorithm_name(cfg.name) == cfg
        names.add(name)
    assert len(names) == 14
    for plain in ("fcfs", "easy", "equipartition"):
        assert parse_algorithm_name(plain).kind == plain


def test_greedy_place_examples():
    st_ = ClusterState(3)
    st_.load[:] = (0.3, 0.1, 0.5)
    assert greedy_place(view(1), st_) == (1,)
    assert greedy_place(view(2, tasks=2), ClusterState(2)) == (0, 1)
    full = ClusterState(2)
    full.mem[:] = 0.95
    assert greedy_place(view(3), full) is None


def running_state(views, mapping, nodes=1):
    st_ = ClusterState(nodes)
    for v in views:
        if v.id in mapping:
            st_.add(v.id, mapping[v.id], v.cpu_need, v.mem_req)
    return st_


def test_greedyp_hand_trace():
    # priority = ft / vt^2 with ft = 1000: A low (vt 31.6 -> ~1), B high (vt ~10.5 -> ~9)
    a, b = view(1, mem=0.6, vt=math.sqrt(1000)), view(2, mem=0.3, vt=math.sqrt(1000 / 9))
    inc = view(3, mem=0.5, release=1000.0)
    ctx = ctx_of([a, b, inc], {1: (0,), 2: (0,)})
    nodes, paused = greedyP_admit(inc, running_state([a, b], ctx.mapping), ctx)
    assert nodes == (0,) and paused == [1]


def test_greedyp_no_pause_needed_and_unmark_sweep():
    a = view(1, mem=0.3, vt=100)
    inc = view(3, mem=0.3, release=1000.0)
    ctx = ctx_of([a, inc], {1: (0,)})
    assert greedyP_admit(inc, running_state([a], ctx.mapping), ctx) == ((0,), [])
    # lowest-priority A is tiny and gets marked first; B must go too; A is unmarked later
    a, b = view(1, mem=0.2, vt=200), view(2, mem=0.7, vt=100)
    inc = view(3, mem=0.7, release=1000.0)
    ctx = ctx_of([a, b, inc], {1: (0,), 2: (0,)})
    nodes, paused = greedyP_admit(inc, running_state([a, b], ctx.mapping), ctx)
    assert nodes == (0,) and paused == [2]


def test_greedyp_never_pauses_higher_priority():
    a = view(1, mem=0.8, vt=0.0, seq=0)  # infinite priority, submitted earlier
    inc = view(2, mem=0.5, seq=1, release=1000.0)
    ctx = ctx_of([a, inc], {1: (0,)})
    assert greedyP_admit(inc, running_state([a], ctx.mapping), ctx) == (None, [])


def test_greedyp_rejects_impossible_job():
    inc = view(1, tasks=3, mem=0.6)
    ctx = ctx_of([inc], {}, nodes=2)
    with pytest.raises(AdmissionError):
        greedyP_admit(inc, ClusterState(2), ctx)


def test_greedypm_migrates_instead_of_pausing():
    a = view(1, mem=0.3, vt=100)  # lowest priority
    b = view(2, mem=0.5, vt=10)
    e = view(3, mem=0.6, vt=10)
    inc = view(4, mem=0.5, release=1000.0)
    ctx = ctx_of([a, b, e, inc], {1: (0,), 2: (0,), 3: (1,)}, nodes=2)
    state = running_state([a, b, e], ctx.mapping, nodes=2)
    assert greedyP_admit(inc, state, ctx) == ((0,), [1])
    assert greedyPM_admit(inc, state, ctx) == ((0,), [], {1: (1,)})


def test_greedypm_falls_back_to_pause():
    a = view(1, mem=0.6, vt=100)
    inc = view(2, mem=0.5, release=1000.0)
    ctx = ctx_of([a, inc], {1: (0,)})
    state = running_state([a], ctx.mapping)
    assert greedyPM_admit(inc, state, ctx) == ((0,), [1], {})


def test_remap_pin_set():
    jobs = [view(1, vt=300), view(2, vt=900)]
    assert remap_pin_set(jobs, 1000, ("mvt", 600)) == {1}
    assert remap_pin_set(jobs, 1000, None) == set()
    assert remap_pin_set([view(1, release=500)], 1000, ("mft", 600)) == {1}
    assert remap_pin_set([view(1, release=0)], 1000, ("mft", 600)) == set()


def batch_ctx(views, now, nodes=2):
    return SchedContext(now, nodes, 600, {v.id: v for v in views}, {}, {})


def test_easy_backfills_up_to_reservation():
    j1, j2, j3 = view(1, p=10), view(2, tasks=2, p=5), view(3, p=10)
    st_ = BatchState(2)
    st_.queue = [1]
    assert easy_step(st_, batch_ctx([j1, j2, j3], 0)) == [(1, (0,))]
    st_.queue += [2, 3]
    starts = easy_step(st_, batch_ctx([j1, j2, j3], 0))
    assert starts == [(3, (1,))]
    assert st_.reservation[:2] == (2, 10)


def test_easy_does_not_backfill_long_job():
    j1, j2, j3 = view(1, p=10), view(2, tasks=2, p=5), view(3, p=12)
    st_ = BatchState(2)
    st_.queue = [1, 2, 3]
    assert easy_step(st_, batch_ctx([j1, j2, j3], 0)) == [(1, (0,))]
    assert st_.queue == [2, 3]


def test_empty_cluster_starts_head():
    for step in (fcfs_step, easy_step):
        st_ = BatchState(2)
        st_.queue = [1]
        assert step(st_, batch_ctx([view(1, tasks=2, p=3)], 0)) == [(1, (0, 1))]


def test_easy_raises_if_reservation_moves_later():
    st_ = BatchState(2)
    st_.running = {1: ((0,), 50.0)}
    st_.free = [1]
    st_.queue = [2]
    st_.reservation = (2, 10.0, (0, 1))
    with pytest.raises(EasyReservationError):
        easy_step(st_, batch_ctx([view(2, tasks=2, p=1)], 0))


def test_equipartition_step():
    assert equipartition_step([1, 2, 3, 4]) == {j: 0.25 for j in (1, 2, 3, 4)}
    assert equipartition_step([7]) == {7: 1.0}


def test_adversarial_instance_shape():
    jobs = theorem4_instance(4)
    assert [j.proc_time for j in jobs] == [3, 3, 1.5, 1]
    assert [j.release for j in jobs] == [0, 0, 3, 4.5]
    for n in (3, 7, 20):
        assert theorem4_instance(n)[-1].proc_time == 1


@pytest.mark.parametrize("n", [3, 4, 10, 50])
def test_adversarial_sequential_stretch(n):
    jobs = theorem4_instance(n)
    done = theorem4_sequential_completions(jobs)
    worst = max((done[j.id] - j.release) / j.proc_time for j in jobs)
    assert worst == pytest.approx(1 + sum(1 / i for i in range(1, n)), abs=1e-9)
