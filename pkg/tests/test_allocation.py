import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfrs.allocation import (
    AllocProblem, min_yield_base, optimize_avg, optimize_maxmin, optimize_stretch,
    predicted_stretch,
)
from oracles import can_raise, lexicographic_maxmin_lp

HAND = AllocProblem({1: (0,), 2: (0,), 3: (1,), 4: (1,)}, {1: 1.0, 2: 1.0, 3: 0.5, 4: 1.0})


def capacity_ok(problem, y):
    vec = np.array([y[j] for j in problem.jobs])
    return (problem.weights @ vec <= 1 + 1e-9).all()


def test_base_yield_examples():
    assert min_yield_base(AllocProblem({1: (0,), 2: (0,)}, {1: 1.0, 2: 1.0})) == 0.5
    assert min_yield_base(AllocProblem({1: (0,)}, {1: 0.6})) == 1.0
    p = AllocProblem({1: (0, 0), 2: (1,)}, {1: 0.7, 2: 0.75})
    assert min_yield_base(p) == pytest.approx(1 / 1.4)


def test_hand_lp_average_and_maxmin():
    avg = optimize_avg(HAND)
    assert [avg[j] for j in (1, 2, 3, 4)] == pytest.approx([0.5, 0.5, 1.0, 0.5])
    mm = optimize_maxmin(HAND)
    assert [mm[j] for j in (1, 2, 3, 4)] == pytest.approx([0.5, 0.5, 2 / 3, 2 / 3])


def test_maxmin_improves_lone_job():
    p = AllocProblem({1: (0,), 2: (1,), 3: (1,)}, {1: 1.0, 2: 1.0, 3: 1.0})
    assert optimize_maxmin(p) == pytest.approx({1: 1.0, 2: 0.5, 3: 0.5})


def test_no_contention_and_saturated_node():
    p = AllocProblem({1: (0,), 2: (1,)}, {1: 0.9, 2: 1.0})
    assert optimize_avg(p) == pytest.approx({1: 1.0, 2: 1.0})
    p = AllocProblem({j: (0,) for j in range(3)}, {j: 1.0 for j in range(3)})
    assert optimize_avg(p) == pytest.approx({j: 1 / 3 for j in range(3)})
    assert optimize_maxmin(p) == pytest.approx({j: 1 / 3 for j in range(3)})


mapping_st = st.lists(
    st.tuples(st.lists(st.integers(0, 1), min_size=1, max_size=2),
              st.sampled_from([0.25, 0.5, 0.75, 1.0])),
    min_size=1, max_size=4,
)


def build(spec):
    return AllocProblem({i: tuple(nodes) for i, (nodes, _) in enumerate(spec)},
                        {i: c for i, (_, c) in enumerate(spec)})


@settings(max_examples=80, deadline=None)
@given(mapping_st)
def test_maxmin_matches_sequential_lp(spec):
    p = build(spec)
    mm = optimize_maxmin(p)
    ref = lexicographic_maxmin_lp(p.weights)
    assert np.allclose([mm[j] for j in p.jobs], ref, atol=1e-6)


@settings(max_examples=80, deadline=None)
@given(mapping_st)
def test_allocation_invariants(spec):
    p = build(spec)
    base = min_yield_base(p)
    avg, mm = optimize_avg(p), optimize_maxmin(p)
    for y in (avg, mm):
        assert capacity_ok(p, y)
        assert all(base - 1e-9 <= v <= 1 + 1e-9 for v in y.values())
        assert min(y.values()) == pytest.approx(base, abs=1e-9)
    assert sum(avg.values()) >= sum(mm.values()) - 1e-6
    y = np.array([mm[j] for j in p.jobs])
    assert not any(can_raise(p.weights, y, k) for k in range(len(y)))


def test_stretch_examples():
    single = AllocProblem({1: (0,)}, {1: 1.0}, flow_time={1: 100}, virtual_time={1: 50})
    assert optimize_stretch(single, "max") == pytest.approx({1: 1.0})
    assert optimize_stretch(single, "avg") == pytest.approx({1: 1.0})
    twin = AllocProblem({1: (0,), 2: (0,)}, {1: 1.0, 2: 1.0}, flow_time={1: 900, 2: 900},
                        virtual_time={1: 300, 2: 300})
    y = optimize_stretch(twin, "max")
    assert y[1] == pytest.approx(y[2]) and y[1] + y[2] == pytest.approx(1.0)


def test_stretch_max_favours_tiny_virtual_time():
    p = AllocProblem({1: (0,), 2: (0,)}, {1: 1.0, 2: 1.0}, flow_time={1: 1000, 2: 1000},
                     virtual_time={1: 900, 2: 10}, period=600)
    floors = {1: 0.01, 2: 0.01}
    for mode in ("max", "avg"):
        y = optimize_stretch(p, mode, floors)
        assert y[2] > y[1]
        assert y[1] + y[2] <= 1 + 1e-9
    y = optimize_stretch(p, "max", floors)
    worst = max(predicted_stretch(1000, vt, y[j], 600) for j, vt in ((1, 900), (2, 10)))
    # no split on the simplex does better for the worst predicted stretch
    for a in np.linspace(0.01, 0.99, 99):
        alt = max(predicted_stretch(1000, 900, a, 600), predicted_stretch(1000, 10, 1 - a, 600))
        assert worst <= alt + 1e-6


def test_stretch_respects_floors():
    p = AllocProblem({1: (0,), 2: (0,)}, {1: 1.0, 2: 1.0}, flow_time={1: 10, 2: 10},
                     virtual_time={1: 5, 2: 5})
    y = optimize_stretch(p, "avg", {1: 0.7, 2: 0.1})
    assert y[1] >= 0.7 - 1e-12 and y[2] >= 0.1 - 1e-12
