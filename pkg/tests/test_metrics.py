import numpy as np
import pytest

from dfrs.bound import lower_bound_stretch
from dfrs.core import JobSpec
from dfrs.engine import GIB, Ledger
from dfrs.metrics import bandwidth_stats, compute_metrics, degradation, underutilization
from helpers import random_trace, simulate


def test_degradation_examples():
    one = [JobSpec(1, 0, 1, 1.0, 0.2, 50)]
    rep = simulate(one, "greedyp*/opt=min", 1)
    assert degradation(rep, lower_bound_stretch(one, 1)) == pytest.approx(1.0)
    pair = [JobSpec(1, 0, 1, 1.0, 0.2, 100), JobSpec(2, 0, 1, 1.0, 0.2, 100)]
    rep = simulate(pair, "greedyp*/opt=min", 1)
    assert degradation(rep, lower_bound_stretch(pair, 1)) == pytest.approx(1.0, rel=1e-3)


def test_underutilization_examples():
    job = JobSpec(1, 0, 1, 1.0, 0.2, 100)
    assert underutilization(simulate([job], "greedyp*/opt=min", 1)) == (0.0, 0.0)
    late = simulate([job], "/per/opt=min", 1, period=5)
    assert underutilization(late) == pytest.approx((5.0, 0.05))
    # A is evicted by B, then resumes after B and pays a 300 s penalty
    jobs = [JobSpec(1, 0, 1, 1.0, 0.6, 100), JobSpec(2, 10, 1, 1.0, 0.6, 50)]
    rep = simulate(jobs, "greedyp*/opt=min", 1, penalty=300)
    assert underutilization(rep)[0] == pytest.approx(300.0)


def test_bandwidth_examples():
    zero = bandwidth_stats(Ledger(), 100.0, 3)
    assert zero.gib_per_s == 0 and zero.preemptions_per_job == 0
    led = Ledger(migrations=1, migrate_bytes=2 * 4 * GIB)
    bw = bandwidth_stats(led, 1000.0, 1)
    assert bw.gib_per_s == pytest.approx(8 / 1000)
    assert bw.migrations_per_hour == pytest.approx(3.6) and bw.migrations_per_job == 1
    with pytest.raises(ValueError):
        bandwidth_stats(led, 0.0, 1)


@pytest.mark.parametrize("seed", range(4))
def test_penalty_never_reduces_underutilization(seed):
    jobs = random_trace(np.random.default_rng(seed), 10, 3)
    values = [underutilization(simulate(jobs, "greedypm*/per/opt=min/mvt=600", 3,
                                        penalty=pen))[0] for pen in (0, 60, 300)]
    assert values == sorted(values)


def test_compute_metrics_fields():
    jobs = random_trace(np.random.default_rng(5), 6, 2)
    rep = simulate(jobs, "greedypm*/per/opt=min/mvt=600", 2, penalty=300)
    m = compute_metrics(rep)
    assert m.degradation is None and m.s_lower is None
    assert m.max_stretch >= m.mean_stretch >= 1
    assert min(v for v in m.to_dict().values() if v is not None) >= 0
    m2 = compute_metrics(rep, lower_bound_stretch(jobs, 2))
    assert m2.degradation == pytest.approx(m2.max_stretch / m2.s_lower)
