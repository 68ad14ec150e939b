import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from lbsim import stats


def test_t_half_width_matches_scipy_interval():
    x = [1.0, 2.0, 4.0, 3.5, 2.2]
    lo, hi = sps.t.interval(0.95, len(x) - 1, loc=np.mean(x), scale=sps.sem(x))
    assert stats.t_half_width(x) == pytest.approx((hi - lo) / 2, rel=1e-12)


def test_mean_ci_degenerate():
    assert stats.mean_ci([]) == stats.ZERO
    e = stats.mean_ci([3.0])
    assert e.value == 3.0 and math.isinf(e.ci_half) and not e.reliable
    e = stats.mean_ci([2.0, 2.0, 2.0])
    assert e.ci_half == 0.0


def test_batch_means_ratio():
    e = stats.batch_means_ci([1, 2, 3, 4] * 5, [2, 2, 2, 2] * 5)
    assert e.value == pytest.approx(50 / 40)
    assert e.reliable
    assert e.ci_half > 0


def test_batch_means_flags_few_batches():
    e = stats.batch_means_ci([1.0] * 5, [1.0] * 5)
    assert not e.reliable
    assert stats.batch_means_ci([0, 0], [0, 0]) == stats.ZERO


def test_batch_coverage_iid():
    # nominal 95% intervals should cover the mean most of the time
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(400):
        x = rng.normal(1.0, 0.5, 20)
        hits += stats.batch_means_ci(x, np.ones(20)).covers(1.0)
    assert 0.91 < hits / 400 < 0.99


def test_batch_accumulator():
    acc = stats.BatchAccumulator(10.0, 30.0, 20)
    assert acc.batch_of(10.0) == 0 and acc.batch_of(29.99) == 19 and acc.batch_of(30.0) == 19
    for b in range(20):
        acc.arrivals[b] += 2
        acc.record_wait(b, 0.0, 1.0)
        acc.record_wait(b, 2.0, 3.0)
    assert acc.mean_wait().value == pytest.approx(1.0)
    assert acc.p_wait().value == pytest.approx(0.5)
    assert acc.mean_response().value == pytest.approx(2.0)
    assert acc.p_block().value == 0.0
    with pytest.raises(ValueError):
        stats.BatchAccumulator(5.0, 5.0)


def test_fluid_occupancy_average_static():
    # counts (1,1,0,0) held fixed on N=4 stations: Q = (2,), q = (0.5,)
    q = stats.fluid_occupancy_average([0.0], [[2]], 4, 0.0, 10.0)
    assert q.tolist() == [0.5]


def test_fluid_occupancy_average_piecewise():
    times = [0.0, 1.0, 3.0]
    rows = [[1], [2, 1], [0]]
    q = stats.fluid_occupancy_average(times, rows, 2, 0.0, 4.0)
    assert q == pytest.approx([(1 * 1 + 2 * 2 + 0) / 8, (1 * 2) / 8])
    q2 = stats.fluid_occupancy_average(times, rows, 2, 2.0, 4.0)
    assert q2 == pytest.approx([2 / 4, 1 / 4])


def test_diffusion_scale():
    assert stats.diffusion_scale([400], 400)[0] == 0.0
    v = stats.diffusion_scale([380, 20], 400)
    assert v.tolist() == pytest.approx([-1.0, 1.0])
    assert stats.diffusion_scale([], 4).tolist() == [-2.0]


def test_message_count():
    assert stats.message_count(400, 100) == 4.0
    assert stats.message_count(0, 0) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
def test_half_width_non_negative(xs):
    assert stats.t_half_width(xs) >= 0
