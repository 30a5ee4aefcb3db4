import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from onlinefield.arrival import (WARMUP_RATE, ArrivalRecord, draw_interarrivals, estimate_rate,
                                 generate_stream, interarrival_pdf)
from onlinefield.errors import InvalidArgument


def recs(*its):
    return [ArrivalRecord(i, t) for i, t in enumerate(its)]


def test_pdf_values():
    assert interarrival_pdf(0.0, 0.5) == 0.5
    assert interarrival_pdf(2.0, 0.5) == pytest.approx(0.5 * math.exp(-1.0))
    with pytest.raises(InvalidArgument):
        interarrival_pdf(-1.0, 0.5)
    with pytest.raises(InvalidArgument):
        interarrival_pdf(1.0, 0.0)


def test_estimate_rate_hand_values():
    assert estimate_rate(recs(0, 10, 20, 30)) == pytest.approx(0.1)
    assert estimate_rate(recs(5)) == WARMUP_RATE
    with pytest.raises(InvalidArgument):
        estimate_rate([])


def test_stream_starts_at_zero_and_increases():
    s = generate_stream(0.1, 5000, seed=2)
    assert s[0] == ArrivalRecord(0, 0)
    its = [r.arrival_iteration for r in s]
    assert all(b > a for a, b in zip(its, its[1:]))
    assert its[-1] < 5000
    assert [r.frame_id for r in s] == list(range(len(s)))


def test_stream_uses_the_shared_draws():
    gaps = draw_interarrivals(0.01, 20, seed=9)
    s = generate_stream(0.01, 10**9, seed=9, max_frames=21)
    expected = np.ceil(np.cumsum(gaps)).astype(int)
    # at this low rate ties after rounding are essentially impossible
    assert [r.arrival_iteration for r in s[1:]] == expected.tolist()


def test_stream_collisions_pushed_forward():
    s = generate_stream(5.0, 200, seed=0)
    its = [r.arrival_iteration for r in s]
    assert its == list(range(len(its)))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.005, 2.0), st.integers(0, 2**31))
def test_stream_is_deterministic(lam, seed):
    assert generate_stream(lam, 2000, seed) == generate_stream(lam, 2000, seed)


def test_rate_recovery_on_long_stream():
    for lam in (0.02, 0.05, 0.1):
        s = generate_stream(lam, 10**9, seed=11, max_frames=500)
        assert estimate_rate(s) == pytest.approx(lam, rel=0.1)


def test_interarrivals_exponential():
    x = draw_interarrivals(0.1, 10_000, seed=4)
    assert stats.kstest(x, "expon", args=(0, 10.0)).pvalue > 0.01


def test_invalid_rates():
    for bad in (0.0, -1.0):
        with pytest.raises(InvalidArgument):
            generate_stream(bad, 10, 0)
        with pytest.raises(InvalidArgument):
            draw_interarrivals(bad, 10, 0)
    with pytest.raises(InvalidArgument):
        generate_stream(0.1, 0, 0)
