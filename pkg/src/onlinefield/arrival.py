"""Poisson model of the keyframe stream.

Time is measured in training iterations throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

WARMUP_RATE = 0.02


@dataclass(frozen=True)
class ArrivalRecord:
    frame_id: int
    arrival_iteration: int


def interarrival_pdf(x: float, lam: float) -> float:
    if x < 0:
        raise InvalidArgument("interval must be non-negative")
    if not lam > 0:
        raise InvalidArgument("rate must be positive")
    return lam * math.exp(-lam * x)


def estimate_rate(records, now: int | None = None) -> float:
    """Global average rate (count - 1) / span, or the warmup default.

    `now` is accepted for interface symmetry; the global estimator ignores it.
    """
    records = list(records)
    if not records:
        raise InvalidArgument("no arrival records")
    first, last = records[0].arrival_iteration, records[-1].arrival_iteration
    if len(records) >= 2 and last > first:
        return (len(records) - 1) / (last - first)
    return WARMUP_RATE


def draw_interarrivals(lam: float, n: int, seed: int) -> np.ndarray:
    """Continuous Exp(lam) gaps, the raw draws behind `generate_stream`."""
    if not lam > 0:
        raise InvalidArgument("rate must be positive")
    return np.random.default_rng(seed).exponential(1.0 / lam, size=n)


def generate_stream(lam: float, horizon: int, seed: int, max_frames: int | None = None) -> list[ArrivalRecord]:
    """Simulated keyframe arrivals on the integer iteration clock.

    Frame 0 arrives at iteration 0 (the clock starts with the first frame);
    later arrivals are ceil'd cumulative sums of Exp(lam) gaps. Collisions
    after rounding push the later frame to the next free iteration. Arrivals
    at or beyond `horizon` are dropped, as is everything past `max_frames`.
    The k-th gap is the k-th value of ``draw_interarrivals(lam, n, seed)``.
    """
    if not lam > 0:
        raise InvalidArgument("rate must be positive")
    if not horizon > 0:
        raise InvalidArgument("horizon must be positive")
    rng = np.random.default_rng(seed)
    records = [ArrivalRecord(0, 0)]
    t = 0.0
    last = 0
    while max_frames is None or len(records) < max_frames:
        t += rng.exponential(1.0 / lam)
        it = max(math.ceil(t), last + 1)
        if it >= horizon:
            break
        records.append(ArrivalRecord(len(records), it))
        last = it
    return records
