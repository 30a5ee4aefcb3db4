"""Frame and ray sampling strategies for online training."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .arrival import ArrivalRecord, estimate_rate
from .errors import InvalidArgument

DEFAULT_ALPHA = 2.0
DEFAULT_BETA = 4.0
IMAP_RECENT_SHARE = 0.2

RAY = "ray"
FRAME = "frame"


@dataclass
class SamplerState:
    arrivals: list
    current_iteration: int
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    lambda_hat: float | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidArgument("alpha must be positive")
        if not self.beta >= 0:
            raise InvalidArgument("beta must be non-negative")
        if self.arrivals and self.current_iteration < self.arrivals[-1].arrival_iteration:
            raise InvalidArgument("current iteration precedes the latest arrival")
        if self.lambda_hat is None and self.arrivals:
            self.lambda_hat = estimate_rate(self.arrivals, self.current_iteration)

    @property
    def n_frames(self) -> int:
        return len(self.arrivals)

    def ages(self) -> np.ndarray:
        t = np.fromiter((r.arrival_iteration for r in self.arrivals), dtype=float, count=len(self.arrivals))
        return self.current_iteration - t


@dataclass
class SampleBatch:
    """Per-ray frame ids (ray mode) or a single frame id (frame mode)."""

    frame_ids: np.ndarray
    pixels: np.ndarray | None = None
    mode: str = RAY

    def counts(self, n_frames: int) -> np.ndarray:
        return np.bincount(self.frame_ids, minlength=n_frames)


def weight(D, state: SamplerState):
    """Shifted-exponential weight exp(-alpha * lambda * D) + beta / N_S."""
    D = np.asarray(D, dtype=float)
    return np.exp(-state.alpha * state.lambda_hat * D) + state.beta / state.n_frames


def frame_probabilities(state: SamplerState) -> np.ndarray:
    if state.n_frames < 1:
        raise InvalidArgument("no frames to sample from")
    w = weight(state.ages(), state)
    return w / w.sum()


def recent_frame_fraction(beta: float) -> float:
    """Approximate share of samples taken from the newest frame."""
    if beta < 0:
        raise InvalidArgument("beta must be non-negative")
    return 1.0 / (beta + 2.0)


def _draw(p: np.ndarray, batch: int, rng, mode: str) -> SampleBatch:
    if batch < 1:
        raise InvalidArgument("batch must be >= 1")
    if mode == FRAME:
        return SampleBatch(np.array([rng.choice(len(p), p=p)]), mode=FRAME)
    return SampleBatch(rng.choice(len(p), size=batch, p=p))


def sample_frames(state: SamplerState, batch: int, rng, mode: str = RAY) -> SampleBatch:
    return _draw(frame_probabilities(state), batch, rng, mode)


def sample_uniform(state: SamplerState, batch: int, rng, mode: str = RAY) -> SampleBatch:
    n = state.n_frames
    if n < 1:
        raise InvalidArgument("no frames to sample from")
    if batch < 1:
        raise InvalidArgument("batch must be >= 1")
    if mode == FRAME:
        return SampleBatch(np.array([rng.integers(n)]), mode=FRAME)
    return SampleBatch(rng.integers(n, size=batch))


def sample_imap(state: SamplerState, batch: int, rng, mode: str = RAY) -> SampleBatch:
    """A fixed 20% share from the newest frame, the rest uniform over the others."""
    n = state.n_frames
    if n < 1:
        raise InvalidArgument("no frames to sample from")
    if batch < 1:
        raise InvalidArgument("batch must be >= 1")
    newest = n - 1
    if mode == FRAME:
        if n == 1 or rng.random() < IMAP_RECENT_SHARE:
            return SampleBatch(np.array([newest]), mode=FRAME)
        return SampleBatch(np.array([rng.integers(newest)]), mode=FRAME)
    if n == 1:
        return SampleBatch(np.zeros(batch, dtype=np.int64))
    k = min(batch, math.ceil(IMAP_RECENT_SHARE * batch))
    rest = rng.integers(newest, size=batch - k)
    return SampleBatch(np.concatenate([np.full(k, newest, dtype=np.int64), rest]))


@dataclass
class LossGrid:
    """Running-average photometric loss per image patch, per frame.

    Images are 1D rows here, so a patch is a run of `patch_size` pixels.
    """

    width: int
    patch_size: int = 16
    decay: float = 0.3
    eps: float = 1e-4
    prior: float = 1.0
    losses: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.decay <= 1:
            raise InvalidArgument("decay must be in (0, 1]")

    @property
    def n_patches(self) -> int:
        return -(-self.width // self.patch_size)

    def get(self, frame_id) -> np.ndarray:
        if frame_id not in self.losses:
            self.losses[frame_id] = np.full(self.n_patches, self.prior, dtype=float)
        return self.losses[frame_id]


def update_loss_grid(grid: LossGrid, frame_id, patch_losses) -> LossGrid:
    """Blend new patch losses into the running average.

    NaN entries mark patches with no new observation; those stay unchanged.
    """
    new = np.asarray(patch_losses, dtype=float)
    if new.shape != (grid.n_patches,):
        raise InvalidArgument(f"expected {grid.n_patches} patch losses, got shape {new.shape}")
    seen = ~np.isnan(new)
    if np.any(new[seen] < 0):
        raise InvalidArgument("losses must be non-negative")
    cur = grid.get(frame_id)
    cur[seen] = (1.0 - grid.decay) * cur[seen] + grid.decay * new[seen]
    return grid


def patch_losses_from_rays(grid: LossGrid, pixels, sq_errors, divisor: int = 1) -> np.ndarray:
    """Mean squared error per patch for one frame's rays; NaN where no ray landed."""
    full = (np.asarray(pixels) * divisor + divisor // 2) // grid.patch_size
    n = grid.n_patches
    sums = np.bincount(full, weights=sq_errors, minlength=n)
    hits = np.bincount(full, minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(hits > 0, sums / np.maximum(hits, 1), np.nan)


def sample_rays_loss_guided(grid: LossGrid, frame_id, count: int, rng, divisor: int = 1) -> np.ndarray:
    """Pixel indices (at 1/divisor resolution) drawn patch-first by tracked loss."""
    w = grid.get(frame_id) + grid.eps
    patch = rng.choice(len(w), size=count, p=w / w.sum())
    width = grid.width // divisor
    lo = (patch * grid.patch_size) // divisor
    hi = np.minimum(((patch + 1) * grid.patch_size + divisor - 1) // divisor, width)
    hi = np.maximum(hi, lo + 1)
    return lo + (rng.random(count) * (hi - lo)).astype(np.int64)


STRATEGIES = {
    "uniform": sample_uniform,
    "imap": sample_imap,
    "shifted-exp": sample_frames,
    "shifted-exp+loss": sample_frames,
}


def simulate_counts(records, strategy: str, batch: int, seed: int, extra_iterations: int = 0,
                    alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Cumulative per-frame sample counts for a sampling-only online run.

    Uses the trainer's clock: iterations run from the first arrival up to
    (last arrival + extra_iterations), exclusive.
    """
    records = list(records)
    fn = STRATEGIES[strategy]
    rng = np.random.default_rng(seed)
    counts = np.zeros(len(records), dtype=np.int64)
    start = records[0].arrival_iteration
    stop = records[-1].arrival_iteration + extra_iterations
    visible = 0
    for s in range(start, stop):
        while visible < len(records) and records[visible].arrival_iteration <= s:
            visible += 1
        state = SamplerState(records[:visible], s, alpha, beta)
        counts[:visible] += fn(state, batch, rng).counts(visible)
    return counts


def snapshot_counts(records, iteration: int, strategy: str, batch: int, seed: int,
                    alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Per-frame counts of one large draw at a single iteration."""
    visible = [r for r in records if r.arrival_iteration <= iteration]
    state = SamplerState(visible, iteration, alpha, beta)
    return STRATEGIES[strategy](state, batch, np.random.default_rng(seed)).counts(len(visible))


def write_histogram_csv(path, counts) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame_id", "cumulative_sample_count"])
        for i, c in enumerate(counts):
            w.writerow([i, int(c)])


def read_histogram_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return np.array([int(r[1]) for r in rows[1:]], dtype=np.int64)
