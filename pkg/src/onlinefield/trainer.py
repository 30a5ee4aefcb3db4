"""Online and offline training loops over the flatland backend."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import flatland as fl
from .arrival import ArrivalRecord
from .errors import InvalidArgument
from .protocol import BandwidthReport, bandwidth_report, encode_packet
from .sampling import (DEFAULT_ALPHA, DEFAULT_BETA, STRATEGIES, LossGrid, SamplerState,
                       patch_losses_from_rays, sample_rays_loss_guided, update_loss_grid)
from .scheduling import SAMPLED, FrameSchedule, lr_at, resolution_at
from .transport import KeyframeDatabase, ReplayDriver

log = logging.getLogger(__name__)

MODES = ("online-live", "online-replay", "offline")


@dataclass
class RunConfig:
    mode: str = "online-replay"
    sampler: str = "shifted-exp"
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    batch: int = 128
    lr_init: float = 0.1
    lr_final: float = 1e-3
    lr_decay_span: int = 2000
    res_start_divisor: int = 4
    res_stage_len: int = 150
    age_mode: str = SAMPLED
    seed: int = 0
    scene_seed: int = 0
    extra_iterations: int = 50
    iterations: int = 0
    eval_stride: int = 8
    grid_resolution: int = fl.DEFAULT_RESOLUTION
    n_samples: int = fl.DEFAULT_SAMPLES
    near: float = fl.DEFAULT_NEAR
    far: float = fl.DEFAULT_FAR
    jitter: bool = True
    live_timeout: float = 30.0
    host: str = "127.0.0.1"
    port: int = 7450

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown mode {self.mode!r}")
        if self.sampler not in STRATEGIES:
            raise InvalidArgument(f"unknown sampler {self.sampler!r}")
        if not self.alpha > 0 or self.beta < 0:
            raise InvalidArgument("need alpha > 0 and beta >= 0")
        if self.extra_iterations < 0 or self.iterations < 0:
            raise InvalidArgument("iteration counts must be non-negative")
        if self.batch < 1 or self.eval_stride < 1:
            raise InvalidArgument("batch and eval_stride must be >= 1")
        self.schedule()

    def schedule(self) -> FrameSchedule:
        return FrameSchedule(self.lr_init, self.lr_final, self.lr_decay_span,
                             self.res_start_divisor, self.res_stage_len, self.age_mode)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def parse_config_text(text: str) -> dict:
    """`key = value` lines; '#' starts a comment. Values stay strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"config line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def config_from_mapping(values: dict, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    kw = {}
    for k, v in values.items():
        if k not in types:
            raise InvalidArgument(f"unknown config key {k!r}")
        t = types[k]
        if isinstance(v, str):
            if t == "bool":
                v = v.lower() in ("1", "true", "yes", "on")
            elif t == "int":
                v = int(v)
            elif t == "float":
                v = float(v)
        kw[k] = v
    return dataclasses.replace(base, **kw)


@dataclass
class RunResult:
    psnrs: list
    counts: np.ndarray
    iterations: int
    wall_time: float
    frame_hash: str
    visibility: np.ndarray
    grid: fl.RadianceGrid
    bandwidth: BandwidthReport | None = None
    losses: list = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnrs)) if self.psnrs else float("nan")


def evaluate(grid: fl.RadianceGrid, frames, stride: int, near=fl.DEFAULT_NEAR, far=fl.DEFAULT_FAR,
             n_samples=fl.DEFAULT_SAMPLES) -> list:
    """PSNR of every stride-th trajectory frame (ids 0, s, 2s, ...)."""
    if stride < 1:
        raise InvalidArgument("stride must be >= 1")
    return [fl.psnr(fl.render_view(grid, f.camera, near=near, far=far, n_samples=n_samples), f.pixels)
            for f in list(frames)[::stride]]


class _Frames:
    """Trainer-side view of visible frames plus per-frame bookkeeping."""

    def __init__(self):
        self.frames: list[fl.FlatFrame] = []
        self.arrivals: list[ArrivalRecord] = []
        self.sampled: list[int] = []
        self._rays: dict = {}

    def add(self, frame: fl.FlatFrame, arrival: int):
        self.frames.append(frame)
        self.arrivals.append(ArrivalRecord(frame.frame_id, arrival))
        self.sampled.append(0)

    def rays(self, i: int, divisor: int):
        key = (i, divisor)
        if key not in self._rays:
            f = self.frames[i]
            o, d = f.camera.rays(divisor)
            self._rays[key] = (o, d, f.downscaled(divisor))
        return self._rays[key]


class _Trainer:
    def __init__(self, cfg: RunConfig, init_grid: fl.RadianceGrid | None = None):
        self.cfg = cfg
        self.schedule = cfg.schedule()
        self.rng = np.random.default_rng(cfg.seed)
        self.grid = init_grid.copy() if init_grid is not None else fl.RadianceGrid.empty(cfg.grid_resolution)
        self.view = _Frames()
        self.counts: list[int] = []
        self.hasher = hashlib.sha256()
        self.visibility: list[int] = []
        self.losses: list[float] = []
        self.loss_grid: LossGrid | None = None
        self.iterations = 0

    def add_frame(self, frame: fl.FlatFrame, arrival: int):
        self.view.add(frame, arrival)
        self.counts.append(0)
        if self.cfg.sampler.endswith("+loss") and self.loss_grid is None:
            self.loss_grid = LossGrid(frame.camera.width)

    def age(self, i: int, s: int) -> int:
        if self.schedule.age_mode == SAMPLED:
            return self.view.sampled[i]
        return s - self.view.arrivals[i].arrival_iteration

    def step(self, s: int, n_visible: int):
        cfg = self.cfg
        state = SamplerState(self.view.arrivals[:n_visible], s, cfg.alpha, cfg.beta)
        batch = STRATEGIES[cfg.sampler](state, cfg.batch, self.rng)
        self.hasher.update(batch.frame_ids.astype("<u4").tobytes())
        frames, per = np.unique(batch.frame_ids, return_counts=True)

        origins, dirs, targets, lrs, pixels, divisors = [], [], [], [], [], []
        for f, k in zip(frames.tolist(), per.tolist()):
            age = self.age(f, s)
            d = resolution_at(age, self.schedule)
            o, dr, px = self.view.rays(f, d)
            if self.loss_grid is not None:
                pix = sample_rays_loss_guided(self.loss_grid, f, k, self.rng, d)
            else:
                pix = self.rng.integers(len(px), size=k)
            origins.append(o[pix])
            dirs.append(dr[pix])
            targets.append(px[pix])
            lrs.append(np.full(k, lr_at(age, self.schedule)))
            pixels.append(pix)
            divisors.append(d)
            self.view.sampled[f] += 1
            self.counts[f] += k

        lr = np.concatenate(lrs)
        mean_lr = float(lr.mean())
        rng = self.rng if cfg.jitter else None
        colors, cache = fl.render_rays(self.grid, np.concatenate(origins), np.concatenate(dirs),
                                       cfg.near, cfg.far, cfg.n_samples, rng)
        tgt = np.concatenate(targets)
        loss = fl.backward(self.grid, cache, tgt, weights=lr / mean_lr)
        fl.adam_step(self.grid, mean_lr)
        self.losses.append(loss)
        self.visibility.append(n_visible)
        self.iterations += 1

        if self.loss_grid is not None:
            sq = np.mean((colors - tgt) ** 2, axis=1)
            start = 0
            for f, pix, d in zip(frames.tolist(), pixels, divisors):
                sl = slice(start, start + len(pix))
                update_loss_grid(self.loss_grid, f,
                                 patch_losses_from_rays(self.loss_grid, pix, sq[sl], d))
                start += len(pix)

    def result(self, eval_frames, wall, bandwidth=None) -> RunResult:
        cfg = self.cfg
        psnrs = [] if eval_frames is None else evaluate(self.grid, eval_frames, cfg.eval_stride,
                                                         cfg.near, cfg.far, cfg.n_samples)
        return RunResult(psnrs, np.array(self.counts, dtype=np.int64), self.iterations, wall,
                         self.hasher.hexdigest(), np.array(self.visibility, dtype=np.int64), self.grid,
                         bandwidth, self.losses)


def train_online(cfg: RunConfig, source, eval_frames=None, init_grid=None) -> RunResult:
    """Online training from a ReplayDriver or a live KeyframeDatabase.

    Iterations run from the first arrival up to (last arrival +
    extra_iterations), exclusive; frame i is visible from its arrival
    iteration on.
    """
    t0 = time.perf_counter()
    tr = _Trainer(cfg, init_grid)
    if isinstance(source, ReplayDriver):
        db = KeyframeDatabase()
        records = source.log.records
        if not records:
            raise InvalidArgument("replay log is empty")
        stop = records[-1].arrival_iteration + cfg.extra_iterations
        for s in range(records[0].arrival_iteration, stop):
            for p in source.replay_step(s, db):
                tr.add_frame(fl.packet_to_frame(p), db.stamp(len(tr.view.frames)))
            tr.step(s, db.visible_count(s))
        return tr.result(eval_frames, time.perf_counter() - t0)

    if not isinstance(source, KeyframeDatabase):
        raise InvalidArgument("source must be a ReplayDriver or KeyframeDatabase")
    db = source
    seen = 0
    while True:
        s, n = db.begin_iteration(cfg.live_timeout)
        last = db.last_stamp()
        if db.closed and s >= last + cfg.extra_iterations:
            break
        while seen < n:
            tr.add_frame(fl.packet_to_frame(db.packet(seen)), db.stamp(seen))
            seen += 1
        tr.step(s, n)
    packets = db.packets()
    bw = bandwidth_report([len(encode_packet(p)) for p in packets], [p.capture_timestamp for p in packets])
    return tr.result(eval_frames, time.perf_counter() - t0, bw)


def train_offline(cfg: RunConfig, frames, eval_frames=None, init_grid=None) -> RunResult:
    """All frames visible from iteration 0 for `cfg.iterations` iterations."""
    frames = list(frames)
    if not frames:
        raise InvalidArgument("offline training needs frames")
    t0 = time.perf_counter()
    tr = _Trainer(cfg, init_grid)
    for f in frames:
        tr.add_frame(f, 0)
    for s in range(cfg.iterations):
        tr.step(s, len(frames))
    return tr.result(eval_frames, time.perf_counter() - t0)
