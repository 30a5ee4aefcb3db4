"""Paired online/offline comparisons on synthetic flatland scenes."""

from __future__ import annotations

from dataclasses import dataclass

from . import flatland as fl
from .arrival import generate_stream
from .protocol import ReplayLog
from .trainer import RunConfig, train_offline, train_online
from .transport import ReplayDriver

KEYFRAME_STRIDE = 4
KEYFRAME_OFFSET = 2
DEFAULT_RATE = 0.05

# Paired-comparison protocol: frames arrive every ~2 iterations and each
# arrival brings about one image worth of rays, so the stream is
# budget-limited and the per-frame lr decay plays out within the run.
COMPARISON_RATE = 0.5
COMPARISON_CONFIG = dict(batch=64, extra_iterations=10, lr_decay_span=300)


@dataclass
class Episode:
    scene: fl.Scene
    keyframes: list
    log: ReplayLog
    packets: dict


def keyframe_indices(n_cameras: int, stride=KEYFRAME_STRIDE, offset=KEYFRAME_OFFSET) -> list:
    """Trajectory indices that become keyframes; offset keeps them off the eval ids."""
    return list(range(offset, n_cameras, stride))


def make_episode(seed: int, rate=DEFAULT_RATE, fps=2.0, stride=KEYFRAME_STRIDE, **scene_kw) -> Episode:
    scene = fl.make_scene(seed, **scene_kw)
    idx = keyframe_indices(len(scene.frames), stride, offset=stride // 2)
    records = generate_stream(rate, 10**9, seed, max_frames=len(idx))
    keyframes, packets = [], {}
    for k, (ti, rec) in enumerate(zip(idx, records)):
        src = scene.frames[ti]
        f = fl.FlatFrame(src.camera, src.pixels, k)
        keyframes.append(f)
        packets[k] = fl.frame_to_packet(f, timestamp=k / fps)
    return Episode(scene, keyframes, ReplayLog(records), packets)


def run_strategy(ep: Episode, cfg: RunConfig):
    if cfg.mode == "offline":
        frames = [fl.packet_to_frame(ep.packets[k]) for k in sorted(ep.packets)]
        return train_offline(cfg, frames, ep.scene.frames)
    return train_online(cfg, ReplayDriver(ep.log, ep.packets), ep.scene.frames)


def paired_runs(seed: int, samplers=("uniform", "imap", "shifted-exp"), base: RunConfig | None = None,
                rate=DEFAULT_RATE, offline=True, stride=KEYFRAME_STRIDE, scene_kw=None) -> dict:
    """Online runs per sampler on one replay log, plus offline at the same budget."""
    base = base or RunConfig()
    ep = make_episode(seed, rate, stride=stride, **(scene_kw or {}))
    out = {}
    for name in samplers:
        out[name] = run_strategy(ep, base.replace(mode="online-replay", sampler=name, seed=seed))
    if offline:
        budget = next(iter(out.values())).iterations
        out["offline"] = run_strategy(ep, base.replace(mode="offline", sampler="uniform", seed=seed,
                                                       iterations=budget))
    return out


def comparison_trial(seed: int, samplers=("uniform", "imap", "shifted-exp")) -> dict:
    """Mean held-out PSNR per strategy (plus offline) for one paired seed."""
    base = RunConfig(**COMPARISON_CONFIG)
    runs = paired_runs(seed, samplers, base=base, rate=COMPARISON_RATE)
    return {k: r.mean_psnr for k, r in runs.items()}
