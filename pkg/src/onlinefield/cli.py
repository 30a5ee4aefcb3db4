"""Command-line entry point: simulate, publish, serve, replay, offline, eval, report."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from . import flatland as fl
from .errors import InvalidArgument, ParseError, ProtocolError, ReplayAbort, StreamTimeout, PreconditionViolation
from .protocol import ReplayLog, ensure_dir, read_packet_file, read_replay_log, write_packet_file, write_replay_log
from .sampling import read_histogram_csv, write_histogram_csv
from .trainer import RunConfig, RunResult, config_from_mapping, evaluate, parse_config_text, train_offline, train_online
from .transport import KeyframeDatabase, ReplayDriver, publish, record_replay_log, serve

log = logging.getLogger("onlinefield")

FRAMES = "frames"
LOG = "replay.log"
SCENE = "scene.cfg"


# -- run directory helpers ----------------------------------------------------------

def write_scene_cfg(path: Path, **values):
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()), encoding="utf-8")


def read_scene_cfg(run: Path) -> dict:
    return parse_config_text((run / SCENE).read_text(encoding="utf-8"))


def load_eval_frames(run: Path):
    return fl.make_scene(int(read_scene_cfg(run)["scene_seed"])).frames


def load_keyframes(run: Path, log_: ReplayLog):
    return [fl.packet_to_frame(read_packet_file(run / FRAMES, r.frame_id)) for r in log_]


def save_grid(out: Path, grid: fl.RadianceGrid):
    np.save(out / "sigma_raw.npy", grid.sigma_raw)
    np.save(out / "color_raw.npy", grid.color_raw)


def load_grid(out: Path) -> fl.RadianceGrid:
    return fl.RadianceGrid(np.load(out / "sigma_raw.npy"), np.load(out / "color_raw.npy"))


def write_metrics(path: Path, psnrs, stride: int):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["view_id", "psnr"])
        for i, p in enumerate(psnrs):
            w.writerow([i * stride, repr(float(p))])
        w.writerow(["mean", repr(float(np.mean(psnrs))) if psnrs else "nan"])


def read_metrics(path: Path) -> dict:
    with open(path, newline="") as f:
        return {r["view_id"]: float(r["psnr"]) for r in csv.DictReader(f)}


def write_result(out: Path, cfg: RunConfig, res: RunResult):
    ensure_dir(out)
    write_metrics(out / "metrics.csv", res.psnrs, cfg.eval_stride)
    write_histogram_csv(out / "counts.csv", res.counts)
    save_grid(out, res.grid)
    lines = [f"{k} = {v}" for k, v in dataclasses.asdict(cfg).items()]
    lines += [f"iterations_run = {res.iterations}",
              f"mean_psnr = {res.mean_psnr!r}",
              f"frame_hash = {res.frame_hash}",
              f"wall_time = {res.wall_time:.3f}"]
    if res.bandwidth is not None:
        lines.append(f"bandwidth_mbps = {res.bandwidth.mbps:.6f}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- subcommands --------------------------------------------------------------------

def cmd_simulate(args, cfg):
    out = ensure_dir(args.out)
    ep = bench.make_episode(args.seed, rate=args.rate, fps=args.fps)
    frames = ensure_dir(out / FRAMES)
    for k in sorted(ep.packets):
        write_packet_file(frames, ep.packets[k])
    write_replay_log(out / LOG, ep.log)
    write_scene_cfg(out / SCENE, scene_seed=args.seed, rate=args.rate, fps=args.fps, keyframes=len(ep.packets))
    print(f"wrote {len(ep.packets)} keyframes, last arrival {ep.log.records[-1].arrival_iteration}, to {out}")


def cmd_replay(args, cfg):
    run = Path(args.run)
    cfg = cfg.replace(mode="online-replay")
    log_ = read_replay_log(run / LOG)
    res = train_online(cfg, ReplayDriver(log_, run / FRAMES), load_eval_frames(run))
    write_result(Path(args.out), cfg, res)
    print(f"{cfg.sampler}: {res.iterations} iterations, mean PSNR {res.mean_psnr:.3f} dB")


def cmd_offline(args, cfg):
    run = Path(args.run)
    log_ = read_replay_log(run / LOG)
    if not args.iterations_set:
        recs = log_.records
        cfg = cfg.replace(iterations=recs[-1].arrival_iteration + cfg.extra_iterations - recs[0].arrival_iteration)
    cfg = cfg.replace(mode="offline")
    res = train_offline(cfg, load_keyframes(run, log_), load_eval_frames(run))
    write_result(Path(args.out), cfg, res)
    print(f"offline: {res.iterations} iterations, mean PSNR {res.mean_psnr:.3f} dB")


def cmd_eval(args, cfg):
    run, model = Path(args.run), Path(args.model)
    psnrs = evaluate(load_grid(model), load_eval_frames(run), cfg.eval_stride, cfg.near, cfg.far, cfg.n_samples)
    out = Path(args.out) if args.out else model / "eval.csv"
    write_metrics(out, psnrs, cfg.eval_stride)
    print(f"mean PSNR {np.mean(psnrs):.3f} dB over {len(psnrs)} views")


def cmd_report(args, cfg):
    out = ensure_dir(args.out)
    rows = []
    for d in map(Path, args.runs):
        summary = parse_config_text((d / "summary.txt").read_text(encoding="utf-8"))
        counts = read_histogram_csv(d / "counts.csv")
        write_histogram_csv(out / f"histogram_{d.name}.csv", counts)
        metrics = read_metrics(d / "metrics.csv")
        rows.append((d.name, summary.get("mode", ""), summary.get("sampler", ""), metrics["mean"]))
    with open(out / "psnr_table.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["run", "mode", "sampler", "mean_psnr"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], f"{r[3]:.4f}"])
    for r in rows:
        print(f"{r[0]:<24} {r[1]:<14} {r[2]:<18} {r[3]:8.3f}")


def cmd_publish(args, cfg):
    d = Path(args.frames)
    ids = sorted(int(p.stem.split("_")[1]) for p in d.glob("frame_*.kfp"))
    packets = (read_packet_file(d, i) for i in ids)
    summary = publish(packets, args.host, args.port, fps=args.fps, use_timestamps=args.use_timestamps,
                      duration_limit=args.duration)
    bw = summary.bandwidth
    rate = f", {bw.mbps:.3f} Mbps" if bw and not bw.degenerate else ""
    print(f"sent {summary.sent}, skipped {summary.skipped}{rate}")
    if summary.error:
        raise ConnectionError(summary.error)


def cmd_serve(args, cfg):
    out = ensure_dir(args.out)
    frames = ensure_dir(out / FRAMES)
    db = KeyframeDatabase()
    sub = serve(db, args.host, args.port, close_after=args.sessions, frame_dir=frames)
    print(f"listening on {sub.address[0]}:{sub.port}", flush=True)
    try:
        cfg = cfg.replace(mode="online-live")
        # evaluate only when the publisher's scene is named explicitly
        eval_frames = fl.make_scene(cfg.scene_seed).frames if args.scene_seed is not None else None
        res = train_online(cfg, db, eval_frames)
    finally:
        sub.stop()
    write_replay_log(out / LOG, record_replay_log(db))
    if args.scene_seed is not None:
        write_scene_cfg(out / SCENE, scene_seed=cfg.scene_seed)
    write_result(out / "result", cfg, res)
    print(f"live run: {len(db)} frames, {res.iterations} iterations, mean PSNR {res.mean_psnr:.3f} dB")


# -- argument parsing ----------------------------------------------------------------

_FLAG_FIELDS = [f for f in dataclasses.fields(RunConfig) if f.name not in ("mode", "host", "port")]


def _add_run_flags(p):
    p.add_argument("--config", help="key = value run config file")
    for f in _FLAG_FIELDS:
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, default=None,
                           type=lambda s: s.lower() in ("1", "true", "yes", "on"))
        else:
            p.add_argument(flag, dest=f.name, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onlinefield", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="make a scene and a keyframe stream")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--rate", type=float, default=bench.DEFAULT_RATE, help="keyframes per iteration")
    p.add_argument("--fps", type=float, default=2.0, help="capture rate for packet timestamps")
    p.set_defaults(func=cmd_simulate, run_flags=False)

    p = sub.add_parser("publish", help="stream frame files to a subscriber")
    p.add_argument("--frames", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=RunConfig.port)
    p.add_argument("--fps", type=float)
    p.add_argument("--use-timestamps", action="store_true")
    p.add_argument("--duration", type=float)
    p.set_defaults(func=cmd_publish, run_flags=False)

    p = sub.add_parser("serve", help="ingest a live stream and train online")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=RunConfig.port)
    p.add_argument("--out", required=True)
    p.add_argument("--sessions", type=int, default=1, help="connections before end of stream")
    _add_run_flags(p)
    p.set_defaults(func=cmd_serve, run_flags=True)

    for name, fn, help_ in (("replay", cmd_replay, "train online from a replay log"),
                            ("offline", cmd_offline, "train with every keyframe visible")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--run", required=True, help="directory written by simulate")
        p.add_argument("--out", required=True)
        _add_run_flags(p)
        p.set_defaults(func=fn, run_flags=True)

    p = sub.add_parser("eval", help="PSNR of a saved model on the scene trajectory")
    p.add_argument("--run", required=True)
    p.add_argument("--model", required=True, help="result directory holding the grid")
    p.add_argument("--out")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval, run_flags=True)

    p = sub.add_parser("report", help="histogram CSVs and a PSNR table for finished runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report, run_flags=False)
    return ap


def resolve_config(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
    for f in _FLAG_FIELDS:
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    args.iterations_set = "iterations" in values
    return config_from_mapping(values)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args) if args.run_flags else RunConfig()
        args.func(args, cfg)
    except (InvalidArgument, ParseError, ProtocolError, ReplayAbort, StreamTimeout, PreconditionViolation,
            OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
