"""Command-line entry point: ``linn <command> ...``.

Errors are reported as a single ``error: <kind>: <message>`` line on stderr
with exit status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, losses, probe as probe_mod
from .config import ConfigError, ModelConfig, resolve
from .model import BinauralRenderer
from .nn import threads
from .pose import PoseTrack

logger = logging.getLogger("linn")


def _threads_default() -> int:
    return int(os.environ.get("LINN_THREADS", "1"))


def _load_config_file(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _ablation_overrides(args) -> dict:
    o: dict = {}
    if getattr(args, "no_tdw_neural", False):
        o.setdefault("warp", {})["neural_enabled"] = False
    if getattr(args, "no_ibc", False):
        o.setdefault("ibc", {})["enabled"] = False
    if getattr(args, "no_freqpe", False):
        o.setdefault("encoding", {})["use_freq_pe"] = False
    if getattr(args, "no_timepe", False):
        o.setdefault("encoding", {})["use_time_pe"] = False
    return o


def _flag_overrides(args) -> dict:
    o = _ablation_overrides(args)
    train = {}
    for name in ("epochs", "batch_size", "seed", "threads", "chunk_len"):
        v = getattr(args, name, None)
        if v is not None:
            train[name] = v
    if train:
        o["train"] = train
    if getattr(args, "hidden", None) is not None:
        o.setdefault("ibc", {})["hidden"] = args.hidden
    if getattr(args, "lr_max", None) is not None:
        o["optim"] = {"lr_max": args.lr_max}
    return o


def _add_ablation_flags(p):
    p.add_argument("--no-tdw-neural", action="store_true", help="geometric warp only")
    p.add_argument("--no-ibc", action="store_true", help="force the gain mask to 1")
    p.add_argument("--no-freqpe", action="store_true", help="zero the frequency encoding")
    p.add_argument("--no-timepe", action="store_true", help="zero the time encoding")


def cmd_synth_data(args):
    data.synth_dataset(args.out, seed=args.seed, n_items=args.n_items, duration=args.duration,
                       motion=args.motion)
    print(f"wrote {args.n_items} items to {args.out}")


def cmd_train(args):
    from .train import train

    cfg = resolve(None, _load_config_file(args.config), _flag_overrides(args))
    splits = data.load_dataset(args.dataset, cfg.quat_order)
    if not splits["train"]:
        raise data.DataError(f"{args.dataset}: empty training split")
    out = Path(args.out)
    log_path = args.log or out.with_suffix(".log.jsonl")
    best_path = args.best or out.with_suffix(".best.ckpt")
    res = train(cfg, splits["train"], splits["valid"], log_path=log_path, out_path=out,
                best_path=best_path if splits["valid"] else None,
                extra={"dataset": str(args.dataset)})
    last = res.history[-1]
    print(f"epochs={len(res.history)} train_loss={last['train_loss']:.6g} "
          f"valid_loss={last['valid_loss']:.6g} checkpoint={out} log={log_path}")


def _load_model(args, extra_overrides: dict | None = None):
    overrides = resolve_overrides(_load_config_file(getattr(args, "config", None)),
                                  _ablation_overrides(args), extra_overrides or {})
    model, cfg, _ = checkpoint.load_checkpoint(args.checkpoint, overrides)
    return model, cfg


def resolve_overrides(*layers: dict) -> dict:
    out: dict = {}
    for layer in layers:
        for k, v in layer.items():
            if isinstance(v, dict):
                out.setdefault(k, {}).update(v)
            else:
                out[k] = v
    return out


def cmd_render(args):
    model, cfg = _load_model(args)
    mono = data.load_wav(args.mono, cfg.warp.fs)
    if mono.channels != 1:
        raise data.DataError(f"{args.mono}: expected mono input, got {mono.channels} channels")
    track = data.parse_pose_file(args.pose, cfg.quat_order, cfg.warp.pose_rate)
    x = mono.samples[0]
    needed = (len(x) - 1) / cfg.warp.fs
    if track.duration + 1 / track.rate < needed:
        raise data.DataError(f"pose track covers {track.duration:.3f}s but audio needs {needed:.3f}s")
    with threads(args.threads):
        y = model.render(x, track) if args.whole else model.render_stream(x, track, args.block)
    data.save_wav(args.out, y, cfg.warp.fs)
    print(f"wrote {args.out} ({len(x)} samples, 2 channels)")


def cmd_eval(args):
    est = data.load_wav(args.estimate, None)
    ref = data.load_wav(args.reference, None)
    if est.channels != 2 or ref.channels != 2:
        raise ConfigError("eval needs stereo estimate and reference")
    if len(est) != len(ref):
        raise ConfigError(f"length mismatch: {len(est)} vs {len(ref)} samples")
    report = losses.evaluate(est.samples, ref.samples, floor=args.floor)
    sys.stdout.write(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json())


def bench_report(model: BinauralRenderer, seconds: float, repetitions: int = 3,
                 parallel: int | None = None) -> losses.EfficiencyReport:
    cfg = model.cfg
    report = losses.count_macs(cfg, seconds, model.param_count())
    rng = np.random.default_rng(0)
    n = int(seconds * cfg.warp.fs)
    x = (0.1 * rng.standard_normal(n)).astype(np.float32)
    k = int(np.ceil(seconds * cfg.warp.pose_rate)) + 2
    az = np.linspace(0, 2 * np.pi, k)
    vals = np.zeros((k, 7))
    vals[:, 0], vals[:, 1], vals[:, 6] = 1.5 * np.cos(az), 1.5 * np.sin(az), 1.0
    track = PoseTrack(vals, cfg.warp.pose_rate)
    render = lambda: model.render(x, track)  # noqa: E731
    report.rtf = losses.measure_rtf(render, seconds, repetitions, n_threads=1)
    parallel = parallel or losses.parallel_threads()
    report.threads_parallel = parallel
    report.rtf_parallel = losses.measure_rtf(render, seconds, repetitions, n_threads=parallel)
    return report


def cmd_bench(args):
    model, cfg = _load_model(args)
    report = bench_report(model, args.seconds, args.repetitions)
    sys.stdout.write(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json())


def cmd_probe(args):
    model, cfg = _load_model(args)
    grid = probe_mod.ProbeGrid(args.axis, args.start, args.stop, args.points, args.radius)
    rows = probe_mod.probe(model, grid)
    probe_mod.write_csv(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linn", description="Lightweight neural binaural renderer")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic oracle dataset")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-items", type=int, default=20)
    s.add_argument("--duration", type=float, default=2.0)
    s.add_argument("--motion", default="mixed", choices=["mixed", "circular", "lateral"])
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train from scratch")
    s.add_argument("dataset")
    s.add_argument("out", help="final checkpoint path")
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--chunk-len", type=int)
    s.add_argument("--hidden", type=int)
    s.add_argument("--lr-max", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=_threads_default())
    s.add_argument("--log")
    s.add_argument("--best")
    _add_ablation_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render binaural audio")
    s.add_argument("mono")
    s.add_argument("pose")
    s.add_argument("checkpoint")
    s.add_argument("out")
    s.add_argument("--config")
    s.add_argument("--block", type=int, default=48000, help="streaming block length in samples")
    s.add_argument("--whole", action="store_true", help="process the file in one pass")
    s.add_argument("--threads", type=int, default=_threads_default())
    _add_ablation_flags(s)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="objective metrics of an estimate against a reference")
    s.add_argument("estimate")
    s.add_argument("reference")
    s.add_argument("--floor", type=float, default=1e-4, help="phase energy floor (0 = all bins)")
    s.add_argument("--json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="parameter count, MACs and real-time factor")
    s.add_argument("checkpoint")
    s.add_argument("--seconds", type=float, default=10.0)
    s.add_argument("--repetitions", type=int, default=3)
    s.add_argument("--json")
    s.add_argument("--config")
    _add_ablation_flags(s)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("probe", help="mean corrections over a grid of source positions")
    s.add_argument("checkpoint")
    s.add_argument("out")
    s.add_argument("--axis", default="azimuth", choices=["azimuth", "lateral", "longitudinal"])
    s.add_argument("--start", type=float, default=-90.0)
    s.add_argument("--stop", type=float, default=90.0)
    s.add_argument("--points", type=int, default=13)
    s.add_argument("--radius", type=float, default=1.5)
    s.add_argument("--config")
    _add_ablation_flags(s)
    s.set_defaults(func=cmd_probe)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
