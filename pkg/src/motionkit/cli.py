"""``motionkit`` command line.

Exit codes: 0 success, 1 verification failure, 2 usage/parse error,
3 data error (empty pool, unreadable or degenerate input).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diffusion, epi, fmat, metrics, verify
from .errors import (
    AnchorError, ArgumentError, ContractError, DegenerateError, IoError, MotionKitError,
    ParseError, PoolError, ScheduleError, SchemaError, ShapeError, TopologyError,
)
from .pose_model import parse_pose_sequence, render_svg, serialize_pose_sequence
from .pose_pool import DEFAULT_STRIDE, build_pool, load_pool, sample_anchor, save_pool

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
CONFIG_KEYS = {"lambda", "rescale", "schedule", "stride"}


class UsageError(MotionKitError):
    pass


@dataclass
class CliConfig:
    seed: int = 0
    config_path: Optional[str] = None
    quiet: bool = False
    overrides: dict = field(default_factory=dict)

    @classmethod
    def load(cls, seed, config_path, quiet) -> "CliConfig":
        overrides = {}
        if config_path:
            try:
                with open(config_path, "rb") as fh:
                    raw = fh.read()
            except OSError as e:
                raise IoError(config_path, e.strerror or str(e)) from None
            overrides = json.loads(raw)
            if not isinstance(overrides, dict):
                raise SchemaError("config", "top level must be an object")
            unknown = set(overrides) - CONFIG_KEYS
            if unknown:
                raise SchemaError("config", f"unknown keys {sorted(unknown)}")
        return cls(seed, config_path, quiet, overrides)

    def rescale(self) -> epi.RescaleConfig:
        return epi.RescaleConfig.from_dict(self.overrides.get("rescale", {}))

    def schedule(self, T: Optional[int] = None) -> diffusion.NoiseSchedule:
        raw = dict(self.overrides.get("schedule", {}))
        if T is not None and "betas" not in raw:
            raw["T"] = T
        return diffusion.schedule_from_config(raw)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _shape(text: str) -> tuple:
    try:
        dims = tuple(int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected e.g. 4x8x8") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError("shape dims must be positive")
    return dims


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise IoError(path, e.strerror or str(e)) from None


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _say(cfg: CliConfig, *args):
    if not cfg.quiet:
        print(*args)


# ---------------------------------------------------------------------------
# commands


def cmd_transform(args, cfg: CliConfig) -> int:
    lam = args.lam if args.lam is not None else float(cfg.overrides.get("lambda", epi.DEFAULT_LAMBDA))
    if not 0.0 <= lam <= 1.0:
        raise UsageError(f"--lambda must be in [0, 1], got {lam}")
    seq = parse_pose_sequence(_read_bytes(args.inp))
    pool = load_pool(args.pool)
    plan = epi.sample_plan(cfg.seed, lam, cfg.rescale(), len(pool), anchor_ids=pool.ids)
    anchor = sample_anchor(pool, plan.anchor_index)[1] if plan.applied else None
    out = epi.apply_plan(seq, plan, anchor)
    _write_text(args.out, serialize_pose_sequence(out))
    if args.plan_out:
        _write_text(args.plan_out, plan.to_json())
    else:
        _say(cfg, plan.to_json().rstrip())
    _say(cfg, f"applied={plan.applied} anchor={plan.anchor_id} ops={len(plan.ops)} -> {args.out}")
    return EXIT_OK


def cmd_pool_build(args, cfg: CliConfig) -> int:
    stride = args.stride if args.stride is not None else int(cfg.overrides.get("stride", DEFAULT_STRIDE))
    if stride < 1:
        raise UsageError("--stride must be positive")
    try:
        names = sorted(n for n in os.listdir(args.inp) if n.endswith(".json"))
    except OSError as e:
        raise IoError(args.inp, e.strerror or str(e)) from None
    pool = build_pool([os.path.join(args.inp, n) for n in names], stride)
    save_pool(pool, args.out)
    _say(cfg, f"{len(pool)} anchors from {len(names)} files -> {args.out}")
    return EXIT_OK


def cmd_pool_inspect(args, cfg: CliConfig) -> int:
    pool = load_pool(args.pool)
    print(f"entries: {len(pool)}")
    for i in pool.ids:
        print(i)
    return EXIT_OK


def cmd_render(args, cfg: CliConfig) -> int:
    seq = parse_pose_sequence(_read_bytes(args.inp))
    if not 0 <= args.frame < len(seq.frames):
        raise UsageError(f"--frame {args.frame} out of range for {len(seq.frames)} frames")
    w = args.width or seq.canvas_width
    h = args.height or seq.canvas_height
    _write_text(args.out, render_svg(seq.frames[args.frame], w, h))
    _say(cfg, f"frame {args.frame} -> {args.out}")
    return EXIT_OK


def cmd_ddim_demo(args, cfg: CliConfig) -> int:
    sched = cfg.schedule(args.t)
    sched.validate()
    if not 1 <= args.steps <= sched.T:
        raise UsageError(f"--steps must be in [1, {sched.T}], got {args.steps}")
    rng = np.random.default_rng(cfg.seed)
    z0 = rng.standard_normal(args.shape)
    zT = diffusion.q_sample(z0, sched.T, rng.standard_normal(args.shape), sched)
    calls = []

    def denoiser(z, t, c=None, _oracle=diffusion.oracle_denoiser(z0, sched)):
        calls.append(t)
        return _oracle(z, t)

    rec = diffusion.sample(denoiser, zT, sched, steps=args.steps, eta=args.eta,
                           noise_source=rng if args.eta > 0 else None)
    if args.out:
        fmat.write(args.out, rec)
    err = float(np.abs(rec - z0).max())
    print(f"steps={args.steps} T={sched.T} denoiser_calls={len(calls)} max_abs_error={err:.3e}")
    return EXIT_OK


def _frame_report(names, dir_a, dir_b) -> dict:
    frames_a, frames_b = metrics.read_frames(dir_a), metrics.read_frames(dir_b)
    if len(frames_a) != len(frames_b) or not frames_a:
        raise UsageError(f"frame counts differ or are zero: {len(frames_a)} vs {len(frames_b)}")
    report = {}
    for name in names:
        if name == "l1":
            report[name] = float(np.mean([metrics.l1(a, b) for a, b in zip(frames_a, frames_b)]))
        elif name == "psnr":
            report[name] = float(np.mean([metrics.psnr(a, b) for a, b in zip(frames_a, frames_b)]))
        elif name == "psnr_star":
            report[name] = metrics.psnr_star(frames_a, frames_b)
        elif name == "ssim":
            report[name] = float(np.mean([metrics.ssim(a, b) for a, b in zip(frames_a, frames_b)]))
        else:
            raise UsageError(f"metric {name!r} needs frame directories (--a/--b)")
    return report


def cmd_metrics(args, cfg: CliConfig) -> int:
    names = [n.strip() for n in args.metrics.split(",") if n.strip()]
    known = {"l1", "psnr", "psnr_star", "ssim", "frechet"}
    bad = [n for n in names if n not in known]
    if bad or not names:
        raise UsageError(f"unknown metrics {bad}; choose from {sorted(known)}")
    report = {}
    frame_names = [n for n in names if n != "frechet"]
    if frame_names:
        if not (args.a and args.b):
            raise UsageError("--a and --b are required for image metrics")
        report.update(_frame_report(frame_names, args.a, args.b))
    if "frechet" in names:
        if not (args.features_a and args.features_b):
            raise UsageError("--features-a and --features-b are required for frechet")
        p = metrics.gaussian_stats(fmat.read(args.features_a))
        q = metrics.gaussian_stats(fmat.read(args.features_b))
        report["frechet"] = metrics.frechet_distance(p, q)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write_text(args.out, text)
    if not cfg.quiet or not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args, cfg: CliConfig) -> int:
    names = verify.SUITES if args.suite == "all" else (args.suite,)
    schedule = cfg.schedule() if "schedule" in cfg.overrides else None
    checks = verify.run_suites(names, seed=cfg.seed, schedule=schedule)
    print(verify.format_table(checks))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


# ---------------------------------------------------------------------------


def _global_flags(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=_u64, default=d(0), help="64-bit seed (default 0)")
    parser.add_argument("--config", dest="config_path", default=d(None),
                        help="JSON file overriding rescale/schedule/lambda defaults")
    parser.add_argument("--quiet", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    parser = argparse.ArgumentParser(prog="motionkit", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", parents=[common], help="sample and apply one pose transform plan")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help=f"apply probability (default {epi.DEFAULT_LAMBDA})")
    p.add_argument("--out", required=True)
    p.add_argument("--plan-out")
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("pool", parents=[common], help="build or inspect an anchor pool")
    psub = p.add_subparsers(dest="pool_command", required=True)
    b = psub.add_parser("build", parents=[common])
    b.add_argument("--in", dest="inp", required=True, help="directory of pose JSON files")
    b.add_argument("--stride", type=int, default=None, help=f"frame stride (default {DEFAULT_STRIDE})")
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_pool_build)
    i = psub.add_parser("inspect", parents=[common])
    i.add_argument("pool")
    i.set_defaults(fn=cmd_pool_inspect)

    p = sub.add_parser("render", parents=[common], help="render one frame as SVG")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("ddim-demo", parents=[common], help="DDIM inversion with the oracle denoiser")
    p.add_argument("--t", type=int, default=1000)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--shape", type=_shape, default=(4, 8, 8))
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ddim_demo)

    p = sub.add_parser("metrics", parents=[common], help="image and feature metrics")
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--features-a")
    p.add_argument("--features-b")
    p.add_argument("--metrics", default="l1,psnr_star,ssim")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("verify", parents=[common], help="run property suites")
    p.add_argument("--suite", choices=verify.SUITES + ("all",), default="all")
    p.set_defaults(fn=cmd_verify)
    return parser


USAGE_ERRORS = (UsageError, ParseError, SchemaError, ArgumentError, TopologyError, ShapeError,
                ScheduleError, json.JSONDecodeError)
DATA_ERRORS = (PoolError, AnchorError, IoError, DegenerateError, ContractError, IndexError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = CliConfig.load(args.seed, args.config_path, args.quiet)
        return args.fn(args, cfg)
    except USAGE_ERRORS as e:
        print(f"motionkit: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"motionkit: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
