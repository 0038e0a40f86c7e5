"""Command-line front end: ``rbcd run | sweep-blocks | mc | make-phantom | make-video | metrics``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import imageio
from .experiments import (
    PROBLEMS,
    SWEEP_BLOCKS,
    ExperimentSpec,
    monte_carlo_experiment,
    run_experiment,
    sweep_blocks,
    write_summary_csv,
)
from .metrics import psnr, relative_error, ssim
from .operators import BlockVector, ShapeError
from .problems import ConfigurationError, shepp_logan, synthetic_video, vector_to_image
from .solver import DivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

_STOP_ALIASES = {"dp": "dp", "discrepancy": "dp", "apriori": "apriori", "a-priori": "apriori", "target": "target"}

# flag name -> (section, key) in the spec dictionary
_FLAG_MAP = {
    "problem": ("problem", "kind"),
    "blocks": ("problem", "blocks"),
    "problem_seed": ("problem", "seed"),
    "n": ("problem", "n"),
    "angles": ("problem", "angles"),
    "rays": ("problem", "rays"),
    "frames": ("problem", "frames"),
    "rows": ("problem", "rows"),
    "cols": ("problem", "cols"),
    "noise": ("noise", "delta_rel"),
    "noise_seed": ("noise", "seed"),
    "mu": ("solver", "mu"),
    "gamma": ("solver", "gamma"),
    "tau": ("solver", "tau"),
    "k_max": ("solver", "k_max"),
    "k_cap": ("solver", "k_cap"),
    "target": ("solver", "target"),
    "index_rule": ("solver", "index_rule"),
    "seed": ("solver", "seed"),
    "record_every": ("solver", "record_every"),
}


def _spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="spec JSON (or a meta.json from an earlier run); flags override it")
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--blocks", type=int)
    p.add_argument("--problem-seed", type=int, help="seed for random operators and masks")
    p.add_argument("--n", type=int, help="CT grid size")
    p.add_argument("--angles", type=int)
    p.add_argument("--rays", type=int, help="rays per angle")
    p.add_argument("--frames", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--noise", type=float, help="relative noise level")
    p.add_argument("--noise-seed", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--stop", choices=sorted(_STOP_ALIASES))
    p.add_argument("--k-max", type=int)
    p.add_argument("--k-cap", type=int)
    p.add_argument("--target", type=float)
    p.add_argument("--index-rule", choices=("uniform", "cyclic"))
    p.add_argument("--seed", type=int, help="index-stream seed")
    p.add_argument("--record-every", type=int)
    p.add_argument("--penalty", choices=("quadratic", "nonneg", "tv"))
    p.add_argument("--lam", type=float, help="penalty weight")
    p.add_argument("--tv-tol", type=float)
    p.add_argument("--tv-max-iter", type=int)
    p.add_argument("--out", help="output directory")


def spec_from_args(args) -> ExperimentSpec:
    if args.spec:
        with open(args.spec) as fh:
            base = ExperimentSpec.from_json(fh.read()).to_dict()
    else:
        base = ExperimentSpec().to_dict()
    for flag, (section, key) in _FLAG_MAP.items():
        val = getattr(args, flag, None)
        if val is not None:
            base[section][key] = val
    if args.stop is not None:
        base["solver"]["stop"] = _STOP_ALIASES[args.stop]
    if args.penalty is not None or args.lam is not None:
        pen = base["penalty"] or {"kind": "quadratic", "lambda": 0.0, "tv": {"tol": 1e-6, "max_iter": 200}}
        if args.penalty is not None:
            pen["kind"] = args.penalty
        if args.lam is not None:
            pen["lambda"] = args.lam
        base["penalty"] = pen
    if base["penalty"] is not None:
        if args.tv_tol is not None:
            base["penalty"]["tv"]["tol"] = args.tv_tol
        if args.tv_max_iter is not None:
            base["penalty"]["tv"]["max_iter"] = args.tv_max_iter
    if args.out is not None:
        base["output_dir"] = args.out
    return ExperimentSpec.from_dict(base)


def _cmd_run(args) -> int:
    spec = spec_from_args(args)
    out = spec.output_dir or "run_out"
    res, meta = run_experiment(spec, out)
    line = f"stop_index={res.stop_index} stop_reason={res.stop_reason} residual={res.final_residual:.6g}"
    m = meta["metrics"]
    line += f" rel_error={m['rel_error']:.6g}"
    if "psnr" in m:
        line += f" psnr={m['psnr']:.4g} ssim={m['ssim']:.4g}"
    print(line)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = spec_from_args(args)
    target = spec.solver.target
    rows = sweep_blocks(spec, blocks=args.block_list, runs=args.runs, target=target,
                        master_seed=args.master_seed, k_cap=spec.solver.k_cap)
    out = spec.output_dir or "sweep_out"
    os.makedirs(out, exist_ok=True)
    write_summary_csv(os.path.join(out, "summary.csv"), rows)
    with open(os.path.join(out, "spec.json"), "w") as fh:
        fh.write(spec.to_json())
    print("b     mean_iters  mean_seconds  reached")
    for row in rows:
        print(f"{row['b']:<5d} {row['mean_iters']:10.1f}  {row['mean_seconds']:12.4f}  {row['reached']}/{row['runs']}")
    return EXIT_OK


def _cmd_mc(args) -> int:
    spec = spec_from_args(args)
    mc = monte_carlo_experiment(spec, args.runs, args.master_seed, workers=args.workers)
    out = spec.output_dir or "mc_out"
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "mc.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "mean", "std"])
        for k, m, s in zip(mc.ks, mc.mean, mc.std):
            w.writerow([int(k), repr(float(m)), repr(float(s))])
    with open(os.path.join(out, "meta.json"), "w") as fh:
        json.dump({"spec": spec.to_dict(), "runs": args.runs, "master_seed": args.master_seed,
                   "seeds": mc.seeds, "failed": mc.failed,
                   "stop_indices": [int(k) for k in mc.stop_indices]}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{mc.count} runs, {len(mc.failed)} diverged; final mean {mc.mean[-1]:.6g} at k={int(mc.ks[-1])}")
    return EXIT_OK


def _write_image(path: str, img: np.ndarray) -> None:
    if path.lower().endswith(".pgm"):
        imageio.write_pgm(path, img)
    else:
        imageio.write_raw(path, img)


def _cmd_phantom(args) -> int:
    _write_image(args.out, shepp_logan(args.n))
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_video(args) -> int:
    x = synthetic_video(args.frames, args.rows, args.cols)
    frames = np.stack([vector_to_image(f, args.rows, args.cols) for f in x])
    os.makedirs(args.out, exist_ok=True)
    imageio.write_raw(os.path.join(args.out, "video.raw"), frames, layout="frames x rows x cols")
    for j, f in enumerate(frames):
        imageio.write_pgm(os.path.join(args.out, f"frame_{j:02d}.pgm"), f)
    print(f"wrote {args.out}")
    return EXIT_OK


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.10g}"


def _cmd_metrics(args) -> int:
    ref = imageio.read_image(args.ref)
    test = imageio.read_image(args.test)
    if ref.shape != test.shape:
        raise ShapeError(f"image shapes differ: {ref.shape} vs {test.shape}")
    peak = args.peak if args.peak is not None else max(float(np.max(ref)), 1e-300)
    p = psnr(ref, test, peak)
    s = ssim(ref, test, peak) if ref.ndim == 2 and min(ref.shape) >= 11 else float("nan")
    e = relative_error(BlockVector([ref.ravel()]), BlockVector([test.ravel()]))
    print(f"psnr={_fmt(p)} ssim={_fmt(s)} rel_err={_fmt(e)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbcd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment and write its artifacts")
    _spec_args(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep-blocks", help="mean steps to a target error for several block counts")
    _spec_args(p)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--block-list", type=lambda s: [int(t) for t in s.split(",")], default=list(SWEEP_BLOCKS),
                   help="comma-separated block counts")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("mc", help="Monte-Carlo mean and spread of the error history")
    _spec_args(p)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_mc)

    p = sub.add_parser("make-phantom", help="write a Shepp-Logan phantom (.pgm or raw)")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("make-video", help="write the synthetic moving-rectangle video")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--rows", type=int, default=32)
    p.add_argument("--cols", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_video)

    p = sub.add_parser("metrics", help="PSNR, SSIM and relative error between two images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--peak", type=float, help="dynamic range (default: max of the reference)")
    p.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: run diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, ShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
