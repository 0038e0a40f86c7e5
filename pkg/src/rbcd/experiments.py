"""Experiment specs, problem assembly, run artifacts and the block sweep."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from . import imageio
from .metrics import relative_error, video_metrics
from .operators import BlockOperator, BlockVector, DenseBlockOperator
from .penalties import Penalty
from .problems import (
    ConfigurationError,
    RadonGeometry,
    add_noise,
    even_angles,
    make_cacti,
    make_parallel_radon,
    make_tensor_product,
    shepp_logan,
    synthetic_video,
    image_to_vector,
    vector_to_image,
)
from .regularized import run_reg
from .solver import RNG_ALGORITHM, RunResult, SolverConfig, monte_carlo, run

logger = logging.getLogger(__name__)

PROBLEMS = ("synthetic-dense", "tensor-product", "ct", "cacti")
SWEEP_BLOCKS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class ProblemParams:
    kind: str = "ct"
    blocks: int = 4
    seed: int = 0
    # ct
    n: int = 64
    angles: int = 60
    angle_start: float = 1.0
    angle_stop: float = 180.0
    rays: int | None = None
    # cacti (the frame count is the block count)
    frames: int = 8
    rows: int = 32
    cols: int = 32
    # synthetic-dense
    m: int = 40
    block_size: int = 10
    # tensor-product
    d: int = 5
    p: int = 8
    q: int = 6

    def __post_init__(self):
        if self.kind not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.kind!r}; choose from {PROBLEMS}")


@dataclass(frozen=True)
class NoiseParams:
    delta_rel: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class ExperimentSpec:
    problem: ProblemParams = field(default_factory=ProblemParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    penalty: Penalty | None = None
    output_dir: str | None = None

    def to_dict(self) -> dict:
        pen = None
        if self.penalty is not None:
            pen = {
                "kind": self.penalty.kind,
                "lambda": self.penalty.lam,
                "tv": {"tol": self.penalty.tv_tol, "max_iter": self.penalty.tv_max_iter},
            }
        return {
            "problem": asdict(self.problem),
            "noise": asdict(self.noise),
            "solver": self.solver.to_dict(),
            "penalty": pen,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(ProblemParams)}
        prob = dict(d.get("problem", {}))
        unknown = set(prob) - known
        if unknown:
            raise ConfigurationError(f"unknown problem fields {sorted(unknown)}")
        pen = d.get("penalty")
        penalty = None
        if pen is not None:
            frame = _frame_shape(prob) if pen.get("kind") == "tv" else None
            tv = pen.get("tv", {})
            penalty = Penalty(
                kind=pen.get("kind", "quadratic"),
                lam=float(pen.get("lambda", 0.0)),
                frame_shape=frame,
                tv_tol=float(tv.get("tol", 1e-6)),
                tv_max_iter=int(tv.get("max_iter", 200)),
            )
        try:
            return cls(
                problem=ProblemParams(**prob),
                noise=NoiseParams(**d.get("noise", {})),
                solver=SolverConfig(**d.get("solver", {})),
                penalty=penalty,
                output_dir=d.get("output_dir"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        d = json.loads(text)
        if "spec" in d and "problem" not in d:
            d = d["spec"]  # a meta.json written by a previous run
        return cls.from_dict(d)

    def with_blocks(self, b: int) -> "ExperimentSpec":
        return replace(self, problem=replace(self.problem, blocks=b))


def _frame_shape(prob: dict) -> tuple[int, int]:
    """Image shape of one block, which is what the TV penalty acts on."""
    kind = prob.get("kind", "ct")
    if kind == "cacti":
        return (int(prob.get("rows", 32)), int(prob.get("cols", 32)))
    if kind == "ct" and int(prob.get("blocks", 4)) == 1:
        n = int(prob.get("n", 64))
        return (n, n)
    raise ConfigurationError("the tv penalty needs one image per block (cacti, or ct with one block)")


@dataclass
class Problem:
    op: BlockOperator
    x_true: BlockVector
    y: np.ndarray
    image_shape: tuple[int, int] | None = None
    per_block_images: bool = False
    info: dict = field(default_factory=dict)

    def images(self, x: BlockVector) -> list[np.ndarray]:
        """Reconstruction as images: one per frame, or one for the whole vector."""
        if self.image_shape is None:
            return []
        r, c = self.image_shape
        if self.per_block_images:
            return [vector_to_image(blk, r, c) for blk in x]
        return [vector_to_image(x.flat(), r, c)]


def build_problem(params: ProblemParams) -> Problem:
    rng = np.random.default_rng(params.seed)
    b = params.blocks
    if b < 1:
        raise ConfigurationError("need at least one block")
    if params.kind == "synthetic-dense":
        A = rng.standard_normal((params.m, b * params.block_size))
        op = DenseBlockOperator.from_matrix(A, [params.block_size] * b)
        x = BlockVector.from_flat(rng.standard_normal(b * params.block_size), op.block_dims)
        return Problem(op, x, op.apply(x))
    if params.kind == "tensor-product":
        op = make_tensor_product(rng.standard_normal((params.d, b)), rng.standard_normal((params.p, params.q)))
        x = BlockVector([rng.standard_normal(params.q) for _ in range(b)])
        return Problem(op, x, op.apply(x), info={"v_star": op.v_star, "full_column_rank": op.full_column_rank})
    if params.kind == "ct":
        geom = RadonGeometry(
            params.n, even_angles(params.angles, params.angle_start, params.angle_stop), params.rays
        )
        op = make_parallel_radon(geom, b)
        x = BlockVector.from_flat(image_to_vector(shepp_logan(params.n)), op.block_dims)
        return Problem(
            op, x, op.apply(x), (params.n, params.n),
            info={"rays_per_angle": geom.rays, "angles": list(geom.angles), "pixel_order": "column-major"},
        )
    # cacti
    op, stack = make_cacti(params.frames, params.rows, params.cols, seed=params.seed)
    x = synthetic_video(params.frames, params.rows, params.cols)
    return Problem(
        op, x, op.apply(x), (params.rows, params.cols), per_block_images=True,
        info={"mask_shift": stack.shift, "max_coverage": float(op.coverage().max())},
    )


def execute(spec: ExperimentSpec, problem: Problem | None = None):
    """Build (unless given), add noise and solve.  Returns ``(result, problem, noisy)``."""
    if problem is None:
        problem = build_problem(spec.problem)
    noisy = add_noise(problem.y, spec.noise.delta_rel, spec.noise.seed)
    if spec.penalty is None:
        res = run(problem.op, noisy.y_delta, noisy.delta, None, spec.solver, reference=problem.x_true)
    else:
        res = run_reg(problem.op, noisy.y_delta, noisy.delta, spec.penalty, spec.solver, reference=problem.x_true)
    return res, problem, noisy


def _jsonable(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def image_metrics(problem: Problem, x: BlockVector, peak: float = 1.0) -> dict:
    out: dict[str, Any] = {
        "rel_error": relative_error(problem.x_true, x),
        "rel_sq_error": relative_error(problem.x_true, x, squared=True),
    }
    refs, recs = problem.images(problem.x_true), problem.images(x)
    if refs and min(refs[0].shape) >= 11:
        vm = video_metrics(refs, recs, peak)
        out["psnr"], out["ssim"] = vm["psnr"], vm["ssim"]
        if problem.per_block_images:
            out["psnr_frames"], out["ssim_frames"] = vm["psnr_frames"], vm["ssim_frames"]
    return out


def write_errors_csv(path: str, res: RunResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "residual", "rel_sq_error"])
        err = res.error_history if res.error_history is not None else [float("nan")] * len(res.ks)
        for k, rn, e in zip(res.ks, res.residual_history, err):
            w.writerow([int(k), repr(float(rn)), repr(float(e))])


def write_outputs(out_dir: str, spec: ExperimentSpec, res: RunResult, problem: Problem, noisy) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    write_errors_csv(os.path.join(out_dir, "errors.csv"), res)
    with open(os.path.join(out_dir, "spec.json"), "w") as fh:
        fh.write(spec.to_json())
    previews = {}
    imgs = problem.images(res.x_final)
    if imgs:
        stack = np.stack(imgs)
        imageio.write_raw(os.path.join(out_dir, "recon.raw"), stack, layout="frames x rows x cols")
        for j, img in enumerate(imgs):
            name = "recon.pgm" if len(imgs) == 1 else f"recon_{j:02d}.pgm"
            previews[name] = imageio.write_pgm(os.path.join(out_dir, name), img)
    else:
        imageio.write_raw(os.path.join(out_dir, "recon.raw"), res.x_final.flat(), block_dims=list(res.x_final.dims))
    norm = problem.op._norm_cache
    meta = {
        "spec": spec.to_dict(),
        "stop_index": res.stop_index,
        "stop_reason": res.stop_reason,
        "wall_time": res.wall_time,
        "gamma": res.gamma,
        "final_residual": res.final_residual,
        "delta": noisy.delta,
        "tau_delta": spec.solver.tau * noisy.delta if spec.solver.stop == "dp" else None,
        "seeds": {"solver": spec.solver.seed, "noise": spec.noise.seed, "problem": spec.problem.seed},
        "rng_algorithm": RNG_ALGORITHM,
        "norm_estimate": None if norm is None else asdict(norm),
        "metrics": image_metrics(problem, res.x_final),
        "problem_info": problem.info,
        "previews": previews,
        "platform": {"python": platform.python_version(), "numpy": np.__version__},
    }
    if spec.penalty is not None:
        meta["penalty"] = res.extra.get("penalty")
        meta["tv_warnings"] = res.extra.get("tv_warnings", 0)
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def run_experiment(spec: ExperimentSpec, out_dir: str | None = None) -> tuple[RunResult, dict | None]:
    res, problem, noisy = execute(spec)
    out_dir = out_dir or spec.output_dir
    meta = write_outputs(out_dir, spec, res, problem, noisy) if out_dir else None
    return res, meta


# ---------------------------------------------------------------------------
# block sweep and Monte Carlo


def sweep_blocks(
    spec: ExperimentSpec,
    blocks=SWEEP_BLOCKS,
    runs: int = 20,
    target: float = 0.05,
    master_seed: int = 0,
    k_cap: int = 1_000_000,
) -> list[dict]:
    """Mean steps (and seconds) to reach a squared relative error below ``target``.

    Every block count gets ``runs`` solver seeds derived from ``master_seed``;
    the problem and noise are the same for all of them.
    """
    rows = []
    for b in blocks:
        bspec = spec.with_blocks(b)
        problem = build_problem(bspec.problem)
        solver = replace(bspec.solver, stop="target", target=target, k_cap=k_cap)
        noisy = add_noise(problem.y, bspec.noise.delta_rel, bspec.noise.seed)

        def one(seed, problem=problem, solver=solver, noisy=noisy):
            cfg = replace(solver, seed=seed)
            if bspec.penalty is None:
                return run(problem.op, noisy.y_delta, noisy.delta, None, cfg, reference=problem.x_true)
            return run_reg(problem.op, noisy.y_delta, noisy.delta, bspec.penalty, cfg, reference=problem.x_true)

        mc = monte_carlo(one, runs, master_seed, keep_results=True)
        reached = [r.stop_reason == "target" for r in mc.results]
        rows.append({
            "b": b,
            "mean_iters": float(np.mean(mc.stop_indices)),
            "mean_seconds": float(np.mean([r.wall_time for r in mc.results])),
            "runs": mc.count,
            "reached": int(sum(reached)),
        })
        logger.info("b=%d: mean iterations %.1f", b, rows[-1]["mean_iters"])
    return rows


def write_summary_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["b", "mean_iters", "mean_seconds"])
        for row in rows:
            w.writerow([row["b"], repr(row["mean_iters"]), repr(row["mean_seconds"])])


def monte_carlo_experiment(spec: ExperimentSpec, runs: int, master_seed: int = 0, workers: int = 1):
    problem = build_problem(spec.problem)
    noisy = add_noise(problem.y, spec.noise.delta_rel, spec.noise.seed)

    def one(seed):
        cfg = replace(spec.solver, seed=seed)
        if spec.penalty is None:
            return run(problem.op, noisy.y_delta, noisy.delta, None, cfg, reference=problem.x_true)
        return run_reg(problem.op, noisy.y_delta, noisy.delta, spec.penalty, cfg, reference=problem.x_true)

    return monte_carlo(one, runs, master_seed, workers=workers)
