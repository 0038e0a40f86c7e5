"""Randomized (and cyclic) block coordinate descent with a priori or
discrepancy-principle stopping, plus a seeded Monte-Carlo harness.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .operators import BlockOperator, BlockVector, operator_norm

logger = logging.getLogger(__name__)

__all__ = [
    "DivergenceError",
    "SolverConfig",
    "IterationState",
    "RunResult",
    "IndexStream",
    "RNG_ALGORITHM",
    "select_index",
    "init_state",
    "rbcd_step",
    "dp_step_size",
    "run",
    "monte_carlo",
    "MonteCarloResult",
    "derive_seed",
    "default_record_ks",
]

RNG_ALGORITHM = "numpy.random.Philox(4x64-10); uniform block draws via Generator.integers in chunks of 4096"
_CHUNK = 4096


class DivergenceError(ArithmeticError):
    def __init__(self, k: int, i_k: int | None, msg: str = "non-finite values in the iterate"):
        super().__init__(f"{msg} at step {k} (block {i_k})")
        self.k = k
        self.i_k = i_k


@dataclass(frozen=True)
class SolverConfig:
    """Step size, stopping rule and index rule of one run.

    ``gamma`` overrides the default ``mu / ||A||^2``.  ``stop`` is one of
    ``"apriori"`` (run ``k_max`` steps), ``"dp"`` (discrepancy principle with
    factor ``tau``, hard cap ``k_cap``) or ``"target"`` (stop once the squared
    relative error against the reference drops below ``target``, hard cap
    ``k_cap``).
    """

    mu: float = 1.0
    gamma: float | None = None
    stop: str = "apriori"
    k_max: int = 1000
    tau: float = 1.1
    k_cap: int = 1_000_000
    target: float = 0.05
    index_rule: str = "uniform"
    seed: int = 0
    record_every: int | None = None

    def __post_init__(self):
        if self.stop not in ("apriori", "dp", "target"):
            raise ValueError(f"unknown stopping rule {self.stop!r}")
        if self.index_rule not in ("uniform", "cyclic"):
            raise ValueError(f"unknown index rule {self.index_rule!r}")
        if self.gamma is None and not 0 < self.mu < 2:
            raise ValueError("mu must lie in (0, 2)")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.stop == "apriori" and self.k_max < 0:
            raise ValueError("k_max must be nonnegative")
        if self.stop == "dp" and not self.tau > 1:
            raise ValueError("the discrepancy factor tau must exceed 1")
        if self.stop in ("dp", "target") and self.k_cap < 0:
            raise ValueError("k_cap must be nonnegative")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be positive")

    def step_size(self, op: BlockOperator, scale: float = 1.0) -> float:
        """``gamma`` if given, else ``scale * mu / ||A||^2``."""
        if self.gamma is not None:
            return float(self.gamma)
        norm = operator_norm(op).value
        if norm == 0:
            raise ValueError("operator norm is zero")
        return scale * self.mu / norm**2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationState:
    k: int
    x: BlockVector
    r: np.ndarray
    last_index: int | None = None
    gamma_k: float = 0.0


@dataclass
class RunResult:
    stop_index: int
    x_final: BlockVector
    stop_reason: str
    ks: np.ndarray
    residual_history: np.ndarray
    error_history: np.ndarray | None
    gamma: float
    seed: int
    rng_algorithm: str = RNG_ALGORITHM
    final_residual: float = float("nan")
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)


class IndexStream:
    """Reproducible sequence of block indices ``i_0, i_1, ...`` (zero-based).

    Uniform draws come from a counter-based Philox generator in fixed-size
    chunks, so two streams with the same seed agree regardless of how far
    each is consumed.
    """

    def __init__(self, rule: str, b: int, seed: int = 0):
        if b < 1:
            raise ValueError("need at least one block")
        self.rule, self.b, self.seed = rule, b, seed
        self._rng = np.random.Generator(np.random.Philox(seed)) if rule == "uniform" else None
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def __call__(self, k: int) -> int:
        if self.rule == "cyclic":
            return k % self.b
        if self.b == 1:
            return 0
        if self._pos == self._buf.size:
            self._buf = self._rng.integers(0, self.b, size=_CHUNK)
            self._pos = 0
        i = int(self._buf[self._pos])
        self._pos += 1
        return i


def select_index(rule: str, k: int, stream: IndexStream) -> int:
    """Index for step ``k``: ``k mod b`` (cyclic) or the next uniform draw."""
    if rule == "cyclic":
        return k % stream.b
    return stream(k)


def init_state(op: BlockOperator, y_delta: np.ndarray, x0: BlockVector | None = None) -> IterationState:
    x0 = op.zeros() if x0 is None else x0.copy()
    if x0.dims != op.block_dims:
        raise ValueError(f"initial guess dims {x0.dims} do not match operator {op.block_dims}")
    y_delta = np.asarray(y_delta, dtype=np.float64)
    if not np.all(np.isfinite(y_delta)):
        raise ValueError("data contains non-finite values")
    return IterationState(0, x0, op.apply(x0) - y_delta)


def rbcd_step(state: IterationState, op: BlockOperator, gamma_k: float, i_k: int) -> IterationState:
    """One block update; the residual follows the recursion, never recomputed."""
    old = state.x[i_k]
    # overflow is reported below as a DivergenceError, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        new = old - gamma_k * op.adjoint_block(i_k, state.r)
        r = state.r + op.apply_block(i_k, new - old)
    if not (np.all(np.isfinite(new)) and np.all(np.isfinite(r))):
        raise DivergenceError(state.k, i_k)
    return IterationState(state.k + 1, state.x.replace(i_k, new), r, i_k, gamma_k)


def dp_step_size(residual_norm: float, tau: float, delta: float, gamma: float) -> float:
    return gamma if residual_norm > tau * delta else 0.0


def default_record_ks(k: int) -> bool:
    return k <= 1000 or k % 10 == 0


class _Recorder:
    """Samples residual norms and squared relative errors along a run."""

    def __init__(self, record_every, reference: BlockVector | None):
        self.every = record_every
        self.ks, self.res, self.err = [], [], []
        self.reference = reference
        if reference is not None:
            ref_sq = reference.sq_norm()
            if ref_sq == 0:
                raise ValueError("reference has zero norm")
            self.ref_sq = ref_sq
            self.block_err = None

    def want(self, k: int) -> bool:
        return default_record_ks(k) if self.every is None else k % self.every == 0

    def start(self, x: BlockVector):
        if self.reference is not None:
            self.block_err = np.array(
                [float(np.dot(a - b, a - b)) for a, b in zip(x.blocks, self.reference.blocks)]
            )

    def update(self, x: BlockVector, i: int):
        if self.reference is not None:
            d = x[i] - self.reference[i]
            self.block_err[i] = float(np.dot(d, d))

    def rel_sq_error(self) -> float:
        return float(self.block_err.sum()) / self.ref_sq

    def record(self, k: int, rnorm: float, force: bool = False):
        if force or self.want(k):
            if self.ks and self.ks[-1] == k:
                return
            self.ks.append(k)
            self.res.append(rnorm)
            if self.reference is not None:
                self.err.append(self.rel_sq_error())

    def arrays(self):
        err = np.array(self.err) if self.reference is not None else None
        return np.array(self.ks, dtype=np.int64), np.array(self.res), err


def run(
    op: BlockOperator,
    y_delta: np.ndarray,
    delta: float,
    x0: BlockVector | None,
    config: SolverConfig,
    reference: BlockVector | None = None,
) -> RunResult:
    """Run block coordinate descent from ``x0`` (zeros when ``None``).

    With ``stop="dp"`` the step size is ``gamma`` while ``||r_k|| > tau*delta``
    and the run ends at the first ``k`` where this fails, since every later
    iterate would be identical.  ``reference`` enables the error history.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if config.stop == "target" and reference is None:
        raise ValueError("the target stopping rule needs a reference solution")
    t0 = time.perf_counter()
    gamma = config.step_size(op)
    state = init_state(op, y_delta, x0)
    stream = IndexStream(config.index_rule, op.b, config.seed)
    rec = _Recorder(config.record_every, reference)
    rec.start(state.x)
    if config.stop == "dp" and delta == 0:
        logger.warning("discrepancy principle with delta = 0 runs until the cap (%d)", config.k_cap)
    limit = config.k_max if config.stop == "apriori" else config.k_cap
    reason = "k_max" if config.stop == "apriori" else "cap"
    threshold = config.tau * delta
    while True:
        rnorm = float(np.linalg.norm(state.r))
        rec.record(state.k, rnorm)
        if config.stop == "dp" and rnorm <= threshold:
            reason = "discrepancy"
            break
        if config.stop == "target" and rec.rel_sq_error() < config.target:
            reason = "target"
            break
        if state.k >= limit:
            break
        i_k = select_index(config.index_rule, state.k, stream)
        state = rbcd_step(state, op, gamma, i_k)
        rec.update(state.x, i_k)
    rec.record(state.k, rnorm, force=True)
    ks, res, err = rec.arrays()
    return RunResult(
        stop_index=state.k,
        x_final=state.x,
        stop_reason=reason,
        ks=ks,
        residual_history=res,
        error_history=err,
        gamma=gamma,
        seed=config.seed,
        final_residual=rnorm,
        wall_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# Monte Carlo


def derive_seed(master_seed: int, run_index: int) -> int:
    """Stable 63-bit child seed for run ``run_index``."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(run_index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class MonteCarloResult:
    ks: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    count: int
    failed: list[int]
    seeds: list[int]
    stop_indices: np.ndarray
    results: list[RunResult] = field(repr=False, default_factory=list)


def monte_carlo(
    problem: Callable[[int], RunResult],
    runs: int,
    master_seed: int = 0,
    *,
    workers: int = 1,
    keep_results: bool = False,
) -> MonteCarloResult:
    """Run ``problem(seed)`` for ``runs`` derived seeds and aggregate.

    The per-step mean and standard deviation of the squared relative error
    are taken over the sampled steps common to all successful runs, in
    ascending run order.  Runs raising :class:`DivergenceError` are dropped
    and listed in ``failed``.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    seeds = [derive_seed(master_seed, r) for r in range(runs)]

    def one(r):
        try:
            return problem(seeds[r])
        except DivergenceError as exc:
            logger.warning("run %d diverged: %s", r, exc)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(runs)))
    else:
        outcomes = [one(r) for r in range(runs)]
    ok = [(r, res) for r, res in enumerate(outcomes) if res is not None]
    failed = [r for r, res in enumerate(outcomes) if res is None]
    if not ok:
        raise DivergenceError(-1, None, "every Monte-Carlo run diverged")
    ks = ok[0][1].ks
    for _, res in ok[1:]:
        ks = np.intersect1d(ks, res.ks)
    rows = []
    for _, res in ok:
        h = res.error_history if res.error_history is not None else res.residual_history
        rows.append(h[np.isin(res.ks, ks)])
    stack = np.vstack(rows)
    mean = np.zeros(ks.size)
    for row in stack:
        mean = mean + row
    mean = mean / len(stack)
    std = np.sqrt(np.mean((stack - mean) ** 2, axis=0))
    return MonteCarloResult(
        ks=ks,
        mean=mean,
        std=std,
        count=len(ok),
        failed=failed,
        seeds=seeds,
        stop_indices=np.array([res.stop_index for _, res in ok]),
        results=[res for _, res in ok] if keep_results else [],
    )
