"""Separable strongly convex penalties and their block minimizers.

Every built-in penalty has the form ``R_i(z) = 1/2 ||z||^2 + h(z)`` with
``h`` convex, so its strong convexity modulus is ``kappa = 1/2`` and

    argmin_z R_i(z) - <xi, z>  =  prox_h(xi).

The TV kind needs a denoising sub-solver; :func:`tv_denoise` solves the dual
problem by accelerated projected gradient (fast gradient projection) with
adaptive momentum restart and stops on the duality gap.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from ._tvkernel import fgp
from .operators import BlockVector

__all__ = [
    "Penalty",
    "ProxOutcome",
    "TVResult",
    "OUT_OF_DOMAIN",
    "grad",
    "div",
    "tv_value",
    "tv_denoise",
    "tv_duality_gap",
    "block_minimizer",
    "penalty_value",
    "block_penalty_value",
    "bregman_distance",
    "KINDS",
]

KINDS = ("quadratic", "nonneg", "tv")
TV_SOLVER_NAME = "fast dual gradient projection (step 1/8, adaptive restart), isotropic TV, forward differences"
_GAP_EVERY = 4  # iterations between duality-gap evaluations


class _OutOfDomain:
    """Marker for penalty values of points outside ``dom(R)``.

    Deliberately not a float: arithmetic on it fails loudly.
    """

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "OUT_OF_DOMAIN"


OUT_OF_DOMAIN = _OutOfDomain()


# ---------------------------------------------------------------------------
# discrete gradient / divergence


def grad(u: np.ndarray) -> np.ndarray:
    """Forward differences with replicate boundary; returns ``(2, rows, cols)``.

    Component 0 differences along columns (horizontal), component 1 along
    rows (vertical).  The last column/row gets a zero difference.
    """
    g = np.zeros((2,) + u.shape)
    g[0, :, :-1] = u[:, 1:] - u[:, :-1]
    g[1, :-1, :] = u[1:, :] - u[:-1, :]
    return g


def div(p: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`grad`."""
    px, py = p[0], p[1]
    out = np.zeros(px.shape)
    out[:, :-1] += px[:, :-1]
    out[:, 1:] -= px[:, :-1]
    out[:-1, :] += py[:-1, :]
    out[1:, :] -= py[:-1, :]
    return out


def tv_value(u: np.ndarray) -> float:
    g = grad(u)
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


def _project_unit_ball(p: np.ndarray) -> np.ndarray:
    mag = np.maximum(1.0, np.sqrt(p[0] ** 2 + p[1] ** 2))
    return p / mag


class TVResult(NamedTuple):
    image: np.ndarray
    gap: float
    primal: float
    iterations: int
    converged: bool
    dual: np.ndarray


def tv_duality_gap(v: np.ndarray, lam: float, p: np.ndarray) -> tuple[float, float, np.ndarray]:
    """``(gap, primal, z)`` for a feasible dual field ``p``.

    ``z = v + lam * div(p)`` is the primal point paired with ``p``; the gap is
    ``P(z) - D(p)`` with ``P(z) = 1/2||z - v||^2 + lam TV(z)`` and
    ``D(p) = 1/2||v||^2 - 1/2||z||^2``.
    """
    z = v + lam * div(p)
    primal = 0.5 * float(np.sum((z - v) ** 2)) + lam * tv_value(z)
    dual = 0.5 * float(np.sum(v * v)) - 0.5 * float(np.sum(z * z))
    return primal - dual, primal, z


def tv_denoise(
    v: np.ndarray,
    lam: float,
    tol: float = 1e-6,
    max_iter: int = 200,
    p0: np.ndarray | None = None,
) -> TVResult:
    """Minimize ``1/2 ||z - v||^2 + lam * TV(z)`` over images ``z``.

    Stops once ``gap <= tol * (1 + |primal|)`` or after ``max_iter``
    iterations; ``converged`` reports which.  ``p0`` warm-starts the dual.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("tv_denoise expects a 2-D image")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0:
        return TVResult(v.copy(), 0.0, 0.0, 0, True, np.zeros((2,) + v.shape))
    p = np.zeros((2,) + v.shape) if p0 is None else _project_unit_ball(np.array(p0, dtype=np.float64))
    px = np.ascontiguousarray(p[0])
    py = np.ascontiguousarray(p[1])
    v = np.ascontiguousarray(v)
    z, gap, primal, its, ok = fgp(v, float(lam), px, py, float(tol), int(max_iter), _GAP_EVERY)
    return TVResult(z, float(gap), float(primal), int(its), bool(ok), np.stack([px, py]))


# ---------------------------------------------------------------------------
# penalties


@dataclass(frozen=True)
class Penalty:
    """``R(x) = sum_i R_i(x_i)`` with the same kind on every block.

    kinds: ``"quadratic"`` (1/2||z||^2), ``"nonneg"`` (plus the indicator of
    ``z >= 0``) and ``"tv"`` (plus ``lam`` times the isotropic TV of the block
    reshaped column-major to a ``frame_shape`` image).
    """

    kind: str = "quadratic"
    lam: float = 0.0
    frame_shape: tuple[int, int] | None = None
    tv_tol: float = 1e-6
    tv_max_iter: int = 200

    kappa = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.kind == "tv":
            if self.frame_shape is None:
                raise ValueError("the TV penalty needs frame dimensions")
            object.__setattr__(self, "frame_shape", tuple(int(s) for s in self.frame_shape))

    def check_block(self, n: int) -> None:
        if self.kind == "tv" and n != self.frame_shape[0] * self.frame_shape[1]:
            raise ValueError(f"block of length {n} does not match frame {self.frame_shape}")

    def frame(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z).reshape(self.frame_shape, order="F")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kappa"] = self.kappa
        if self.kind == "tv":
            d["tv_solver"] = TV_SOLVER_NAME
        return d


class ProxOutcome(NamedTuple):
    z: np.ndarray
    converged: bool = True
    gap: float = 0.0
    dual: np.ndarray | None = None


def block_minimizer(
    penalty: Penalty,
    i: int,
    xi_i: np.ndarray,
    *,
    tol: float | None = None,
    max_iter: int | None = None,
    dual0: np.ndarray | None = None,
) -> ProxOutcome:
    """``argmin_z R_i(z) - <xi_i, z>`` for block ``i``."""
    xi_i = np.asarray(xi_i, dtype=np.float64)
    penalty.check_block(xi_i.size)
    if penalty.kind == "quadratic":
        return ProxOutcome(xi_i.copy())
    if penalty.kind == "nonneg":
        return ProxOutcome(np.maximum(xi_i, 0.0))
    res = tv_denoise(
        penalty.frame(xi_i),
        penalty.lam,
        tol=penalty.tv_tol if tol is None else tol,
        max_iter=penalty.tv_max_iter if max_iter is None else max_iter,
        p0=dual0,
    )
    return ProxOutcome(res.image.ravel(order="F"), res.converged, res.gap, res.dual)


def block_penalty_value(penalty: Penalty, z: np.ndarray):
    z = np.asarray(z, dtype=np.float64)
    quad = 0.5 * float(np.dot(z, z))
    if penalty.kind == "quadratic":
        return quad
    if penalty.kind == "nonneg":
        return OUT_OF_DOMAIN if np.any(z < -1e-12) else quad
    return quad + penalty.lam * tv_value(penalty.frame(z))


def penalty_value(penalty: Penalty, x: BlockVector):
    """``sum_i R_i(x_i)``, or :data:`OUT_OF_DOMAIN` outside the domain."""
    total = 0.0
    for blk in x:
        val = block_penalty_value(penalty, blk)
        if val is OUT_OF_DOMAIN:
            return OUT_OF_DOMAIN
        total += val
    return total


def bregman_distance(penalty: Penalty, x_bar: BlockVector, x: BlockVector, xi: BlockVector) -> float:
    """``R(x_bar) - R(x) - <xi, x_bar - x>`` for a subgradient ``xi`` at ``x``."""
    rb = penalty_value(penalty, x_bar)
    rx = penalty_value(penalty, x)
    if rb is OUT_OF_DOMAIN or rx is OUT_OF_DOMAIN:
        raise ValueError("Bregman distance is undefined outside dom(R)")
    return rb - rx - sum(float(np.dot(s, a - c)) for s, a, c in zip(xi, x_bar, x))
