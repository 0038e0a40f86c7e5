"""Block linear operators ``A x = sum_i A_i x_i`` and operator-norm estimation.

Block indices are zero-based throughout the package.  Data vectors are plain
1-D ``float64`` arrays; unknowns are :class:`BlockVector` instances.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

logger = logging.getLogger(__name__)

__all__ = [
    "BlockVector",
    "BlockOperator",
    "DenseBlockOperator",
    "SparseBlockOperator",
    "TensorProductOperator",
    "MaskOperator",
    "NormEstimate",
    "ShapeError",
    "apply",
    "apply_block",
    "adjoint_block",
    "operator_norm",
    "load_operator",
]


class ShapeError(ValueError):
    """Raised when a vector does not conform to an operator's dimensions."""


class BlockVector:
    """Element of the product space ``X_1 x ... x X_b``.

    Holds a list of 1-D float64 arrays.  The inner product is the sum of the
    per-block inner products.
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks: Sequence[np.ndarray]):
        if len(blocks) < 1:
            raise ValueError("a BlockVector needs at least one block")
        self.blocks = [np.asarray(blk, dtype=np.float64).ravel() for blk in blocks]

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "BlockVector":
        return cls([np.zeros(int(n)) for n in dims])

    @classmethod
    def from_flat(cls, flat, dims: Sequence[int]) -> "BlockVector":
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.size != int(np.sum(dims)):
            raise ShapeError(f"flat vector of length {flat.size} does not split into {list(dims)}")
        cuts = np.cumsum(dims)[:-1]
        return cls([part.copy() for part in np.split(flat, cuts)])

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(blk.size for blk in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.blocks[i]

    def __iter__(self):
        return iter(self.blocks)

    def __repr__(self) -> str:
        return f"BlockVector(dims={self.dims})"

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    def copy(self) -> "BlockVector":
        return BlockVector([blk.copy() for blk in self.blocks])

    def replace(self, i: int, block: np.ndarray) -> "BlockVector":
        """Shallow copy with block ``i`` swapped out; other blocks are shared."""
        new = BlockVector.__new__(BlockVector)
        new.blocks = list(self.blocks)
        new.blocks[i] = block
        return new

    def dot(self, other: "BlockVector") -> float:
        return float(sum(np.dot(a, b) for a, b in zip(self.blocks, other.blocks)))

    def sq_norm(self) -> float:
        return float(sum(np.dot(blk, blk) for blk in self.blocks))

    def norm(self) -> float:
        return float(np.sqrt(self.sq_norm()))

    def __sub__(self, other: "BlockVector") -> "BlockVector":
        return BlockVector([a - b for a, b in zip(self.blocks, other.blocks)])

    def __add__(self, other: "BlockVector") -> "BlockVector":
        return BlockVector([a + b for a, b in zip(self.blocks, other.blocks)])

    def scale(self, c: float) -> "BlockVector":
        return BlockVector([c * blk for blk in self.blocks])

    def allclose(self, other: "BlockVector", **kw) -> bool:
        return self.dims == other.dims and all(
            np.allclose(a, b, **kw) for a, b in zip(self.blocks, other.blocks)
        )

    def equal(self, other: "BlockVector") -> bool:
        """Bitwise equality of every block."""
        return self.dims == other.dims and all(
            np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks)
        )


@dataclass(frozen=True)
class NormEstimate:
    value: float
    converged: bool
    iterations: int
    method: str = "power"

    def __float__(self) -> float:
        return self.value


class BlockOperator:
    """Base class for ``A : X_1 x ... x X_b -> Y``.

    Subclasses implement ``_apply_block`` and ``_adjoint_block``; argument
    checking lives here.
    """

    kind = "abstract"

    def __init__(self, block_dims: Sequence[int], data_dim: int):
        self.block_dims = tuple(int(n) for n in block_dims)
        self.data_dim = int(data_dim)
        if not self.block_dims or min(self.block_dims) < 1:
            raise ValueError("every block needs at least one unknown")
        self._norm_cache: NormEstimate | None = None
        self._block_norm_cache: dict[int, float] = {}

    @property
    def b(self) -> int:
        return len(self.block_dims)

    @property
    def domain_dim(self) -> int:
        return sum(self.block_dims)

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.b:
            raise IndexError(f"block index {i} out of range for b={self.b}")

    def apply_block(self, i: int, x_i: np.ndarray) -> np.ndarray:
        self._check_index(i)
        x_i = np.asarray(x_i, dtype=np.float64)
        if x_i.shape != (self.block_dims[i],):
            raise ShapeError(f"block {i}: expected length {self.block_dims[i]}, got shape {x_i.shape}")
        return self._apply_block(i, x_i)

    def adjoint_block(self, i: int, r: np.ndarray) -> np.ndarray:
        self._check_index(i)
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.data_dim,):
            raise ShapeError(f"block {i}: data vector must have length {self.data_dim}, got shape {r.shape}")
        return self._adjoint_block(i, r)

    def apply(self, x: BlockVector) -> np.ndarray:
        if len(x) != self.b:
            raise ShapeError(f"expected {self.b} blocks, got {len(x)}")
        out = np.zeros(self.data_dim)
        for i in range(self.b):
            out = out + self.apply_block(i, x[i])
        return out

    def adjoint(self, r: np.ndarray) -> BlockVector:
        return BlockVector([self.adjoint_block(i, r) for i in range(self.b)])

    def zeros(self) -> BlockVector:
        return BlockVector.zeros(self.block_dims)

    def to_dense(self) -> np.ndarray:
        """Materialize ``A`` column by column (small instances only)."""
        cols = []
        for i, n in enumerate(self.block_dims):
            eye = np.eye(n)
            cols.append(np.column_stack([self._apply_block(i, eye[:, j]) for j in range(n)]))
        return np.hstack(cols)

    def block_to_dense(self, i: int) -> np.ndarray:
        eye = np.eye(self.block_dims[i])
        return np.column_stack([self._apply_block(i, eye[:, j]) for j in range(self.block_dims[i])])

    def _exact_norm(self) -> float | None:
        """Closed-form ``||A||`` when the structure allows it."""
        return None

    def _apply_block(self, i, x_i):  # pragma: no cover - abstract
        raise NotImplementedError

    def _adjoint_block(self, i, r):  # pragma: no cover - abstract
        raise NotImplementedError


class DenseBlockOperator(BlockOperator):
    """Operator given by a list of dense ``m x n_i`` matrices."""

    kind = "dense"

    def __init__(self, blocks: Sequence[np.ndarray]):
        mats = [np.atleast_2d(np.asarray(M, dtype=np.float64)) for M in blocks]
        m = mats[0].shape[0]
        if any(M.shape[0] != m for M in mats):
            raise ShapeError("all blocks must share the same number of rows")
        super().__init__([M.shape[1] for M in mats], m)
        self.mats = mats

    @classmethod
    def from_matrix(cls, A: np.ndarray, block_dims: Sequence[int]) -> "DenseBlockOperator":
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        if A.shape[1] != sum(block_dims):
            raise ShapeError(f"matrix has {A.shape[1]} columns, block_dims sum to {sum(block_dims)}")
        cuts = np.cumsum(block_dims)[:-1]
        return cls([blk.copy() for blk in np.split(A, cuts, axis=1)])

    def _apply_block(self, i, x_i):
        return self.mats[i] @ x_i

    def _adjoint_block(self, i, r):
        return self.mats[i].T @ r

    def to_dense(self):
        return np.hstack(self.mats)

    def block_to_dense(self, i):
        return self.mats[i].copy()


class SparseBlockOperator(BlockOperator):
    """Column-partitioned sparse matrix; each block kept in CSR form.

    The transpose of every block is stored as its own CSR matrix so that the
    adjoint is a row-major product as well.
    """

    kind = "sparse"

    def __init__(self, matrix, block_dims: Sequence[int]):
        A = sp.csc_matrix(matrix, dtype=np.float64)
        if A.shape[1] != sum(block_dims):
            raise ShapeError(f"matrix has {A.shape[1]} columns, block_dims sum to {sum(block_dims)}")
        super().__init__(block_dims, A.shape[0])
        bounds = np.concatenate([[0], np.cumsum(block_dims)])
        self.mats = [sp.csr_matrix(A[:, bounds[i]:bounds[i + 1]]) for i in range(len(block_dims))]
        self.mats_t = [sp.csr_matrix(M.T) for M in self.mats]
        self.matrix = sp.csr_matrix(A)

    def _apply_block(self, i, x_i):
        return self.mats[i] @ x_i

    def _adjoint_block(self, i, r):
        return self.mats_t[i] @ r

    def to_dense(self):
        return self.matrix.toarray()

    def block_to_dense(self, i):
        return self.mats[i].toarray()


class TensorProductOperator(BlockOperator):
    """``A_i z = (v_{li} K z)_{l=1..d}`` for a ``d x b`` matrix V and matrix K.

    Data vectors are the ``d`` components of length ``p`` concatenated.
    """

    kind = "tensor"

    def __init__(self, V: np.ndarray, K: np.ndarray):
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        K = np.atleast_2d(np.asarray(K, dtype=np.float64))
        if V.size == 0 or K.size == 0:
            raise ShapeError("V and K must be nonempty")
        d, b = V.shape
        p, q = K.shape
        super().__init__([q] * b, d * p)
        self.V, self.K = V, K
        self.d, self.p = d, p
        self.v_star = float(np.max(np.sum(V * V, axis=0)))
        vnorm = np.linalg.norm(V, 2)
        self.full_column_rank = bool(np.linalg.matrix_rank(V, tol=1e-10 * vnorm) == b) if vnorm > 0 else False

    def _apply_block(self, i, x_i):
        return np.outer(self.V[:, i], self.K @ x_i).ravel()

    def _adjoint_block(self, i, r):
        R = r.reshape(self.d, self.p)
        return self.K.T @ (self.V[:, i] @ R)

    def _exact_norm(self):
        # A = V kron K (up to the block ordering), so ||A|| = ||V|| ||K||.
        return float(np.linalg.norm(self.V, 2) * np.linalg.norm(self.K, 2))


class MaskOperator(BlockOperator):
    """Diagonal mask actions ``A_i x_i = m_i * x_i`` (elementwise).

    Masks are flat vectors; no matrix is ever formed.
    """

    kind = "mask"

    def __init__(self, masks: Sequence[np.ndarray]):
        flats = [np.asarray(m, dtype=np.float64).ravel() for m in masks]
        n = flats[0].size
        if any(f.size != n for f in flats):
            raise ShapeError("all masks must have the same number of pixels")
        super().__init__([n] * len(flats), n)
        self.masks = flats

    def _apply_block(self, i, x_i):
        return self.masks[i] * x_i

    def _adjoint_block(self, i, r):
        return self.masks[i] * r

    def coverage(self) -> np.ndarray:
        """Per-pixel sum of squared mask values (the diagonal of ``A A^*``)."""
        out = np.zeros(self.data_dim)
        for m in self.masks:
            out += m * m
        return out

    def _exact_norm(self):
        return float(np.sqrt(self.coverage().max()))


def apply(op: BlockOperator, x: BlockVector) -> np.ndarray:
    """``sum_i A_i x_i``, summed in ascending block order."""
    return op.apply(x)


def apply_block(op: BlockOperator, i: int, x_i: np.ndarray) -> np.ndarray:
    return op.apply_block(i, x_i)


def adjoint_block(op: BlockOperator, i: int, r: np.ndarray) -> np.ndarray:
    return op.adjoint_block(i, r)


def _power_iteration(matvec, rmatvec, dim, tol, max_iter, seed) -> NormEstimate:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for it in range(1, max_iter + 1):
        w = rmatvec(matvec(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return NormEstimate(0.0, True, it)
        # Rayleigh quotient of A^*A at the unit vector v
        new = float(np.sqrt(max(np.dot(v, w), 0.0)))
        v = w / nw
        if it > 1 and abs(new - est) <= tol * new:
            return NormEstimate(new, True, it)
        est = new
    logger.warning("power iteration did not converge in %d iterations (estimate %.6g)", max_iter, est)
    return NormEstimate(est, False, max_iter)


def operator_norm(
    op: BlockOperator,
    tol: float = 1e-6,
    max_iter: int = 1000,
    seed: int = 0,
    *,
    use_cache: bool = True,
    exact: bool = True,
) -> NormEstimate:
    """Estimate ``||A||`` by power iteration on ``A^* A``.

    The result is cached on the operator.  Structured kinds with a closed form
    (masks, tensor products) return it directly unless ``exact=False``.
    The estimate approaches ``||A||`` from below; callers that need an upper
    bound should inflate it by ``1 + tol``.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    if use_cache and op._norm_cache is not None:
        return op._norm_cache
    closed = op._exact_norm() if exact else None
    if closed is not None:
        est = NormEstimate(closed, True, 0, method="closed-form")
    else:
        dims = op.block_dims

        def matvec(v):
            return op.apply(BlockVector.from_flat(v, dims))

        def rmatvec(r):
            return op.adjoint(r).flat()

        est = _power_iteration(matvec, rmatvec, op.domain_dim, tol, max_iter, seed)
    if use_cache:
        op._norm_cache = est
    return est


def block_norm(op: BlockOperator, i: int, tol: float = 1e-6, max_iter: int = 1000, seed: int = 0) -> float:
    """Power-iteration estimate of ``||A_i||`` (cached per block)."""
    op._check_index(i)
    if i not in op._block_norm_cache:
        est = _power_iteration(
            lambda v: op.apply_block(i, v),
            lambda r: op.adjoint_block(i, r),
            op.block_dims[i], tol, max_iter, seed,
        )
        op._block_norm_cache[i] = est.value
    return op._block_norm_cache[i]


def _read_matrix(path: str):
    return scipy.io.mmread(path)


def load_operator(descriptor_path: str) -> BlockOperator:
    """Build an operator from a JSON descriptor.

    Recognized kinds::

        {"kind": "dense",  "block_dims": [...], "payload": "A.mtx"}
        {"kind": "sparse", "block_dims": [...], "payload": "A.mtx"}
        {"kind": "tensor", "payload": {"V": "V.mtx", "K": "K.mtx"}}
        {"kind": "mask",   "payload": "masks.mtx"}   # one mask per column

    Payload paths are resolved relative to the descriptor.  Matrices are in
    Matrix Market format (array or coordinate).
    """
    with open(descriptor_path) as fh:
        desc = json.load(fh)
    base = os.path.dirname(os.path.abspath(descriptor_path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    kind = desc.get("kind")
    payload = desc.get("payload")
    if kind in ("dense", "sparse"):
        M = _read_matrix(resolve(payload))
        block_dims = desc["block_dims"]
        if "data_dim" in desc and M.shape[0] != desc["data_dim"]:
            raise ShapeError(f"payload has {M.shape[0]} rows, descriptor says {desc['data_dim']}")
        if kind == "dense":
            M = M.toarray() if sp.issparse(M) else np.asarray(M)
            return DenseBlockOperator.from_matrix(M, block_dims)
        return SparseBlockOperator(sp.csr_matrix(M), block_dims)
    if kind == "tensor":
        V = _read_matrix(resolve(payload["V"]))
        K = _read_matrix(resolve(payload["K"]))
        V = V.toarray() if sp.issparse(V) else V
        K = K.toarray() if sp.issparse(K) else K
        return TensorProductOperator(V, K)
    if kind == "mask":
        M = _read_matrix(resolve(payload))
        M = M.toarray() if sp.issparse(M) else np.asarray(M)
        return MaskOperator([M[:, j] for j in range(M.shape[1])])
    raise ValueError(f"unknown operator kind {kind!r}")
