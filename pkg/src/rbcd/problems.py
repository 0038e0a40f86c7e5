"""Test-problem constructors: tensor-product systems, parallel-beam CT,
coded-aperture video masks, phantoms and the relative noise model.

Images are ``(rows, cols)`` arrays.  Whenever an image becomes a vector it is
stacked column by column (Fortran order), so pixel ``(r, c)`` of an ``n x n``
image is entry ``c * n + r``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .operators import BlockVector, MaskOperator, SparseBlockOperator, TensorProductOperator

__all__ = [
    "ConfigurationError",
    "RadonGeometry",
    "MaskStack",
    "NoisyData",
    "make_tensor_product",
    "radon_matrix",
    "make_parallel_radon",
    "shepp_logan",
    "SHEPP_LOGAN_MODIFIED",
    "make_cacti",
    "add_noise",
    "synthetic_video",
    "image_to_vector",
    "vector_to_image",
    "even_angles",
]


class ConfigurationError(ValueError):
    """Raised for inconsistent problem parameters."""


def image_to_vector(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64).ravel(order="F")


def vector_to_image(vec: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(vec, dtype=np.float64).reshape(rows, cols, order="F")


def make_tensor_product(V: np.ndarray, K: np.ndarray) -> TensorProductOperator:
    """Operator of the system ``sum_i v_{li} K x_i = y_l`` for ``l = 1..d``."""
    return TensorProductOperator(V, K)


# ---------------------------------------------------------------------------
# parallel-beam CT


def even_angles(count: int, start: float = 1.0, stop: float = 180.0) -> np.ndarray:
    """``count`` angles (degrees) evenly spaced over ``[start, stop]``."""
    if count < 1:
        raise ConfigurationError("need at least one projection angle")
    if count == 1:
        return np.array([float(start)])
    return np.linspace(start, stop, count)


@dataclass(frozen=True)
class RadonGeometry:
    """Parallel-beam geometry on an ``n x n`` grid of unit pixels.

    The grid covers ``[-n/2, n/2]^2``.  For projection angle ``theta`` the rays
    run along ``(-sin theta, cos theta)`` and sit at signed detector offsets
    ``s_j = (j - (p - 1)/2) * spacing`` measured along ``(cos theta, sin theta)``.
    """

    n: int
    angles: tuple[float, ...]
    rays_per_angle: int | None = None
    spacing: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.n < 1:
            raise ConfigurationError("grid side must be positive")
        if not self.angles:
            raise ConfigurationError("need at least one projection angle")
        if self.rays_per_angle is not None and self.rays_per_angle < 1:
            raise ConfigurationError("rays_per_angle must be positive")

    @property
    def rays(self) -> int:
        if self.rays_per_angle is None:
            return max(1, int(round(math.sqrt(2.0) * self.n)))
        return int(self.rays_per_angle)

    @property
    def offsets(self) -> np.ndarray:
        p = self.rays
        return (np.arange(p) - (p - 1) / 2.0) * self.spacing

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.angles) * self.rays, self.n * self.n)


def _trace_ray(n: int, p0: np.ndarray, d: np.ndarray):
    """Pixel indices and intersection lengths of the line ``p0 + t d``.

    Pixels are half-open squares ``[x_k, x_{k+1}) x (y_{k+1}, y_k]`` in image
    orientation, which only matters for rays lying exactly on a grid line.
    """
    half = n / 2.0
    lo, hi = -np.inf, np.inf
    crossings = []
    for axis in range(2):
        if d[axis] != 0.0:
            t1 = (-half - p0[axis]) / d[axis]
            t2 = (half - p0[axis]) / d[axis]
            lo = max(lo, min(t1, t2))
            hi = min(hi, max(t1, t2))
            crossings.append((np.arange(n + 1) - half - p0[axis]) / d[axis])
    if not hi > lo:
        return np.empty(0, dtype=np.int64), np.empty(0)
    t = np.concatenate(crossings + [np.array([lo, hi])])
    t = np.unique(t[(t >= lo) & (t <= hi)])
    seg = np.diff(t)
    keep = seg > 1e-12 * max(1.0, n)
    if not np.any(keep):
        return np.empty(0, dtype=np.int64), np.empty(0)
    mid = 0.5 * (t[:-1] + t[1:])[keep]
    seg = seg[keep]
    x = p0[0] + mid * d[0]
    y = p0[1] + mid * d[1]
    col = np.floor(x + half).astype(np.int64)
    row = np.floor(half - y).astype(np.int64)
    # a ray on the outer boundary line y = n/2 lands on row -1 in image orientation
    ok = (col >= 0) & (col < n) & (row >= 0) & (row < n)
    return (col * n + row)[ok], seg[ok]


def radon_matrix(geometry: RadonGeometry) -> sp.csr_matrix:
    """System matrix with exact ray/pixel intersection lengths.

    Rows are ordered angle-major (all rays of the first angle, then the next);
    columns follow column-major pixel stacking.
    """
    n = geometry.n
    rows, cols, vals = [], [], []
    offsets = geometry.offsets
    p = len(offsets)
    for a, theta in enumerate(geometry.angles):
        th = math.radians(theta)
        normal = np.array([math.cos(th), math.sin(th)])
        d = np.array([-math.sin(th), math.cos(th)])
        # snap tiny components so axis-aligned rays are traced as such
        normal[np.abs(normal) < 1e-15] = 0.0
        d[np.abs(d) < 1e-15] = 0.0
        for j, s in enumerate(offsets):
            idx, length = _trace_ray(n, s * normal, d)
            if idx.size:
                rows.append(np.full(idx.size, a * p + j))
                cols.append(idx)
                vals.append(length)
    shape = geometry.shape
    if not rows:
        return sp.csr_matrix(shape)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    ).tocsr()
    A.sum_duplicates()
    return A


def make_parallel_radon(geometry: RadonGeometry, b: int = 1) -> SparseBlockOperator:
    """CT operator whose columns are split into ``b`` equal contiguous blocks."""
    npix = geometry.n * geometry.n
    if b < 1 or npix % b:
        raise ConfigurationError(f"block count {b} must divide the pixel count {npix}")
    A = radon_matrix(geometry)
    op = SparseBlockOperator(A, [npix // b] * b)
    op.geometry = geometry
    return op


# ---------------------------------------------------------------------------
# phantoms

# intensity, semi-axis a, semi-axis b, centre x, centre y, rotation (degrees)
SHEPP_LOGAN_MODIFIED = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def ellipse_sum(x, y, table=SHEPP_LOGAN_MODIFIED):
    """Sum of the intensities of all ellipses containing the points ``(x, y)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros(np.broadcast(x, y).shape)
    for val, a, b, x0, y0, phi in table:
        c, s = math.cos(math.radians(phi)), math.sin(math.radians(phi))
        u = (x - x0) * c + (y - y0) * s
        v = -(x - x0) * s + (y - y0) * c
        out += np.where((u / a) ** 2 + (v / b) ** 2 <= 1.0, val, 0.0)
    return out


def pixel_centres(n: int):
    """Phantom-frame coordinates of pixel centres; row 0 is the top."""
    centres = (np.arange(n) + 0.5) * (2.0 / n) - 1.0
    x = np.broadcast_to(centres[None, :], (n, n))
    y = np.broadcast_to(-centres[:, None], (n, n))
    return x, y


def shepp_logan(n: int) -> np.ndarray:
    """Modified (high contrast) Shepp-Logan phantom sampled at pixel centres.

    No clipping is applied, so overlapping ellipses may sum to tiny negative
    round-off values.
    """
    if n < 1:
        raise ConfigurationError("grid side must be positive")
    x, y = pixel_centres(n)
    return ellipse_sum(x, y)


# ---------------------------------------------------------------------------
# coded-aperture compressive temporal imaging


@dataclass
class MaskStack:
    masks: np.ndarray  # (b, rows, cols) of 0/1 values
    shift: str = "circular"

    @property
    def b(self) -> int:
        return self.masks.shape[0]

    @property
    def rows(self) -> int:
        return self.masks.shape[1]

    @property
    def cols(self) -> int:
        return self.masks.shape[2]


def make_cacti(b: int, rows: int, cols: int, seed: int = 0, first_mask: np.ndarray | None = None):
    """Shifted random binary masks and their block operator.

    The first mask is i.i.d. Bernoulli(1/2); mask ``i+1`` is mask ``i`` rolled
    one pixel to the right with wrap-around.  ``first_mask`` overrides the
    random draw.
    """
    if b < 1 or rows < 1 or cols < 1:
        raise ConfigurationError("frame count and frame dims must be positive")
    if first_mask is None:
        rng = np.random.default_rng(seed)
        first = (rng.random((rows, cols)) < 0.5).astype(np.float64)
    else:
        first = np.asarray(first_mask, dtype=np.float64)
        if first.shape != (rows, cols):
            raise ConfigurationError("first_mask has the wrong shape")
    masks = np.empty((b, rows, cols))
    masks[0] = first
    for i in range(1, b):
        masks[i] = np.roll(masks[i - 1], 1, axis=1)
    stack = MaskStack(masks)
    op = MaskOperator([image_to_vector(m) for m in masks])
    op.frame_shape = (rows, cols)
    return op, stack


# ---------------------------------------------------------------------------
# noise


@dataclass
class NoisyData:
    y_delta: np.ndarray
    delta: float
    delta_rel: float
    seed: int | None = None
    direction: np.ndarray | None = field(default=None, repr=False)


def add_noise(y: np.ndarray, delta_rel: float, seed: int | None = 0) -> NoisyData:
    """``y + delta_rel * ||y|| * xi`` with ``xi`` a unit-norm Gaussian direction."""
    y = np.asarray(y, dtype=np.float64)
    if delta_rel < 0:
        raise ValueError("delta_rel must be nonnegative")
    ynorm = float(np.linalg.norm(y))
    if delta_rel == 0:
        return NoisyData(y.copy(), 0.0, 0.0, seed)
    if ynorm == 0.0:
        raise ValueError("noise level is undefined for zero data")
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(y.shape)
    xi /= np.linalg.norm(xi)
    delta = delta_rel * ynorm
    return NoisyData(y + delta * xi, delta, float(delta_rel), seed, xi)


# ---------------------------------------------------------------------------
# synthetic video


@dataclass(frozen=True)
class VideoLayout:
    top: int
    left: int
    height: int
    width: int
    background: float
    foreground: float

    @property
    def contrast(self) -> float:
        return abs(self.foreground - self.background)


def video_layout(b: int, rows: int, cols: int) -> VideoLayout:
    height = max(2, rows // 3)
    width = max(2, cols // 4)
    top = (rows - height) // 2
    left = max(1, (cols - width - (b - 1)) // 2)
    return VideoLayout(top, left, height, width, 0.25, 0.85)


def synthetic_video(b: int, rows: int, cols: int, kind: str = "moving-blocks") -> BlockVector:
    """Frames with one bright rectangle moving one pixel right per frame.

    Each frame takes exactly two values.  Horizontal positions wrap around
    when the rectangle runs past the right edge.
    """
    if kind != "moving-blocks":
        raise ConfigurationError(f"unknown video kind {kind!r}")
    if rows < 8 or cols < 8 or b < 1:
        raise ConfigurationError("video frames must be at least 8x8")
    lay = video_layout(b, rows, cols)
    frames = []
    for i in range(b):
        img = np.full((rows, cols), lay.background)
        c = (np.arange(lay.width) + lay.left + i) % cols
        img[lay.top:lay.top + lay.height, c] = lay.foreground
        frames.append(image_to_vector(img))
    return BlockVector(frames)
