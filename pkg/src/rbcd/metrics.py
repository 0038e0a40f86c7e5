"""Image-quality metrics."""
from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .operators import BlockVector

__all__ = ["psnr", "ssim", "relative_error", "gaussian_window", "video_metrics"]


def psnr(reference, test, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; ``math.inf`` when the images coincide."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {test.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(reference, test, peak: float = 1.0, *, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity over all fully contained 11x11 Gaussian windows."""
    x = np.asarray(reference, dtype=np.float64)
    y = np.asarray(test, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    win = gaussian_window()
    if x.ndim != 2 or min(x.shape) < win.shape[0]:
        raise ValueError("SSIM needs 2-D images of at least 11x11 pixels")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def filt(a):
        return convolve2d(a, win, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(smap.mean())


def relative_error(reference: BlockVector, x: BlockVector, squared: bool = False) -> float:
    """``||x - ref|| / ||ref||``, squared on request."""
    ref_sq = reference.sq_norm()
    if ref_sq == 0:
        raise ValueError("reference has zero norm")
    val = (x - reference).sq_norm() / ref_sq
    return val if squared else math.sqrt(val)


def video_metrics(reference_frames, test_frames, peak: float = 1.0) -> dict:
    """Mean PSNR and SSIM over frames."""
    ps = [psnr(a, b, peak) for a, b in zip(reference_frames, test_frames)]
    ss = [ssim(a, b, peak) for a, b in zip(reference_frames, test_frames)]
    return {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss)), "psnr_frames": ps, "ssim_frames": ss}
