"""Compiled inner loop of the dual TV denoiser.

Same discretization as :func:`rbcd.penalties.grad` / :func:`rbcd.penalties.div`
(forward differences, zero difference at the last row/column); the numpy
versions there serve as the reference in the tests.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _div(px, py, out):
    rows, cols = px.shape
    for r in range(rows):
        for c in range(cols):
            d = 0.0
            if c < cols - 1:
                d += px[r, c]
            if c > 0:
                d -= px[r, c - 1]
            if r < rows - 1:
                d += py[r, c]
            if r > 0:
                d -= py[r - 1, c]
            out[r, c] = d


@njit(cache=True)
def _gap(v, lam, px, py, z):
    """Fill ``z = v + lam div p`` and return ``(gap, primal)``."""
    rows, cols = v.shape
    _div(px, py, z)
    fit = 0.0
    zz = 0.0
    vv = 0.0
    for r in range(rows):
        for c in range(cols):
            z[r, c] = v[r, c] + lam * z[r, c]
            e = z[r, c] - v[r, c]
            fit += e * e
            zz += z[r, c] * z[r, c]
            vv += v[r, c] * v[r, c]
    tv = 0.0
    for r in range(rows):
        for c in range(cols):
            gx = z[r, c + 1] - z[r, c] if c < cols - 1 else 0.0
            gy = z[r + 1, c] - z[r, c] if r < rows - 1 else 0.0
            tv += np.sqrt(gx * gx + gy * gy)
    primal = 0.5 * fit + lam * tv
    dual = 0.5 * vv - 0.5 * zz
    return primal - dual, primal


@njit(cache=True)
def fgp(v, lam, px, py, tol, max_iter, gap_every):
    """Accelerated projected gradient on the dual, with adaptive restart.

    ``px, py`` hold a feasible starting field and are overwritten with the
    final one.  Returns ``(z, gap, primal, iterations, converged)``.
    """
    rows, cols = v.shape
    z = np.empty((rows, cols))
    gap, primal = _gap(v, lam, px, py, z)
    if gap <= tol * (1.0 + abs(primal)):
        return z, gap, primal, 0, True
    qx = px.copy()
    qy = py.copy()
    nx = np.empty((rows, cols))
    ny = np.empty((rows, cols))
    w = np.empty((rows, cols))
    step = 1.0 / (8.0 * lam)
    t = 1.0
    for it in range(1, max_iter + 1):
        _div(qx, qy, w)
        for r in range(rows):
            for c in range(cols):
                w[r, c] = v[r, c] + lam * w[r, c]
        restart = 0.0
        for r in range(rows):
            for c in range(cols):
                gx = w[r, c + 1] - w[r, c] if c < cols - 1 else 0.0
                gy = w[r + 1, c] - w[r, c] if r < rows - 1 else 0.0
                ax = qx[r, c] + step * gx
                ay = qy[r, c] + step * gy
                m = np.sqrt(ax * ax + ay * ay)
                if m > 1.0:
                    ax /= m
                    ay /= m
                nx[r, c] = ax
                ny[r, c] = ay
                restart += (qx[r, c] - ax) * (ax - px[r, c]) + (qy[r, c] - ay) * (ay - py[r, c])
        if restart > 0.0:
            t = 1.0
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        for r in range(rows):
            for c in range(cols):
                qx[r, c] = nx[r, c] + beta * (nx[r, c] - px[r, c])
                qy[r, c] = ny[r, c] + beta * (ny[r, c] - py[r, c])
                px[r, c] = nx[r, c]
                py[r, c] = ny[r, c]
        t = t_new
        if it % gap_every == 0 or it == max_iter:
            gap, primal = _gap(v, lam, px, py, z)
            if gap <= tol * (1.0 + abs(primal)):
                return z, gap, primal, it, True
    return z, gap, primal, max_iter, False
