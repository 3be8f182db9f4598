"""Compiled point kernels: bicubic Hermite evaluation and per-node map inversion.

The Hermite table has shape ``(B*n*n, 4, C)`` holding, per node, the value
and the h-scaled derivatives f_x, f_y, f_xy of each channel.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _basis(t):
    t2 = t * t
    t3 = t2 * t
    return (2 * t3 - 3 * t2 + 1, -2 * t3 + 3 * t2, t3 - 2 * t2 + t, t3 - t2)


@njit(cache=True, inline="always")
def _dbasis(t):
    t2 = t * t
    return (6 * t2 - 6 * t, -6 * t2 + 6 * t, 3 * t2 - 4 * t + 1, 3 * t2 - 2 * t)


@njit(cache=True, inline="always")
def _locate(p, n, h):
    s = p / h
    f = math.floor(s)
    i = int(f) % n
    if i < 0:
        i += n
    return i, (i + 1) % n, s - f


@njit(cache=True)
def hermite_eval(table, n, h, pts, batch, nc, grad):
    q = pts.shape[0]
    out = np.zeros((q, nc))
    gout = np.zeros((q, nc, 2)) if grad else np.zeros((0, nc, 2))
    nn = n * n
    for k in range(q):
        i0, i1, tx = _locate(pts[k, 0], n, h)
        j0, j1, ty = _locate(pts[k, 1], n, h)
        bx = _basis(tx)
        by = _basis(ty)
        dbx = _dbasis(tx)
        dby = _dbasis(ty)
        off = batch[k] * nn
        for a in range(2):
            ii = i0 if a == 0 else i1
            wx0 = bx[a]
            wx1 = bx[2 + a]
            ex0 = dbx[a]
            ex1 = dbx[2 + a]
            for b in range(2):
                jj = j0 if b == 0 else j1
                wy0 = by[b]
                wy1 = by[2 + b]
                row = off + ii * n + jj
                for c in range(nc):
                    f = table[row, 0, c]
                    fx = table[row, 1, c]
                    fy = table[row, 2, c]
                    fxy = table[row, 3, c]
                    out[k, c] += wx0 * wy0 * f + wx1 * wy0 * fx + wx0 * wy1 * fy + wx1 * wy1 * fxy
                    if grad:
                        ey0 = dby[b]
                        ey1 = dby[2 + b]
                        gout[k, c, 0] += (ex0 * wy0 * f + ex1 * wy0 * fx + ex0 * wy1 * fy + ex1 * wy1 * fxy) / h
                        gout[k, c, 1] += (wx0 * ey0 * f + wx1 * ey0 * fx + wx0 * ey1 * fy + wx1 * ey1 * fxy) / h
    return out, gout


@njit(cache=True, inline="always")
def _eval_disp(table, off, n, h, px, py):
    """Displacement value and gradient at one point (two channels)."""
    i0, i1, tx = _locate(px, n, h)
    j0, j1, ty = _locate(py, n, h)
    bx = _basis(tx)
    by = _basis(ty)
    dbx = _dbasis(tx)
    dby = _dbasis(ty)
    v0 = v1 = 0.0
    g00 = g01 = g10 = g11 = 0.0
    for a in range(2):
        ii = i0 if a == 0 else i1
        for b in range(2):
            jj = j0 if b == 0 else j1
            row = off + ii * n + jj
            w = (bx[a] * by[b], bx[2 + a] * by[b], bx[a] * by[2 + b], bx[2 + a] * by[2 + b])
            ex = (dbx[a] * by[b], dbx[2 + a] * by[b], dbx[a] * by[2 + b], dbx[2 + a] * by[2 + b])
            ey = (bx[a] * dby[b], bx[2 + a] * dby[b], bx[a] * dby[2 + b], bx[2 + a] * dby[2 + b])
            for m in range(4):
                t0 = table[row, m, 0]
                t1 = table[row, m, 1]
                v0 += w[m] * t0
                v1 += w[m] * t1
                g00 += ex[m] * t0
                g01 += ey[m] * t0
                g10 += ex[m] * t1
                g11 += ey[m] * t1
    return v0, v1, g00 / h, g01 / h, g10 / h, g11 / h


@njit(cache=True)
def newton_invert(table, guess, nb, n, h, tol, max_iter, max_halvings):
    """Per-node solve of ``y + lam(y) = x`` from initial points ``guess`` (nb*n*n, 2).

    Returns (y, residual, iterations).
    """
    nn = n * n
    ys = np.empty((nb * nn, 2))
    res = np.empty(nb * nn)
    iters = np.zeros(nb * nn, dtype=np.int64)
    for b in range(nb):
        off = b * nn
        for i in range(n):
            for j in range(n):
                k = off + i * n + j
                x0 = i * h
                x1 = j * h
                y0 = guess[k, 0]
                y1 = guess[k, 1]
                v0, v1, a, bb, c, d = _eval_disp(table, off, n, h, y0, y1)
                r0 = y0 + v0 - x0
                r1 = y1 + v1 - x1
                err = max(abs(r0), abs(r1))
                it = 0
                while err > tol and it < max_iter:
                    it += 1
                    j11 = 1.0 + a
                    j22 = 1.0 + d
                    det = j11 * j22 - bb * c
                    s0 = (j22 * r0 - bb * r1) / det
                    s1 = (-c * r0 + j11 * r1) / det
                    scale = 1.0
                    for _ in range(max_halvings + 1):
                        c0 = y0 - scale * s0
                        c1 = y1 - scale * s1
                        w0, w1, na, nb_, nc_, nd = _eval_disp(table, off, n, h, c0, c1)
                        q0 = c0 + w0 - x0
                        q1 = c1 + w1 - x1
                        e = max(abs(q0), abs(q1))
                        if e < err or e <= tol or not math.isfinite(err):
                            break
                        scale *= 0.5
                    y0, y1, r0, r1, err = c0, c1, q0, q1, e
                    a, bb, c, d = na, nb_, nc_, nd
                ys[k, 0] = y0
                ys[k, 1] = y1
                res[k] = err
                iters[k] = it
    return ys, res, iters
