"""Periodic fields on the torus [0, 2pi)^2 and their spectral calculus.

Fields are plain numpy arrays whose last two axes are the (x, y) node
indices, ``f[..., i, j] = f(i*h, j*h)``.  Leading axes carry components and
batches:

* scalar field  ``(..., n, n)``
* vector field  ``(..., 2, n, n)``          component 0 is x, 1 is y
* tensor field  ``(..., 2, 2, n, n)``       ``T[a, b]`` row a, column b

All derivatives use the same (Nyquist-zeroed) wavenumbers so that the
discrete divergence, curl, Leray projection and Biot-Savart inversion are
mutually exact.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._kernels import hermite_eval

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TorusGrid:
    """Uniform n x n grid on [0, 2pi)^2."""

    n: int

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or n < 8 or n & (n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {n!r}")

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node positions as a vector field, shape (2, n, n)."""
        s = np.arange(self.n) * self.h
        return np.stack(np.meshgrid(s, s, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Derivative wavenumbers in rfft2 layout; Nyquist entries are zero."""
        n = self.n
        kx = np.fft.fftfreq(n, 1.0 / n)
        kx[n // 2] = 0.0
        ky = np.fft.rfftfreq(n, 1.0 / n)
        ky[n // 2] = 0.0
        return kx[:, None], ky[None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky = self.wavenumbers
        return kx**2 + ky**2

    @cached_property
    def kmag2(self) -> np.ndarray:
        """True squared wavenumber magnitude (Nyquist kept), for filters and viscous decay."""
        n = self.n
        kx = np.fft.fftfreq(n, 1.0 / n)[:, None]
        ky = np.fft.rfftfreq(n, 1.0 / n)[None, :]
        return kx**2 + ky**2

    @cached_property
    def inv_k2(self) -> np.ndarray:
        k2 = self.k2
        out = np.zeros_like(k2)
        np.divide(1.0, k2, out=out, where=k2 > 0)
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask in rfft2 layout."""
        n = self.n
        kx = np.abs(np.fft.fftfreq(n, 1.0 / n))[:, None]
        ky = np.fft.rfftfreq(n, 1.0 / n)[None, :]
        cut = n / 3.0
        return (kx < cut) & (ky < cut)

    def fft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfft2(f, axes=(-2, -1))

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(fh, s=self.shape, axes=(-2, -1))


def check_finite(f: np.ndarray, what: str = "field") -> np.ndarray:
    if not np.all(np.isfinite(f)):
        raise ValueError(f"{what} contains non-finite values")
    return f


def gradient(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """Spectral gradient of a scalar field; returns (..., 2, n, n)."""
    check_finite(f)
    kx, ky = grid.wavenumbers
    fh = grid.fft(f)
    return grid.ifft(np.stack([1j * kx * fh, 1j * ky * fh], axis=-3))


def jacobian(grid: TorusGrid, v: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Spectral Jacobian ``J[a, b] = d_b v_a``; ``transpose`` gives ``d_a v_b``."""
    g = gradient(grid, v)  # (..., 2[a], 2[b], n, n) with g[a, b] = d_b v_a
    if transpose:
        g = np.swapaxes(g, -4, -3)
    return g


def divergence(grid: TorusGrid, v: np.ndarray) -> np.ndarray:
    kx, ky = grid.wavenumbers
    vh = grid.fft(v)
    return grid.ifft(1j * kx * vh[..., 0, :, :] + 1j * ky * vh[..., 1, :, :])


def curl2d(grid: TorusGrid, v: np.ndarray) -> np.ndarray:
    """Scalar vorticity ``d_x v_y - d_y v_x``."""
    kx, ky = grid.wavenumbers
    vh = grid.fft(v)
    return grid.ifft(1j * kx * vh[..., 1, :, :] - 1j * ky * vh[..., 0, :, :])


def _project_hat(grid: TorusGrid, vh: np.ndarray) -> np.ndarray:
    kx, ky = grid.wavenumbers
    kdotv = (kx * vh[..., 0, :, :] + ky * vh[..., 1, :, :]) * grid.inv_k2
    out = np.stack([vh[..., 0, :, :] - kx * kdotv, vh[..., 1, :, :] - ky * kdotv], axis=-3)
    out[..., 0, 0] = 0.0
    return out


def leray_project(grid: TorusGrid, v: np.ndarray, dealias: bool = False) -> np.ndarray:
    """Project onto mean-zero divergence-free fields.

    With ``dealias`` the 2/3-rule filter is applied in the same transform.
    """
    check_finite(v)
    ph = _project_hat(grid, grid.fft(v))
    if dealias:
        ph = ph * grid.dealias_mask
    return grid.ifft(ph)


def biot_savart(grid: TorusGrid, omega: np.ndarray) -> np.ndarray:
    """Velocity ``(-d_y psi, d_x psi)`` with ``lap psi = omega``."""
    wh = grid.fft(omega)
    mean = float(np.max(np.abs(wh[..., 0, 0]))) / grid.n**2
    if mean > 1e-12 * max(1.0, float(np.abs(omega).max())):
        log.warning("biot_savart: discarding non-zero vorticity mean %.3e", mean)
    kx, ky = grid.wavenumbers
    psih = -wh * grid.inv_k2
    return grid.ifft(np.stack([-1j * ky * psih, 1j * kx * psih], axis=-3))


def dealias(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    return grid.ifft(grid.fft(f) * grid.dealias_mask)


def inner_product(grid: TorusGrid, a: np.ndarray, b: np.ndarray, ndim: int = 2) -> np.ndarray | float:
    """L2 inner product by the trapezoid rule, summed over component axes.

    ``ndim`` is the number of trailing axes that make up one field
    (2 for scalars, 3 for vectors, 4 for tensors).
    """
    axes = tuple(range(-ndim, 0))
    out = grid.h**2 * np.sum(a * b, axis=axes)
    return float(out) if np.ndim(out) == 0 else out


def norm2(grid: TorusGrid, a: np.ndarray, ndim: int = 2):
    """Squared L2 norm."""
    return inner_product(grid, a, a, ndim)


# --- periodic bicubic Hermite interpolation -------------------------------

class Interpolant:
    """Periodic bicubic Hermite interpolant of a batch of fields.

    Node derivatives (f_x, f_y, f_xy) are taken spectrally, so the
    interpolant is exact at nodes, exact for constants and O(h^4) accurate
    in between.

    ``f`` has shape ``(B, C, n, n)``; it is evaluated at points ``(Q, 2)``
    where each point belongs to batch member ``batch[q]``.
    """

    def __init__(self, grid: TorusGrid, f: np.ndarray):
        check_finite(f)
        if f.ndim != 4:
            raise ValueError("Interpolant expects fields shaped (B, C, n, n)")
        self.grid = grid
        self.nb, self.nc = f.shape[:2]
        kx, ky = grid.wavenumbers
        fh = grid.fft(f)
        h = grid.h
        # h-scaled derivatives so the basis works in cell-local coordinates
        tab = np.stack([
            f,
            h * grid.ifft(1j * kx * fh),
            h * grid.ifft(1j * ky * fh),
            h * h * grid.ifft(-(kx * ky) * fh),
        ])  # (4, B, C, n, n)
        n = grid.n
        self._table = np.ascontiguousarray(tab.transpose(1, 3, 4, 0, 2)).reshape(self.nb * n * n, 4, self.nc)

    def __call__(self, points: np.ndarray, batch: np.ndarray | None = None, grad: bool = False):
        """Values ``(Q, C)``; with ``grad`` also gradients ``(Q, C, 2)``."""
        pts = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
        if batch is None:
            batch = np.zeros(pts.shape[0], dtype=np.int64)
        else:
            batch = np.ascontiguousarray(batch, dtype=np.int64)
        val, g = hermite_eval(self._table, self.grid.n, self.grid.h, pts, batch, self.nc, grad)
        return (val, g) if grad else val

    @property
    def table(self) -> np.ndarray:
        return self._table


def interpolate(grid: TorusGrid, f: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate a scalar or vector field at arbitrary points (wrapped periodically).

    ``points`` has shape ``(..., 2)``.  Returns ``(..., )`` for a scalar
    field ``(n, n)`` and ``(..., 2)`` for a vector field ``(2, n, n)``.
    """
    f = np.asarray(f, dtype=float)
    scalar = f.ndim == 2
    fb = f.reshape(1, -1, grid.n, grid.n)
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    out = Interpolant(grid, fb)(flat)
    lead = pts.shape[:-1]
    return out[:, 0].reshape(lead) if scalar else out.reshape(*lead, fb.shape[1])


def compose(grid: TorusGrid, f: np.ndarray, disp: np.ndarray, channel_ndim: int = 1) -> np.ndarray:
    """Evaluate ``f(x + disp(x))`` at every node x, for batches of maps.

    ``f``    has shape ``(*fb, *ch, n, n)`` with ``channel_ndim`` channel axes.
    ``disp`` has shape ``(*fb, *rest, 2, n, n)``: each field in the batch
    ``fb`` is composed with every displacement sharing its batch prefix.
    Returns ``(*fb, *rest, *ch, n, n)``.
    """
    n = grid.n
    ch = f.shape[f.ndim - 2 - channel_ndim:-2]
    fb = f.shape[:f.ndim - 2 - channel_ndim]
    rest = disp.shape[len(fb):-3]
    if disp.shape[:len(fb)] != fb:
        raise ValueError(f"batch mismatch: field {fb} vs displacement {disp.shape}")
    nb = int(np.prod(fb, dtype=np.int64))
    nr = int(np.prod(rest, dtype=np.int64))
    nc = int(np.prod(ch, dtype=np.int64))
    interp = Interpolant(grid, f.reshape(nb, nc, n, n))
    pts = (grid.coords + disp).reshape(nb, nr, 2, n * n)
    pts = np.moveaxis(pts, 2, -1).reshape(-1, 2)
    batch = np.repeat(np.arange(nb), nr * n * n)
    vals = interp(pts, batch)  # (nb*nr*n*n, nc)
    vals = vals.reshape(nb, nr, n, n, nc)
    vals = np.moveaxis(vals, -1, 2)
    return vals.reshape(*fb, *rest, *ch, n, n)
