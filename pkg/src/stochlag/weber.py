"""Per-copy velocities from back-to-labels maps."""
from __future__ import annotations

import numpy as np

from .flow import InverseMap, jacobian_transpose
from .torus import biot_savart, compose, dealias as dealias_filter, leray_project


def weber_velocity(inv: InverseMap, u0: np.ndarray, dealias: bool = False) -> np.ndarray:
    """Weber formula ``P[(grad^T Y)(u0 o Y)]``.

    ``u0`` is shaped ``(*ub, 2, n, n)`` with ``ub`` a prefix of the map
    batch, so each initial field can be shared by several copies.
    """
    grid = inv.grid
    pulled = compose(grid, u0, inv.displacement)
    jt = jacobian_transpose(inv)
    w = np.einsum("...abij,...bij->...aij", jt, pulled)
    return leray_project(grid, w, dealias=dealias)


def vorticity_velocity(inv: InverseMap, omega0: np.ndarray, dealias: bool = False) -> np.ndarray:
    """Biot-Savart velocity of the transported vorticity ``omega0 o Y``."""
    grid = inv.grid
    omega = compose(grid, omega0, inv.displacement, channel_ndim=0)
    omega = omega - omega.mean(axis=(-2, -1), keepdims=True)
    if dealias:
        omega = dealias_filter(grid, omega)
    return biot_savart(grid, omega)


def ensemble_mean(us, axis: int = 0) -> np.ndarray:
    """Pointwise mean over copies, summed in index order."""
    us = np.asarray(us)
    return np.mean(us, axis=axis)
