"""Stochastic flow maps X = id + lam, their inverses Y = id + mu, and noise.

Maps are stored by their periodic displacements.  All routines accept a
batch of maps: displacements shaped ``(*batch, 2, n, n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import newton_invert
from .torus import Interpolant, TorusGrid, compose, jacobian


class BijectivityLost(RuntimeError):
    """det(grad X) became non-positive at some node; the step was too large."""

    def __init__(self, min_det: float, index: tuple):
        self.min_det = min_det
        self.index = index
        super().__init__(f"flow map lost bijectivity: det(grad X) = {min_det:.3e} at {index}")


class NoConvergence(RuntimeError):
    """Newton inversion of a flow map did not reach the tolerance."""

    def __init__(self, residual: float, index: tuple):
        self.residual = residual
        self.index = index
        super().__init__(f"map inversion failed: residual {residual:.3e} at node {index}")


@dataclass
class FlowMap:
    grid: TorusGrid
    displacement: np.ndarray  # lam, (*batch, 2, n, n)


@dataclass
class InverseMap:
    grid: TorusGrid
    displacement: np.ndarray  # mu, (*batch, 2, n, n)
    residual: float = 0.0
    iterations: int = 0


def init_flow(grid: TorusGrid, batch: tuple[int, ...] = ()) -> FlowMap:
    return FlowMap(grid, np.zeros((*batch, 2, grid.n, grid.n)))


def det_jacobian(grid: TorusGrid, disp: np.ndarray) -> np.ndarray:
    """Pointwise det(I + grad disp)."""
    j = jacobian(grid, disp)
    return (1.0 + j[..., 0, 0, :, :]) * (1.0 + j[..., 1, 1, :, :]) - j[..., 0, 1, :, :] * j[..., 1, 0, :, :]


# --- Brownian increments -----------------------------------------------------

def _generator(seed: int, replica: int, copy: int, step: int) -> np.random.Generator:
    # Philox is counter based: the key names the stream, the counter the step.
    key = (int(seed) << 64) | (int(replica) << 32) | int(copy)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, int(step), 0, 0]))


def brownian_increment(seed: int, replica: int, copy: int, step: int, dt: float) -> np.ndarray:
    """The increment B(t_{k+1}) - B(t_k) of stream (seed, replica, copy) at step k."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return math.sqrt(dt) * _generator(seed, replica, copy, step).standard_normal(2)


def increments(seed: int, replicas: range | list, copies: int, step: int, dt: float) -> np.ndarray:
    """Increments for a block of replicas, shape (len(replicas), copies, 2)."""
    return np.array([[brownian_increment(seed, r, i, step, dt) for i in range(copies)] for r in replicas])


@dataclass
class BrownianState:
    """One copy's Wiener process: its stream key, position and running value."""

    copy: int
    seed: int = 0
    replica: int = 0
    step: int = 0
    value: np.ndarray = field(default_factory=lambda: np.zeros(2))


def sample_increment(state: BrownianState, dt: float) -> np.ndarray:
    """Draw the next increment and advance the state in place."""
    db = brownian_increment(state.seed, state.replica, state.copy, state.step, dt)
    state.step += 1
    state.value = state.value + db
    return db


# --- time stepping -----------------------------------------------------------

def em_step(flow: FlowMap, u: np.ndarray, dt: float, db: np.ndarray, nu: float,
            check: bool = True) -> FlowMap:
    """One Euler-Maruyama step ``X <- X + u(X) dt + sqrt(2 nu) dB``.

    ``u`` is shaped ``(*ub, 2, n, n)`` where ``ub`` is a prefix of the flow's
    batch shape, so one drift can serve many copies.  ``db`` is shaped
    ``(*batch, 2)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = flow.grid
    lam = flow.displacement
    drift = compose(grid, u, lam)
    noise = math.sqrt(2.0 * nu) * np.asarray(db, dtype=float)
    new = lam + dt * drift + noise[..., :, None, None]
    if check:
        det = det_jacobian(grid, new)
        k = int(np.argmin(det))
        if det.flat[k] <= 0.0:
            raise BijectivityLost(float(det.flat[k]), np.unravel_index(k, det.shape))
    return FlowMap(grid, new)


def invert_map(flow: FlowMap, tol: float = 1e-10, max_iter: int = 50, max_halvings: int = 20,
               guess: np.ndarray | None = None) -> InverseMap:
    """Solve ``y + lam(y) = x`` at every node x by per-node Newton iteration.

    Starts from ``y = x - lam(x)``, or from ``y = x + guess(x)`` when an
    approximate inverse displacement is supplied.  A step that does not reduce the residual
    is halved, up to ``max_halvings`` times.  Nodes are frozen once their
    residual is below ``tol``, so each node's result is independent of the
    others in the batch.
    """
    grid = flow.grid
    n = grid.n
    lam = flow.displacement
    batch = lam.shape[:-3]
    nb = int(np.prod(batch, dtype=np.int64))
    interp = Interpolant(grid, lam.reshape(nb, 2, n, n))
    start = -lam if guess is None else np.broadcast_to(guess, lam.shape)
    y0 = np.moveaxis((grid.coords + start).reshape(nb, 2, n * n), 1, -1).reshape(-1, 2)
    y, res, iters = newton_invert(interp.table, np.ascontiguousarray(y0), nb, n, grid.h, tol, max_iter,
                                  max_halvings)
    bad = ~(res <= tol)
    if bad.any():
        k = int(np.argmax(np.where(bad, np.nan_to_num(res, nan=np.inf), -1.0)))
        raise NoConvergence(float(res[k]), tuple(int(v) for v in np.unravel_index(k, (*batch, n, n))))
    x = np.moveaxis(grid.coords, 0, -1).reshape(1, n * n, 2)
    mu = np.moveaxis((y.reshape(nb, n * n, 2) - x).reshape(nb, n, n, 2), -1, 1)
    return InverseMap(grid, mu.reshape(*batch, 2, n, n), float(res.max()), int(iters.max()))


def warm_guess(grid: TorusGrid, mu_prev: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Inverse-displacement guess after the map was composed with ``z -> z + shift(z)``.

    If ``X_new = (id + shift) o X_prev`` then ``Y_new = Y_prev o (id + shift)^-1``
    and ``(id + shift)^-1 ~ id - shift`` for a small shift.
    """
    return -shift + compose(grid, mu_prev, -shift)


def jacobian_transpose(inv: InverseMap) -> np.ndarray:
    """``grad^T Y = I + (grad mu)^T``, shaped ``(*batch, 2, 2, n, n)``."""
    jt = jacobian(inv.grid, inv.displacement, transpose=True)
    jt[..., 0, 0, :, :] += 1.0
    jt[..., 1, 1, :, :] += 1.0
    return jt


def composition_residual(flow: FlowMap, inv: InverseMap) -> tuple[float, float]:
    """``(max |X(Y(x)) - x|, max |Y(X(x)) - x|)`` over nodes, using interpolation."""
    grid = flow.grid
    lam, mu = flow.displacement, inv.displacement
    # X(Y(x)) - x = mu(x) + lam(Y(x)); Y(X(x)) - x = lam(x) + mu(X(x))
    xy = mu + compose(grid, lam, mu)
    yx = lam + compose(grid, mu, lam)
    return float(np.abs(xy).max()), float(np.abs(yx).max())
