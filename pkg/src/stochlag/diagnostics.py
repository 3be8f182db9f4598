"""Energy, enstrophy and Gram diagnostics and the bounds they must satisfy."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .torus import TorusGrid, biot_savart, jacobian, norm2


def energy(grid: TorusGrid, u: np.ndarray):
    """Squared L2 norm of a (batch of) vector field(s)."""
    return norm2(grid, u, 3)


def enstrophy(grid: TorusGrid, u: np.ndarray):
    """``||grad u||^2`` (Frobenius); equals ``||curl u||^2`` for mean-zero divergence-free u."""
    return norm2(grid, jacobian(grid, u), 4)


def gram_matrix(grid: TorusGrid, u_copies: np.ndarray) -> np.ndarray:
    """``G[i, j] = <grad u^i, grad u^j>`` for copies ``(..., N, 2, n, n)``.

    Each leading batch entry is reduced separately so results do not depend
    on how batches are grouped.
    """
    grads = jacobian(grid, u_copies)
    lead = grads.shape[:-5]
    nc = grads.shape[-5]
    flat = grads.reshape(-1, nc, 4 * grid.n * grid.n)
    out = np.empty((flat.shape[0], nc, nc))
    for b, a in enumerate(flat):
        g = grid.h**2 * (a @ a.T)
        out[b] = 0.5 * (g + g.T)
    return out.reshape(*lead, nc, nc)


def offdiag_sum(gram: np.ndarray) -> np.ndarray:
    return gram.sum(axis=(-2, -1)) - np.trace(gram, axis1=-2, axis2=-1)


def energy_rate_rhs(gram: np.ndarray) -> np.ndarray:
    """Right side ``-(1/N^2) sum_{i != j} G_ij`` of the particle energy balance."""
    n = gram.shape[-1]
    return -offdiag_sum(gram) / n**2


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def energy_rate_residual(before, after, nu: float) -> tuple[float, float]:
    """Replica-averaged residual of the particle energy balance over one interval.

    ``before``/``after`` are ensemble states (any objects with ``t``,
    ``u_mean`` shaped ``(M, 2, n, n)`` and ``gram`` shaped ``(M, N, N)``).
    Returns ``(mean, standard error)`` over replicas of
    ``dE/dt / (2 nu) + (S_before + S_after) / (2 N^2)``; for ``nu == 0`` the
    plain drift rate ``dE/dt``.
    """
    grid = TorusGrid(before.u_mean.shape[-1])
    dt = after.t - before.t
    e0 = np.atleast_1d(energy(grid, before.u_mean))
    e1 = np.atleast_1d(energy(grid, after.u_mean))
    rate = (e1 - e0) / dt
    if nu > 0:
        rhs = 0.5 * (energy_rate_rhs(before.gram) + energy_rate_rhs(after.gram))
        r = rate / (2.0 * nu) - rhs
    else:
        r = rate
    return _mean_se(r)


def gronwall_rate(nu: float, epsilon: float, copies: int) -> float:
    """Decay rate of the exponential envelope (Poincare constant 1 on [0, 2pi)^2)."""
    return 2.0 * nu * (1.0 - epsilon) * (copies - 1) / copies


def gronwall_margin(times, energies, t_reset: float, energy_reset, nu: float, epsilon: float,
                    copies: int) -> tuple[np.ndarray, np.ndarray]:
    """Margins ``E(t) exp(rate (t - t_m)) - E(t_m)``, replica averaged.

    ``energies`` is ``(T,)`` or ``(M, T)``; ``energy_reset`` scalar or ``(M,)``.
    Returns ``(margin, standard error)`` arrays of length T.  Non-positive
    margins satisfy the bound.
    """
    times = np.asarray(times, dtype=float)
    e = np.atleast_2d(np.asarray(energies, dtype=float))
    em = np.broadcast_to(np.atleast_1d(np.asarray(energy_reset, dtype=float)), (e.shape[0],))
    grow = np.exp(gronwall_rate(nu, epsilon, copies) * (times - t_reset))
    per = e * grow[None, :] - em[:, None]
    mean = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(per.shape[0]) if per.shape[0] > 1 else np.zeros_like(mean)
    return mean, se


def contraction_bound(epsilon: float, copies: int) -> float:
    """Per-reset enstrophy contraction factor ``1 - eps + eps/N``."""
    return 1.0 - epsilon + epsilon / copies


@dataclass
class ContractionResult:
    m: int
    factor: float
    bound: float
    passed: bool


def contraction_check(resets: Iterable, epsilon: float, copies: int, tol: float = 1e-3) -> list[ContractionResult]:
    """Check every logged contraction factor against ``1 - eps + eps/N + tol``."""
    bound = contraction_bound(epsilon, copies)
    return [ContractionResult(ev.m, ev.contraction, bound, bool(ev.contraction <= bound + tol)) for ev in resets]


def reset_identity_residuals(event, copies: int) -> tuple[float, float]:
    """Relative residuals of the enstrophy balance at a reset.

    The first uses the realized per-copy enstrophies at the reset,
    ``E_new = (1/N) mean_i G_ii + S/N^2``; the second substitutes the
    enstrophy of the previous reset data for the per-copy values,
    ``E_new = E_prev/N + S/N^2``, so it also absorbs the conservation error.
    """
    n = copies
    scale = max(event.e_prev, 1e-300)
    realized = event.copy_enstrophy / n + event.s_trigger / n**2
    literal = event.e_prev / n + event.s_trigger / n**2
    return abs(event.e_reset - realized) / scale, abs(event.e_reset - literal) / scale


def oracle_error(grid: TorusGrid, u_mean: np.ndarray, omega_ref: np.ndarray) -> float:
    """Relative L2 distance between the replica-averaged mean velocity and the reference."""
    u = np.asarray(u_mean)
    if u.ndim == 4:
        u = u.mean(axis=0)
    ref = biot_savart(grid, omega_ref)
    return math.sqrt(energy(grid, u - ref) / energy(grid, ref))


@dataclass
class DecayFit:
    rate: float
    intercept: float
    residual: float


def fit_decay(times, energies) -> DecayFit:
    """Least-squares fit ``log E = intercept - rate * t``; residual is the RMS in log space."""
    t = np.asarray(times, dtype=float)
    y = np.log(np.asarray(energies, dtype=float))
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (intercept + slope * t)
    return DecayFit(float(-slope), float(intercept), float(np.sqrt(np.mean(resid**2))))


# --- per-row records ------------------------------------------------------------

@dataclass
class DiagnosticsRecord:
    t: float
    m: int
    replica: int
    energy: float
    S: float
    energy_rate_residual: float
    gronwall_margin: float
    enstrophies: tuple[float, ...]

    def __post_init__(self):
        vals = (self.t, self.energy, self.S, self.energy_rate_residual, self.gronwall_margin, *self.enstrophies)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite diagnostics at t={self.t}")


def _fmt(x: float) -> str:
    return repr(float(x))


def diagnostics_header(copies: int) -> list[str]:
    return ["t", "m", "replica", "energy", "S", "energy_rate_residual", "gronwall_margin"] + [
        f"enstrophy_{i}" for i in range(copies)]


def record_row(rec: DiagnosticsRecord) -> list[str]:
    return [_fmt(rec.t), str(rec.m), str(rec.replica), _fmt(rec.energy), _fmt(rec.S),
            _fmt(rec.energy_rate_residual), _fmt(rec.gronwall_margin)] + [_fmt(e) for e in rec.enstrophies]


def write_diagnostics(path: str | Path, records: Sequence[DiagnosticsRecord], copies: int, append: bool = False):
    path = Path(path)
    new = not append or not path.exists()
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(diagnostics_header(copies))
        for rec in records:
            w.writerow(record_row(rec))


def read_diagnostics(path: str | Path) -> list[DiagnosticsRecord]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            ens = tuple(float(v) for k, v in row.items() if k.startswith("enstrophy_"))
            out.append(DiagnosticsRecord(float(row["t"]), int(row["m"]), int(row["replica"]), float(row["energy"]),
                                         float(row["S"]), float(row["energy_rate_residual"]),
                                         float(row["gronwall_margin"]), ens))
    return out
