"""The N-copy particle system with resetting.

State is held for M independent replicas at once; arrays carry a leading
replica axis and, for per-copy quantities, a copy axis after it.  The reset
criterion compares replica averages, so every replica resets at the same
times (with M = 1 this is the single-realization criterion).
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import diagnostics as diag
from .config import SimConfig
from .flow import FlowMap, InverseMap, em_step, increments, invert_map, warm_guess
from .torus import TorusGrid, curl2d, leray_project
from .weber import vorticity_velocity, weber_velocity

log = logging.getLogger(__name__)

EXHAUSTED_ENSTROPHY = 1e-14


# --- initial data ------------------------------------------------------------------

def taylor_green(grid: TorusGrid, amplitude: float = 1.0) -> np.ndarray:
    x, y = grid.coords
    return amplitude * np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])


def random_field(grid: TorusGrid, seed: int = 0, kmax: int = 4, energy: float = 2 * math.pi**2) -> np.ndarray:
    """Random mean-zero divergence-free field with modes ``1 <= |k| <= kmax``.

    Stream-function amplitudes fall off as ``|k|^-3`` (a ``k^-3`` energy
    spectrum shape); the field is scaled to the requested energy.
    """
    rng = np.random.default_rng(seed)
    k = np.sqrt(grid.kmag2)
    amp = np.zeros_like(k)
    band = (k >= 1) & (k <= kmax)
    amp[band] = k[band] ** -3.0
    psih = amp * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    psi = grid.ifft(psih)
    kx, ky = grid.wavenumbers
    ph = grid.fft(psi)
    u = grid.ifft(np.stack([-1j * ky * ph, 1j * kx * ph]))
    u = leray_project(grid, u)
    return u * math.sqrt(energy / diag.energy(grid, u))


def initial_velocity(grid: TorusGrid, config: SimConfig) -> np.ndarray:
    if config.init == "taylor_green":
        u = taylor_green(grid, config.init_amplitude)
    else:
        u = random_field(grid, config.init_seed, config.init_kmax, config.init_energy)
    return leray_project(grid, u, dealias=config.dealias)


# --- state and log -------------------------------------------------------------------

@dataclass
class EnsembleState:
    t: float
    step: int
    m: int
    t_reset: float
    u_reset: np.ndarray       # (M, 2, n, n) data of the current interval
    e_reset: np.ndarray       # (M,) ||grad u_reset||^2
    energy_reset: np.ndarray  # (M,) ||u_reset||^2
    lam: np.ndarray           # (M, N, 2, n, n) flow displacements
    mu: np.ndarray            # (M, N, 2, n, n) inverse-map displacements
    brownian: np.ndarray      # (M, N, 2) accumulated B
    u_copies: np.ndarray      # (M, N, 2, n, n)
    u_mean: np.ndarray        # (M, 2, n, n)
    gram: np.ndarray          # (M, N, N)

    @property
    def replicas(self) -> int:
        return self.lam.shape[0]

    @property
    def copies(self) -> int:
        return self.lam.shape[1]


@dataclass
class ResetEvent:
    m: int
    t_m: float
    e_reset: float         # enstrophy of the new reset data
    energy_before: float   # mean per-copy energy just before averaging
    energy_after: float    # energy of the averaged field
    contraction: float     # e_reset / e_prev
    s_trigger: float       # off-diagonal Gram sum that fired the trigger
    copy_enstrophy: float  # mean diagonal Gram entry at the trigger
    e_prev: float          # enstrophy of the previous reset data


RESET_COLUMNS = ["m", "t_m", "E_reset", "energy_before", "energy_after", "contraction", "S_trigger",
                 "copy_enstrophy", "E_prev"]


@dataclass
class ResetLog:
    events: list[ResetEvent] = field(default_factory=list)

    def append(self, ev: ResetEvent) -> None:
        if self.events and ev.t_m <= self.events[-1].t_m:
            raise ValueError("reset times must increase")
        self.events.append(ev)

    def __iter__(self) -> Iterator[ResetEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def rows(self) -> list[list[str]]:
        return [[str(e.m), repr(e.t_m), repr(e.e_reset), repr(e.energy_before), repr(e.energy_after),
                 repr(e.contraction), repr(e.s_trigger), repr(e.copy_enstrophy), repr(e.e_prev)]
                for e in self.events]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESET_COLUMNS)
            w.writerows(self.rows())

    @classmethod
    def from_rows(cls, rows) -> "ResetLog":
        out = cls()
        for r in rows:
            out.append(ResetEvent(int(r[0]), *(float(v) for v in r[1:9])))
        return out

    @classmethod
    def read_csv(cls, path: str | Path) -> "ResetLog":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        return cls.from_rows(rows[1:])


# --- criterion ---------------------------------------------------------------------

def reset_statistic(gram: np.ndarray) -> float:
    """Off-diagonal Gram sum; averaged over replicas when ``gram`` is (M, N, N)."""
    return float(np.mean(diag.offdiag_sum(np.asarray(gram))))


def reset_threshold(e_reset: float, epsilon: float, copies: int) -> float:
    return (1.0 - epsilon) * copies * (copies - 1) * e_reset


def check_reset(s: float, e_reset: float, epsilon: float, copies: int) -> bool:
    """True when the decorrelation statistic falls strictly below threshold."""
    return bool(s < reset_threshold(e_reset, epsilon, copies))


# --- dynamics ------------------------------------------------------------------------

def copy_velocities(grid: TorusGrid, config: SimConfig, lam: np.ndarray, u_reset: np.ndarray,
                    guess: np.ndarray | None = None):
    """Invert the maps and rebuild (mu, u_copies, u_mean, gram) for a block of replicas."""
    inv = invert_map(FlowMap(grid, lam), tol=config.newton_tol, max_iter=config.newton_max_iter, guess=guess)
    return (inv.displacement, *velocities_from_inverse(grid, config, inv.displacement, u_reset))


def velocities_from_inverse(grid: TorusGrid, config: SimConfig, mu: np.ndarray, u_reset: np.ndarray):
    """(u_copies, u_mean, gram) from inverse displacements ``(M, N, 2, n, n)``."""
    inv = InverseMap(grid, mu)
    if config.velocity == "weber":
        u = weber_velocity(inv, u_reset, dealias=config.dealias)
    else:
        u = vorticity_velocity(inv, curl2d(grid, u_reset), dealias=config.dealias)
    return u, u.mean(axis=1), diag.gram_matrix(grid, u)


def fresh_state(grid: TorusGrid, u_reset: np.ndarray, copies: int, t: float, step: int, m: int,
                brownian: np.ndarray) -> EnsembleState:
    """State at the start of an interval: identity maps, every copy equal to ``u_reset``."""
    nr = u_reset.shape[0]
    e = np.atleast_1d(diag.enstrophy(grid, u_reset))
    return EnsembleState(
        t=t, step=step, m=m, t_reset=t,
        u_reset=u_reset, e_reset=e, energy_reset=np.atleast_1d(diag.energy(grid, u_reset)),
        lam=np.zeros((nr, copies, 2, grid.n, grid.n)), mu=np.zeros((nr, copies, 2, grid.n, grid.n)),
        brownian=brownian,
        u_copies=np.broadcast_to(u_reset[:, None], (nr, copies, 2, grid.n, grid.n)).copy(),
        u_mean=u_reset.copy(),
        gram=np.broadcast_to(e[:, None, None], (nr, copies, copies)).copy(),
    )


def init_state(config: SimConfig, grid: TorusGrid | None = None) -> EnsembleState:
    grid = grid or TorusGrid(config.n)
    u0 = initial_velocity(grid, config)
    u_reset = np.broadcast_to(u0, (config.replicas, 2, grid.n, grid.n)).copy()
    return fresh_state(grid, u_reset, config.copies, 0.0, 0, 0, np.zeros((config.replicas, config.copies, 2)))


def perform_reset(state: EnsembleState, grid: TorusGrid, log_: ResetLog | None = None,
                  s_trigger: float | None = None) -> EnsembleState:
    """Restart every copy from the current ensemble mean."""
    e_prev = float(state.e_reset.mean())
    new = fresh_state(grid, state.u_mean.copy(), state.copies, state.t, state.step, state.m + 1,
                      state.brownian)
    if log_ is not None:
        gdiag = np.diagonal(state.gram, axis1=-2, axis2=-1)
        log_.append(ResetEvent(
            m=new.m, t_m=state.t, e_reset=float(new.e_reset.mean()),
            energy_before=float(np.mean(diag.energy(grid, state.u_copies))),
            energy_after=float(new.energy_reset.mean()),
            contraction=float(new.e_reset.mean()) / e_prev,
            s_trigger=reset_statistic(state.gram) if s_trigger is None else s_trigger,
            copy_enstrophy=float(gdiag.mean()),
            e_prev=e_prev,
        ))
    return new


def _blocks(total: int, workers: int) -> list[slice]:
    workers = max(1, min(workers, total))
    edges = np.linspace(0, total, workers + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def advance(state: EnsembleState, config: SimConfig, grid: TorusGrid,
            pool: ThreadPoolExecutor | None = None) -> EnsembleState:
    """Move all copies one step forward without evaluating the reset criterion."""
    k = state.step

    def work(rs: slice):
        db = increments(config.seed, range(rs.start, rs.stop), config.copies, k, config.dt)
        flow = em_step(FlowMap(grid, state.lam[rs]), state.u_mean[rs], config.dt, db, config.nu)
        # X_new = (id + shift) o X_old, which gives a close starting point for the inverse
        shift = config.dt * state.u_mean[rs][:, None] + math.sqrt(2 * config.nu) * db[..., None, None]
        guess = warm_guess(grid, state.mu[rs], shift)
        return (flow.displacement, db, *copy_velocities(grid, config, flow.displacement, state.u_reset[rs], guess))

    blocks = _blocks(state.replicas, config.workers)
    parts = list(pool.map(work, blocks)) if pool is not None and len(blocks) > 1 else [work(b) for b in blocks]
    lam, db, mu, u, um, g = (np.concatenate(p) for p in zip(*parts))
    return replace(state, t=(k + 1) * config.dt, step=k + 1, lam=lam, mu=mu, brownian=state.brownian + db,
                   u_copies=u, u_mean=um, gram=g)


def step(state: EnsembleState, config: SimConfig, grid: TorusGrid | None = None,
         log_: ResetLog | None = None, pool: ThreadPoolExecutor | None = None) -> EnsembleState:
    """One full step: move copies, then check the criterion and reset if it fires."""
    grid = grid or TorusGrid(config.n)
    state = advance(state, config, grid, pool)
    if state.step % config.check_every == 0:
        s = reset_statistic(state.gram)
        if check_reset(s, float(state.e_reset.mean()), config.epsilon, config.copies):
            state = perform_reset(state, grid, log_, s)
    return state


# --- orchestration --------------------------------------------------------------------

@dataclass
class RunResult:
    records: list
    resets: ResetLog
    state: EnsembleState
    status: str


class Simulation:
    """Drives a run and produces diagnostics rows at record steps."""

    def __init__(self, config: SimConfig, state: EnsembleState | None = None,
                 resets: ResetLog | None = None, prev_record: dict | None = None):
        self.config = config
        self.grid = TorusGrid(config.n)
        self.state = state if state is not None else init_state(config, self.grid)
        self.resets = resets if resets is not None else ResetLog()
        self.prev_record = prev_record
        self.status = "running"

    def records(self) -> list[diag.DiagnosticsRecord]:
        st, cfg, grid = self.state, self.config, self.grid
        n_copies = st.copies
        e = np.atleast_1d(diag.energy(grid, st.u_mean))
        s = diag.offdiag_sum(st.gram)
        prev = self.prev_record
        if prev is None or st.t <= prev["t"]:
            resid = np.zeros_like(e)
        else:
            rate = (e - np.asarray(prev["energy"])) / (st.t - prev["t"])
            if cfg.nu > 0:
                resid = rate / (2 * cfg.nu) + 0.5 * (s + np.asarray(prev["S"])) / n_copies**2
            else:
                resid = rate
        grow = math.exp(diag.gronwall_rate(cfg.nu, cfg.epsilon, n_copies) * (st.t - st.t_reset))
        margin = e * grow - st.energy_reset
        self.prev_record = {"t": st.t, "energy": e.tolist(), "S": s.tolist()}
        ens = np.diagonal(st.gram, axis1=-2, axis2=-1)
        return [diag.DiagnosticsRecord(st.t, st.m, r, float(e[r]), float(s[r]), float(resid[r]),
                                       float(margin[r]), tuple(float(v) for v in ens[r]))
                for r in range(st.replicas)]

    def iterate(self, stop_step: int | None = None,
                on_step: Callable[["Simulation", bool], None] | None = None) -> Iterator[list]:
        """Yield record batches (one per record time) until t_final or ``stop_step``."""
        cfg = self.config
        total = cfg.steps if stop_step is None else min(stop_step, cfg.steps)
        if self.state.step == 0:
            yield self.records()
        if float(self.state.e_reset.mean()) < EXHAUSTED_ENSTROPHY:
            self.status = "energy_exhausted"
            return
        pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
        try:
            while self.state.step < total:
                m_before = self.state.m
                self.state = step(self.state, cfg, self.grid, self.resets, pool)
                did_reset = self.state.m != m_before
                k = self.state.step
                if k % cfg.record_every == 0 or k == cfg.steps:
                    yield self.records()
                if on_step is not None:
                    on_step(self, did_reset)
                if did_reset and float(self.state.e_reset.mean()) < EXHAUSTED_ENSTROPHY:
                    self.status = "energy_exhausted"
                    log.info("energy exhausted at t=%g", self.state.t)
                    return
        finally:
            if pool is not None:
                pool.shutdown()
        self.status = "completed" if self.state.step >= cfg.steps else "paused"

    def run(self, **kw) -> RunResult:
        records = [r for batch in self.iterate(**kw) for r in batch]
        return RunResult(records, self.resets, self.state, self.status)


def run(config: SimConfig) -> tuple[list, ResetLog]:
    res = Simulation(config).run()
    return res.records, res.resets
