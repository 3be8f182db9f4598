"""Checkpoint and restore of a running particle system.

A checkpoint directory holds ``manifest.json`` (time, reset index, config
and its hash, accumulated Brownian values, RNG position, reset history) and
one snapshot file per copy displacement plus the interval's reset data.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import SimConfig
from .ensemble import EnsembleState, ResetLog, Simulation, fresh_state, velocities_from_inverse
from .snapshots import read_snapshot, write_snapshot
from .torus import TorusGrid

FORMAT = "stochlag-checkpoint/1"


def save_checkpoint(path: str | Path, sim: Simulation) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    st = sim.state
    for r in range(st.replicas):
        write_snapshot(path / f"u_reset_r{r:03d}.tsf", st.u_reset[r])
        for i in range(st.copies):
            write_snapshot(path / f"lam_r{r:03d}_c{i:03d}.tsf", st.lam[r, i])
            write_snapshot(path / f"mu_r{r:03d}_c{i:03d}.tsf", st.mu[r, i])
    manifest = {
        "format": FORMAT,
        "t": st.t,
        "step": st.step,
        "m": st.m,
        "t_reset": st.t_reset,
        "fresh": st.t_reset == st.t,
        "config_hash": sim.config.digest(),
        "config": sim.config.to_dict(),
        "e_reset": st.e_reset.tolist(),
        "energy_reset": st.energy_reset.tolist(),
        "brownian": st.brownian.tolist(),
        "rng": {"scheme": "philox", "key": "(seed, replica, copy)", "next_step": st.step},
        "prev_record": sim.prev_record,
        "resets": sim.resets.rows(),
        "status": sim.status,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(path: str | Path, config: SimConfig | None = None) -> Simulation:
    """Rebuild a Simulation; ``config`` may differ from the stored one only in t_final/workers."""
    path = Path(path)
    man = json.loads((path / "manifest.json").read_text())
    if man.get("format") != FORMAT:
        raise ValueError(f"{path} is not a checkpoint")
    stored = SimConfig(**man["config"])
    if stored.digest() != man["config_hash"]:
        raise ValueError("checkpoint manifest is inconsistent with its config hash")
    cfg = config or stored
    probe = SimConfig(**{**cfg.to_dict(), "t_final": stored.t_final})
    if probe.digest() != stored.digest():
        raise ValueError("resume config differs from the checkpoint in more than t_final/workers")
    grid = TorusGrid(cfg.n)
    nr, nc = cfg.replicas, cfg.copies
    u_reset = np.stack([read_snapshot(path / f"u_reset_r{r:03d}.tsf")[1] for r in range(nr)])
    brownian = np.asarray(man["brownian"], dtype=float).reshape(nr, nc, 2)
    if man["fresh"]:
        state = fresh_state(grid, u_reset, nc, man["t"], man["step"], man["m"], brownian)
    else:
        lam = np.stack([[read_snapshot(path / f"lam_r{r:03d}_c{i:03d}.tsf")[1] for i in range(nc)] for r in range(nr)])
        mu = np.stack([[read_snapshot(path / f"mu_r{r:03d}_c{i:03d}.tsf")[1] for i in range(nc)] for r in range(nr)])
        u, um, g = velocities_from_inverse(grid, cfg, mu, u_reset)
        state = EnsembleState(t=man["t"], step=man["step"], m=man["m"], t_reset=man["t_reset"], u_reset=u_reset,
                              e_reset=np.asarray(man["e_reset"]), energy_reset=np.asarray(man["energy_reset"]),
                              lam=lam, mu=mu, brownian=brownian, u_copies=u, u_mean=um, gram=g)
    return Simulation(cfg, state, ResetLog.from_rows(man["resets"]), man["prev_record"])
