"""Consistency checks over the stored outputs of a run."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import SimConfig
from .ensemble import ResetLog

ENSTROPHY_DRIFT_TOL = 1e-2
IDENTITY_TOL = 1e-8
CONTRACTION_TOL = 1e-3
GRONWALL_SLACK = 0.05


def _by_time(records):
    groups = defaultdict(list)
    for r in records:
        groups[r.t].append(r)
    return [groups[t] for t in sorted(groups)]


def check_finite(records, resets) -> dict:
    ok = all(r.energy >= 0 and all(e >= 0 for e in r.enstrophies) for r in records)
    ok = ok and all(math.isfinite(v) for ev in resets for v in (ev.t_m, ev.e_reset, ev.contraction))
    return {"passed": bool(ok), "rows": len(records)}


def check_enstrophy_constancy(records, tol: float = ENSTROPHY_DRIFT_TOL) -> dict:
    """Largest relative change of any copy's enstrophy within one reset interval."""
    first: dict[tuple[int, int], tuple[float, ...]] = {}
    worst = 0.0
    for r in records:
        ref = first.setdefault((r.replica, r.m), r.enstrophies)
        for a, b in zip(r.enstrophies, ref):
            worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    return {"passed": worst <= tol, "max_relative_drift": worst, "tolerance": tol}


def check_gronwall(records, slack: float = GRONWALL_SLACK) -> dict:
    """Replica-averaged envelope margin must not exceed 2 SE plus ``slack * E(0)``."""
    groups = _by_time(records)
    e0 = float(np.mean([r.energy for r in groups[0]])) if groups else 0.0
    worst, worst_t, top, passed = -math.inf, None, -math.inf, True
    for g in groups:
        mean, se = diag._mean_se([r.gronwall_margin for r in g])
        top = max(top, mean)
        excess = mean - 2 * se - slack * e0
        if excess > worst:
            worst, worst_t = excess, g[0].t
        passed = passed and excess <= 0
    return {"passed": passed, "worst_excess": worst, "worst_t": worst_t, "max_margin": top, "E0": e0}


def check_contraction(resets, epsilon: float, copies: int, tol: float = CONTRACTION_TOL) -> dict:
    res = diag.contraction_check(resets, epsilon, copies, tol)
    return {"passed": all(r.passed for r in res), "bound": diag.contraction_bound(epsilon, copies),
            "max_factor": max((r.factor for r in res), default=None), "resets": len(res)}


def check_reset_identity(resets, copies: int, tol: float = IDENTITY_TOL) -> dict:
    pairs = [diag.reset_identity_residuals(ev, copies) for ev in resets]
    realized = max((p[0] for p in pairs), default=0.0)
    literal = max((p[1] for p in pairs), default=0.0)
    return {"passed": realized <= tol, "max_realized_residual": realized,
            "max_literal_residual": literal, "tolerance": tol}


def check_energy_rate(records, nu: float, slack: float = GRONWALL_SLACK) -> dict:
    """Mean energy-balance residual over intervals without a reset, within 2 SE plus slack."""
    groups = _by_time(records)
    vals = []
    for prev, cur in zip(groups, groups[1:]):
        if prev[0].m == cur[0].m:
            vals.append(np.mean([r.energy_rate_residual for r in cur]))
    if not vals:
        return {"passed": True, "intervals": 0}
    mean, se = diag._mean_se(vals)
    # the residual is measured in enstrophy units for nu > 0 and as an energy rate for nu = 0
    if nu > 0:
        scale = float(np.mean([np.mean(r.enstrophies) for r in groups[0]]))
    else:
        scale = float(np.mean([r.energy for r in groups[0]]))
    return {"passed": abs(mean) <= 2 * se + slack * scale, "mean": mean, "se": se, "intervals": len(vals)}


def check_reset_times(resets) -> dict:
    times = [ev.t_m for ev in resets]
    return {"passed": all(b > a for a, b in zip(times, times[1:])), "count": len(times)}


def summarize(run_dir: str | Path) -> dict:
    """Evaluate every check on a run directory without modifying it."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = SimConfig(**manifest["config"])
    records = diag.read_diagnostics(run_dir / "diagnostics.csv")
    resets = ResetLog.read_csv(run_dir / "resets.csv")
    checks = {
        "finite": check_finite(records, resets),
        "reset_times_increasing": check_reset_times(resets),
        "enstrophy_constant_between_resets": check_enstrophy_constancy(records),
        "gronwall_envelope": check_gronwall(records),
        "reset_contraction": check_contraction(resets, cfg.epsilon, cfg.copies),
        "reset_identity": check_reset_identity(resets, cfg.copies),
        "energy_rate_residual": check_energy_rate(records, cfg.nu),
    }
    return {
        "run": str(run_dir),
        "config_hash": manifest.get("config_hash"),
        "status": manifest.get("status"),
        "checks": checks,
        "passed": all(c["passed"] for c in checks.values()),
    }
