"""End-to-end acceptance criteria.

Every test prints exactly one ``[PASS]``/``[FAIL] criterion k`` line (also
collected in the terminal summary).  Tolerances are fixed by the criteria
and are not tuned to the results.  Run only these with ``pytest -m acceptance -s``.
"""
import math

import numpy as np
import pytest

from conftest import band_limited
from stochlag import diagnostics as diag
from stochlag.checks import check_enstrophy_constancy, check_gronwall
from stochlag.cli import main
from stochlag.config import SimConfig
from stochlag.ensemble import Simulation, initial_velocity, taylor_green
from stochlag.flow import BijectivityLost, InverseMap, NoConvergence
from stochlag.reference import ns_energy_decay, solve
from stochlag.torus import TorusGrid, biot_savart, curl2d, divergence, leray_project, norm2
from stochlag.weber import vorticity_velocity, weber_velocity

pytestmark = pytest.mark.acceptance


def _rel(grid, a, b, ndim=3):
    return math.sqrt(norm2(grid, a - b, ndim) / norm2(grid, b, ndim))


def _replica_mean_energy(records):
    by_t = {}
    for r in records:
        by_t.setdefault(r.t, []).append(r.energy)
    return {t: np.asarray(v) for t, v in sorted(by_t.items())}


def test_c01_spectral_core(report):
    g = TorusGrid(64)
    worst = {"idempotence": 0.0, "divergence": 0.0, "curl_biot_savart": 0.0}
    for seed in range(8):
        v = band_limited(g, seed, kmax=10, channels=(2,))
        p = leray_project(g, v)
        worst["idempotence"] = max(worst["idempotence"], np.abs(leray_project(g, p) - p).max() / np.abs(p).max())
        worst["divergence"] = max(worst["divergence"], np.abs(divergence(g, p)).max() / np.abs(v).max())
        w = band_limited(g, 100 + seed, kmax=10)
        w -= w.mean()
        worst["curl_biot_savart"] = max(worst["curl_biot_savart"],
                                        np.abs(curl2d(g, biot_savart(g, w)) - w).max() / np.abs(w).max())
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + " (tol 1e-10)"
    report(1, "spectral core identities", max(worst.values()) <= 1e-10, detail)


def test_c02_reference_taylor_green(report):
    g = TorusGrid(64)
    nu, dt = 0.05, 1e-3
    x, y = g.coords
    w0 = 2 * np.sin(x) * np.sin(y)
    times, traj = solve(g, w0, nu, dt, 1000)
    exact = 2 * math.exp(-2 * nu * 1.0) * np.sin(x) * np.sin(y)
    err = math.sqrt(norm2(g, traj[-1] - exact) / norm2(g, exact))
    dec = ns_energy_decay(g, times, traj, nu)
    resid = float(np.max(np.abs(dec.residual) / dec.enstrophy[:-1]))
    report(2, "reference solver vs exact Taylor-Green", err <= 1e-8 and resid <= 1e-8,
           f"relative error at T=1 {err:.2e} (tol 1e-8), max per-step energy residual / enstrophy {resid:.2e} (tol 1e-8)")


def test_c03_steady_euler(report):
    cfg = SimConfig(n=64, copies=2, nu=0.0, dt=1e-3, t_final=1.0, record_every=1000)
    res = Simulation(cfg).run()
    g = TorusGrid(64)
    tg = taylor_green(g)
    err = _rel(g, res.state.u_mean[0], tg)
    report(3, "steady Euler invariance", res.status == "completed" and err <= 1e-3,
           f"relative L2 error at T=1 {err:.2e} (tol 1e-3), dt={cfg.dt}")


def test_c04_enstrophy_conservation(report):
    cfg = SimConfig(n=128, copies=4, nu=0.05, epsilon=0.5, dt=0.01, t_final=1.0, record_every=10)
    res = Simulation(cfg).run()
    out = check_enstrophy_constancy(res.records, tol=0.01)
    report(4, "per-copy enstrophy conservation", res.status == "completed" and out["passed"],
           f"max relative drift {out['max_relative_drift']:.2e} over unit time (tol 1e-2), resets={len(res.resets)}")


def test_c05_weber_vorticity_equivalence(report):
    cfg = SimConfig(n=64, copies=4, nu=0.05, epsilon=0.5, dt=1e-3, t_final=0.5, record_every=100)
    sim = Simulation(cfg)
    g = sim.grid
    worst = 0.0
    for k in range(100, cfg.steps + 1, 100):
        for _ in sim.iterate(stop_step=k):
            pass
        st = sim.state
        inv = InverseMap(g, st.mu)
        uw = weber_velocity(inv, st.u_reset)
        uv = vorticity_velocity(inv, curl2d(g, st.u_reset))
        e = np.sqrt(norm2(g, uw - uv, 3) / norm2(g, uv, 3))
        worst = max(worst, float(np.max(e)))
    report(5, "Weber and vorticity reconstructions agree", worst <= 1e-3,
           f"max relative L2 difference {worst:.2e} over t<=0.5 (tol 1e-3), dt={cfg.dt}")


def test_c06_single_copy_energy(report):
    cfg = SimConfig(n=32, copies=1, replicas=64, nu=0.05, dt=0.01, t_final=1.0, record_every=10)
    res = Simulation(cfg).run()
    e = _replica_mean_energy(res.records)
    ts = list(e)
    drift = e[ts[-1]] - e[ts[0]]
    mean, se = float(drift.mean()), float(drift.std(ddof=1) / math.sqrt(drift.size))
    rel = mean / float(e[ts[0]].mean())
    report(6, "N=1 energy does not dissipate", res.status == "completed" and abs(mean) < 2 * se,
           f"drift {mean:.3e} vs 2 SE {2 * se:.3e} (relative drift {rel:.2e}, M=64)")


def test_c07_reset_contraction(report):
    cfg = SimConfig(n=64, copies=2, nu=0.3, epsilon=0.3, dt=0.005, t_final=3.0, record_every=20)
    res = Simulation(cfg).run()
    bound = diag.contraction_bound(cfg.epsilon, cfg.copies)
    checks = diag.contraction_check(res.resets, cfg.epsilon, cfg.copies, tol=1e-3)
    pairs = [diag.reset_identity_residuals(ev, cfg.copies) for ev in res.resets]
    realized = max(p[0] for p in pairs) if pairs else 0.0
    literal = max(p[1] for p in pairs) if pairs else 0.0
    factor = max(c.factor for c in checks) if checks else float("nan")
    ok = len(res.resets) >= 3 and all(c.passed for c in checks) and literal <= 1e-8
    report(7, "reset contraction and trigger identity", ok,
           f"{len(res.resets)} resets, max factor {factor:.4f} (bound {bound:.4f}+1e-3); identity with previous "
           f"reset enstrophy: rel residual {literal:.2e} (tol 1e-8); with realized copy enstrophy: {realized:.2e}")


def test_c08_gronwall_bound(report):
    cfg = SimConfig(n=64, copies=16, replicas=32, nu=0.05, epsilon=0.5, dt=0.01, t_final=1.0, record_every=10)
    res = Simulation(cfg).run()
    out = check_gronwall(res.records, slack=0.05)
    report(8, "Gronwall envelope", res.status == "completed" and out["passed"],
           f"largest mean margin {out['max_margin']:.3e} (E0={out['E0']:.3f}), worst (margin - 2 SE - 5% E0) = "
           f"{out['worst_excess']:.3e} at t={out['worst_t']}, "
           f"resets={len(res.resets)}, M=32")


def test_c09_dissipation_end_to_end(report):
    cfg = SimConfig(n=64, copies=16, replicas=4, nu=0.05, epsilon=0.5, dt=0.01, t_final=4.0, record_every=10)
    sim = Simulation(cfg)
    energies = {}
    failure = None
    try:
        for batch in sim.iterate():
            energies[batch[0].t] = float(np.mean([r.energy for r in batch]))
    except (BijectivityLost, NoConvergence) as exc:
        failure = f"{type(exc).__name__} at t={sim.state.t + cfg.dt:.2f}"
    t_last = max(energies)
    ratio = energies[t_last] / energies[0.0]
    ok = failure is None and t_last >= cfg.t_final - 1e-9 and ratio <= 0.2
    report(9, "energy dissipation by T=4", ok,
           f"E({t_last:.2f})/E(0) = {ratio:.3f} (target <= 0.20), resets={len(sim.resets)}"
           + (f", run aborted: {failure}" if failure else ""))


def test_c10_oracle_convergence(report):
    g = TorusGrid(32)
    errors = []
    for n_copies in (4, 16, 64):
        cfg = SimConfig(n=32, copies=n_copies, replicas=16, nu=0.05, epsilon=0.5, dt=0.01, t_final=0.5,
                        record_every=50)
        sim = Simulation(cfg)
        sim.run()
        if not errors:
            omega0 = curl2d(g, initial_velocity(g, cfg))
            _, traj = solve(g, omega0, cfg.nu, 1e-3, 500, record_every=500)
        errors.append(diag.oracle_error(g, sim.state.u_mean, traj[-1]))
    ok = errors[0] > errors[1] > errors[2]
    report(10, "ensemble mean approaches the reference as N grows", ok,
           "relative error N=4,16,64: " + ", ".join(f"{e:.4f}" for e in errors) + " (must decrease)")


def test_c11_reproducibility(report, tmp_path, capsys):
    args = ["--n", "32", "--copies", "4", "--replicas", "3", "--nu", "0.3", "--epsilon", "0.3", "--dt", "0.01",
            "--t-final", "1.0", "--record-every", "5"]
    outs = []
    for i, extra in enumerate([[], [], ["--workers", "3"]]):
        d = tmp_path / f"run{i}"
        assert main(["run", *args, *extra, "--out", str(d)]) == 0
        outs.append(d)
    d = tmp_path / "from_manifest"
    assert main(["run", "--config", str(outs[0] / "manifest.json"), "--out", str(d)]) == 0
    outs.append(d)
    capsys.readouterr()
    ref = (outs[0] / "diagnostics.csv").read_bytes()
    same = all((o / "diagnostics.csv").read_bytes() == ref for o in outs[1:])
    resets = len((outs[0] / "resets.csv").read_text().splitlines()) - 1
    report(11, "byte-identical diagnostics", same,
           f"{len(outs)} runs (repeat, 3 workers, manifest replay) identical={same}, resets={resets}")
