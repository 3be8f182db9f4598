import math

import numpy as np
import pytest

from stochlag import diagnostics as diag
from stochlag.config import SimConfig
from stochlag.ensemble import ResetEvent, advance, init_state, taylor_green
from stochlag.reference import solve
from stochlag.torus import TorusGrid, curl2d


def test_energy_examples(grid32):
    x, y = grid32.coords
    assert diag.energy(grid32, np.zeros((2, 32, 32))) == 0.0
    assert diag.energy(grid32, np.stack([np.sin(x), 0 * x])) == pytest.approx(2 * math.pi**2, rel=1e-13)
    assert diag.energy(grid32, taylor_green(grid32)) == pytest.approx(2 * math.pi**2, rel=1e-13)


def test_enstrophy_of_taylor_green(grid32):
    # |grad u|^2 integrates to 4 pi^2, which equals the squared vorticity norm
    u = taylor_green(grid32)
    assert diag.enstrophy(grid32, u) == pytest.approx(4 * math.pi**2, rel=1e-13)
    w = curl2d(grid32, u)
    assert diag.enstrophy(grid32, u) == pytest.approx(grid32.h**2 * np.sum(w**2), rel=1e-12)


def test_gram_of_identical_copies(grid32):
    u = taylor_green(grid32)
    g = diag.gram_matrix(grid32, np.stack([u] * 5))
    np.testing.assert_allclose(g, 4 * math.pi**2, rtol=1e-13)
    # fully correlated copies: the right side is -(N - 1)/N times the enstrophy
    assert diag.energy_rate_rhs(g) == pytest.approx(-(4 / 5) * 4 * math.pi**2, rel=1e-13)


def test_single_copy_has_no_dissipation(grid32):
    g = diag.gram_matrix(grid32, taylor_green(grid32)[None])
    assert diag.offdiag_sum(g) == 0.0
    assert diag.energy_rate_rhs(g) == 0.0


def test_gram_batches_are_independent(grid32):
    rng = np.random.default_rng(0)
    u = rng.standard_normal((3, 4, 2, 32, 32))
    full = diag.gram_matrix(grid32, u)
    np.testing.assert_array_equal(full[1], diag.gram_matrix(grid32, u[1:2])[0])
    np.testing.assert_array_equal(full, np.swapaxes(full, -1, -2))


def test_mean_energy_bounded_by_triangle_inequality(grid32):
    rng = np.random.default_rng(1)
    u = rng.standard_normal((6, 2, 32, 32))
    norms = np.sqrt(diag.energy(grid32, u))
    assert diag.energy(grid32, u.mean(axis=0)) <= norms.sum() ** 2 / 36 * (1 + 1e-12)


def test_energy_rate_residual_monte_carlo():
    # one EM step of M replicas; residual within C (dt + M^-1/2) of the enstrophy scale
    cfg = SimConfig(n=32, copies=4, replicas=64, nu=0.05, dt=1e-3, init="random")
    g = TorusGrid(32)
    s0 = init_state(cfg, g)
    s1 = advance(s0, cfg, g)
    mean, se = diag.energy_rate_residual(s0, s1, cfg.nu)
    scale = float(s0.e_reset.mean())
    assert abs(mean) <= 3 * (cfg.dt + cfg.replicas**-0.5) * scale
    assert se > 0


def test_energy_rate_residual_single_copy_is_drift():
    cfg = SimConfig(n=16, copies=1, replicas=2, nu=0.0, dt=1e-2)
    g = TorusGrid(16)
    s0 = init_state(cfg, g)
    s1 = advance(s0, cfg, g)
    mean, _ = diag.energy_rate_residual(s0, s1, 0.0)
    expected = (diag.energy(g, s1.u_mean) - diag.energy(g, s0.u_mean)).mean() / cfg.dt
    assert mean == pytest.approx(expected, abs=1e-12)


def test_gronwall_margin():
    t = np.array([0.5, 1.0, 1.5])
    e = np.array([[2.0, 1.8, 1.7], [2.0, 1.6, 1.5]])
    mean, se = diag.gronwall_margin(t, e, 0.5, 2.0, nu=0.1, epsilon=0.5, copies=4)
    rate = 2 * 0.1 * 0.5 * 3 / 4
    assert mean[0] == 0.0 and se[0] == 0.0
    assert mean[1] == pytest.approx(1.7 * math.exp(rate * 0.5) - 2.0)
    assert se[2] == pytest.approx(0.1 * math.exp(rate))
    flat, _ = diag.gronwall_margin(t, e, 0.5, 2.0, nu=0.0, epsilon=0.5, copies=4)
    np.testing.assert_allclose(flat, e.mean(axis=0) - 2.0)


@pytest.mark.parametrize("eps,n,bound", [(0.5, 10, 0.55), (0.9, 2, 0.55), (0.3, 2, 0.85)])
def test_contraction_bound(eps, n, bound):
    assert diag.contraction_bound(eps, n) == pytest.approx(bound)


def _event(m, factor, e_prev=10.0, s=0.0, copy=10.0):
    return ResetEvent(m=m, t_m=float(m), e_reset=factor * e_prev, energy_before=1.0, energy_after=1.0,
                      contraction=factor, s_trigger=s, copy_enstrophy=copy, e_prev=e_prev)


def test_contraction_check():
    assert diag.contraction_check([], 0.5, 10) == []
    res = diag.contraction_check([_event(1, 0.5), _event(2, 0.5505), _event(3, 0.56)], 0.5, 10)
    assert [r.passed for r in res] == [True, True, False]


def test_reset_identity_residuals():
    # N = 2: E_new = copy/2 + S/4; with copy = 9.9 and S = 16 that is 8.95
    ev = _event(1, 0.895, e_prev=10.0, s=16.0, copy=9.9)
    realized, literal = diag.reset_identity_residuals(ev, 2)
    assert realized == pytest.approx(0.0, abs=1e-15)
    assert literal == pytest.approx(0.05 / 10.0)


def test_oracle_error(grid32):
    w = 2 * np.sin(grid32.coords[0]) * np.sin(grid32.coords[1])
    u = taylor_green(grid32)
    assert diag.oracle_error(grid32, u, w) == pytest.approx(0.0, abs=1e-14)
    assert diag.oracle_error(grid32, np.stack([0.9 * u, 1.1 * u]), w) == pytest.approx(0.0, abs=1e-14)
    assert diag.oracle_error(grid32, 0.9 * u, w) == pytest.approx(0.1)


def test_oracle_error_steady_euler_against_solver(grid32):
    w0 = curl2d(grid32, taylor_green(grid32))
    _, traj = solve(grid32, w0, 0.0, 0.05, 20, record_every=20)
    assert diag.oracle_error(grid32, taylor_green(grid32), traj[-1]) < 1e-12


def test_fit_decay_recovers_rate():
    t = np.linspace(0, 2, 9)
    fit = diag.fit_decay(t, 3.0 * np.exp(-0.7 * t))
    assert fit.rate == pytest.approx(0.7)
    assert fit.intercept == pytest.approx(math.log(3.0))
    assert fit.residual < 1e-12
    noisy = diag.fit_decay(t, 3.0 * np.exp(-0.7 * t) * (1 + 0.1 * np.cos(5 * t)))
    assert noisy.residual > 0.01


def test_record_validation_and_csv_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        diag.DiagnosticsRecord(0.0, 0, 0, float("nan"), 0.0, 0.0, 0.0, (1.0,))
    recs = [diag.DiagnosticsRecord(0.1 * k, k // 2, 0, 1.0 / (k + 1), 0.3, -1e-17, 0.0, (2.0, 1.0 / 3))
            for k in range(4)]
    path = tmp_path / "d.csv"
    diag.write_diagnostics(path, recs[:2], 2)
    diag.write_diagnostics(path, recs[2:], 2, append=True)
    assert path.read_text().splitlines()[0] == (
        "t,m,replica,energy,S,energy_rate_residual,gronwall_margin,enstrophy_0,enstrophy_1")
    assert diag.read_diagnostics(path) == recs
