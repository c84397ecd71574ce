from dataclasses import replace

import numpy as np
import pytest

from nnflow.fields import Grid, lebesgue_norm, magnitude, mollified_truncation
from nnflow.momentum import FAssemblyInputs, assemble_F
from nnflow.outer import (HBData, LadderSchedule, LevelParams, LevelSolveError, Physical, apply_E,
                          geometric_ladder, run_ladder, solve_hb, solve_level)
from nnflow.verify import ladder_base, manufactured_forcing

from test_continuity import dense_transport
from test_momentum import restrict, sample_operator, to_field


def level(n=16, f=None, r=2.0, alpha=1e-3, q=3.0, **kw):
    g = Grid.square(n)
    f = np.zeros(g.shape + (2,)) if f is None else f
    ph = Physical(M=kw.pop("M", 1.0), gamma=kw.pop("gamma", 1.5), a=1.0, r=r, mu0=1.0,
                  lambda0=0.0, f=f, g=np.zeros_like(f))
    args = dict(alpha=alpha, delta=0.1, eps=0.1, eta=0.1, q=q)
    args.update(kw)
    return LevelParams(g, physical=ph, **args)


def test_trivial_data_one_iteration():
    p = level(M=2.0)
    rho, u, rep = solve_level(p)
    assert rep.iterations == 1 and rep.converged
    assert not np.any(u)
    assert np.all(rho == 2.0)


def test_E_deterministic():
    p = level(f=manufactured_forcing(Grid.square(16)))
    v = np.random.default_rng(0).normal(size=p.grid.shape + (2,))
    v[p.grid.boundary_cells()] = 0
    a = apply_E(v, p)
    b = apply_E(v, p)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_E_dense_oracle_8x8():
    g = Grid.square(8)
    f = manufactured_forcing(g, 3.0)
    ph = Physical(M=1.3, gamma=1.5, a=1.0, r=2.0, mu0=1.0, lambda0=0.0, f=f, g=np.zeros_like(f))
    p = LevelParams(g, alpha=0.0, delta=1.5 * g.hmin, eps=0.05, eta=0.2, q=2.0, physical=ph)
    v = np.random.default_rng(1).normal(size=g.shape + (2,))
    v[g.boundary_cells()] = 0
    u, rho = apply_E(v, p)

    w = mollified_truncation(g, v, p.delta)
    rho_ref = dense_transport(g, p.eps, w, p.eta, ph.M)
    F = assemble_F(FAssemblyInputs(g, rho_ref, v, p.delta, p.eta, p.eps, ph.pressure, f, ph.g))
    L, interior = sample_operator(g)
    D = 0.5 * (L + np.swapaxes(L, 1, 2))
    K = g.cell_volume / 4 * np.einsum("sikn,sikm->nm", D, D)
    u_ref = to_field(g, np.linalg.solve(K, g.cell_volume * restrict(F, interior)), interior)
    assert np.abs(rho - rho_ref).max() <= 1e-10
    assert np.abs(u - u_ref).max() <= 1e-10


def test_linear_response():
    g = Grid.square(16)
    norms = []
    for amp in (1e-3, 2e-3):
        f = np.zeros(g.shape + (2,))
        f[..., 0] = amp
        rho, u, rep = solve_level(level(f=f, r=2.0, alpha=0.0, q=2.0))
        assert rep.converged
        norms.append(lebesgue_norm(g, magnitude(g, u)))
    assert norms[1] / norms[0] == pytest.approx(2.0, rel=0.1)


def test_mass_at_every_iterate():
    p = level(n=24, f=manufactured_forcing(Grid.square(24), 2.0))
    rho, u, rep = solve_level(p)
    assert rep.converged and len(rep.masses) == rep.iterations
    assert np.max(np.abs(np.array(rep.masses) - 1.0)) <= 1e-10
    assert min(rep.min_rho) >= 0
    assert rep.updates[-1] <= rep.tol


@pytest.mark.parametrize("method", ["anderson", "picard"])
def test_fixed_point_residual(method):
    p = level(n=16, f=manufactured_forcing(Grid.square(16)))
    rho, u, rep = solve_level(p, method=method, max_iter=500)
    assert rep.converged and rep.fixed_point_residual <= 1e-8


def test_warm_start_agrees_with_cold_start():
    p = level(n=16, f=manufactured_forcing(Grid.square(16), 2.0))
    _, u_cold, r_cold = solve_level(p)
    _, u_warm, r_warm = solve_level(p, u0=u_cold)
    assert r_warm.iterations <= r_cold.iterations
    assert lebesgue_norm(p.grid, magnitude(p.grid, u_cold - u_warm)) <= 1e-8


def test_failure_is_reported():
    p = level(n=16, f=manufactured_forcing(Grid.square(16), 5.0))
    with pytest.raises(LevelSolveError) as exc:
        solve_level(p, max_iter=2)
    assert exc.value.report is not None and not exc.value.report.converged


def test_level_validation():
    with pytest.raises(ValueError):
        level(r=1.2)  # inadmissible
    with pytest.raises(ValueError):
        level(eta=0.0)
    with pytest.raises(ValueError):
        level(alpha=1e-3, q=2.0)  # q must exceed d


def test_single_rung_schedule_equals_solve_level():
    p = level(n=16, f=manufactured_forcing(Grid.square(16)))
    res = run_ladder(LadderSchedule([p]), diagnostics=False)
    rho, u, _ = solve_level(p)
    assert np.array_equal(res.rungs[0].u, u) and np.array_equal(res.rungs[0].rho, rho)


def test_schedule_must_not_increase():
    p = level()
    with pytest.raises(ValueError):
        LadderSchedule([p, replace(p, eps=0.2)])


def test_ladder_eps_descent_diagnostics():
    base = ladder_base(24)
    res = run_ladder(geometric_ladder(base, 1, [1e-1, 3e-2, 1e-2, 3e-3]))
    assert res.completed
    eps_rungs = res.rungs[1:]
    grads = [r.diagnostics.eps_gradient_norms["L2"] for r in eps_rungs]
    assert all(b < a for a, b in zip(grads, grads[1:]))
    r = base.physical.r

    def dist(a, b):
        return lebesgue_norm(base.grid, magnitude(base.grid, a.u - b.u), r)

    last = eps_rungs[-4:]
    gaps = [dist(a, b) for a, b in zip(last, last[1:])]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_hb_trivial_case():
    g = Grid.square(12)
    z = np.zeros(g.shape + (2,))
    ph = Physical(M=1.0, gamma=1.5, a=1.0, r=2.0, mu0=1.0, lambda0=0.0, f=z, g=z)
    hb = HBData(0.5, 1.0, 0.1, 1.0, 0.0, np.full(g.shape, 1.4))
    p = LevelParams(g, alpha=1e-3, delta=0.1, eps=0.1, eta=0.0, q=3.0, physical=ph, hb=hb)
    rho, u, stress, diag = solve_hb(p, [0.1, 0.01])
    assert not np.any(u)
    assert np.allclose(rho, 1.4, rtol=1e-14)


def test_hb_rejects_bad_gamma():
    g = Grid.square(12)
    z = np.zeros(g.shape + (2,))
    ph = Physical(M=1.0, gamma=2.5, a=1.0, r=2.0, mu0=1.0, lambda0=0.0, f=z, g=z)
    hb = HBData(0.5, 1.0, 0.1, 1.0, 0.0, np.ones(g.shape))
    p = LevelParams(g, alpha=1e-3, delta=0.1, eps=0.1, eta=0.0, q=3.0, physical=ph, hb=hb)
    with pytest.raises(ValueError):
        solve_hb(p, [0.1])
