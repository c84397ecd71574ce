import numpy as np
import pytest
from hypothesis import given, strategies as st

from nnflow.analysis import (DiagnosticsRecord, bogovskii_error, bogovskii_op, commutator,
                             default_battery, defect_terms, energy_identity_residual,
                             epsilon_scaling_study, fit_slope, friedrichs_commutator,
                             level_diagnostics, pressure_pairing, pressure_test_function,
                             smooth_zero_mean_corpus, transport_term, weak_solution_residual)
from nnflow.bogovskii import BogovskiiOp, bump_mass_constant, kernel
from nnflow.continuity import TransportProblem, renorm_residual, solve_transport
from nnflow.fields import Grid, div, grad, lebesgue_norm, magnitude, mollify
from nnflow.outer import solve_level
from nnflow.verify import cellular_flow, constant_level, energy_level, trig_pair

# ---------------------------------------------------------------------------
# energy identity


def test_energy_constant_state():
    p = constant_level(n=16, gamma=1.5, M=2.0)
    rho, u, _ = solve_level(p)
    lhs, rhs, rel = energy_identity_residual(rho, u, p)
    gam, eta = 1.5, p.eta
    vol = p.grid.volume
    expected = gam * eta / (gam - 1) * 2.0**gam * vol ** (1 - gam)
    assert sum(lhs.values()) == pytest.approx(expected, rel=1e-13)
    assert sum(rhs.values()) == pytest.approx(expected, rel=1e-13)
    assert rel <= 1e-12


def test_energy_half_form_differs_on_constant_state():
    p = constant_level()
    rho, u, _ = solve_level(p)
    assert energy_identity_residual(rho, u, p, form="half")[2] > 0.1


def test_energy_residual_decreases_under_refinement():
    res = []
    for n in (16, 32, 64):
        p = energy_level(n)
        rho, u, _ = solve_level(p)
        res.append(energy_identity_residual(rho, u, p)[2])
    assert all(b < a for a, b in zip(res, res[1:]))


# ---------------------------------------------------------------------------
# Friedrichs commutator


def test_commutator_constant_b_vanishes():
    g = Grid.square(64, periodic=True)
    a, _ = trig_pair(g)
    # zero up to the rounding of (3a)_eps against 3 a_eps
    assert np.abs(commutator(g, a, np.full(g.shape, 3.0), 4 * g.hmin)).max() <= 1e-12
    assert not np.any(commutator(g, a, np.full(g.shape, 2.0), 4 * g.hmin))


def test_commutator_constant_a():
    g = Grid.square(64, periodic=True)
    _, b = trig_pair(g)
    eps = 4 * g.hmin
    r = commutator(g, np.full(g.shape, 2.0), b, eps)
    d = b - mollify(g, b, eps)
    ref = 2.0 * (np.roll(d, -1, 0) - np.roll(d, 1, 0)) / (2 * g.hmin)
    assert np.abs(r - ref).max() <= 1e-11


def test_commutator_decay():
    g = Grid.square(128, periodic=True)
    a, b = trig_pair(g)
    h = g.hmin
    n = friedrichs_commutator(g, a, b, [8 * h, 4 * h, 2 * h])
    assert n[0] > n[1] > n[2] and n[2] <= 0.2 * n[0]


def test_commutator_guards():
    g = Grid.square(16)
    with pytest.raises(ValueError):
        commutator(g, np.ones(g.shape), np.ones(g.shape), 0.2)
    gp = Grid.square(16, periodic=True)
    with pytest.raises(ValueError):
        commutator(gp, np.ones(gp.shape), np.ones(gp.shape), 0.1 * gp.hmin)


# ---------------------------------------------------------------------------
# Bogovskii


def test_bump_constant_normalizes():
    R = 0.3
    r = np.linspace(0, R, 200001)
    mid = 0.5 * (r[1:] + r[:-1])
    dr = r[1] - r[0]
    m2 = np.sum(2 * np.pi * mid * (1 - mid**2 / R**2) ** 2) * dr
    m3 = np.sum(4 * np.pi * mid**2 * (1 - mid**2 / R**2) ** 2) * dr
    assert bump_mass_constant(2, R) * m2 == pytest.approx(1.0, rel=1e-8)
    assert bump_mass_constant(3, R) * m3 == pytest.approx(1.0, rel=1e-8)


def test_kernel_radial_integral_against_quadrature():
    rng = np.random.default_rng(0)
    x0, R = np.array([0.5, 0.5]), 0.4
    c = bump_mass_constant(2, R)
    for _ in range(20):
        x, y = rng.random(2), rng.random(2)
        z = x - y
        dist = np.linalg.norm(z)
        e = z / dist
        s = np.linspace(dist, 2.0, 400001)
        p = y + s[:, None] * e - x0
        om = np.where(np.sum(p * p, 1) < R**2, c * (1 - np.sum(p * p, 1) / R**2) ** 2, 0.0)
        f = om * s
        rad = np.sum(0.5 * (f[1:] + f[:-1])) * (s[1] - s[0])
        ref = z / dist**2 * rad
        assert np.allclose(kernel(x, y, x0, R), ref, atol=1e-8)


def test_bogovskii_small_grid_properties():
    g = Grid.square(12)
    op = BogovskiiOp(g)
    assert not np.any(op.apply(np.zeros(g.shape)))
    f = smooth_zero_mean_corpus(g, size=4)[1]
    psi = op.apply(f)
    assert not np.any(psi[g.boundary_cells()])
    r = div(g, psi) - f
    # the residual is exactly the part of f outside the range of div_h
    assert np.allclose(r, op.range_projection(f) - f, atol=1e-12)
    with pytest.raises(ValueError):
        op.apply(f + 1.0)


def test_bogovskii_sine_and_norm_audit():
    g = Grid.square(64)
    op = bogovskii_op(g)
    X, Y = g.centers()
    f = np.sin(2 * np.pi * X)
    f -= f.mean()
    assert bogovskii_error(g, f, op) <= 0.02
    ratios = []
    for f in smooth_zero_mean_corpus(g):
        psi = op.apply(f)
        J = np.stack([grad(g, psi[..., i]) for i in range(2)], axis=-2)
        ratios.append(lebesgue_norm(g, magnitude(g, J), 2) / lebesgue_norm(g, f, 2))
    assert max(ratios) <= 5.0


# ---------------------------------------------------------------------------
# pressure test function


def test_pressure_test_function_constant_density():
    g = Grid.square(8)
    assert not np.any(pressure_test_function(g, np.full(g.shape, 1.3), 2.0, 1.5))


def test_pressure_pairing_oracle_and_sign():
    g = Grid.square(8)
    rng = np.random.default_rng(2)
    rho = 0.5 + rng.random(g.shape)
    r, gam = 2.0, 1.5
    psi = pressure_test_function(g, rho, r, gam)
    pair = pressure_pairing(g, rho, psi, gam)
    f = rho ** (gam / (r - 1))
    f = f - f.mean()
    Pf = bogovskii_op(g).range_projection(f)
    ref = np.sum(rho**gam * Pf) * g.cell_volume
    assert pair == pytest.approx(ref, rel=1e-8)
    assert pair > 0


# ---------------------------------------------------------------------------
# weak residuals, defect terms, renormalization


def test_weak_residual_constant_state():
    p = constant_level()
    rho, u, _ = solve_level(p)
    w = weak_solution_residual(p, rho, u, default_battery(p.grid))
    assert w["total"] <= 1e-12


def test_defect_terms_identical_states():
    p = energy_level(16)
    rho, u, _ = solve_level(p)
    d = defect_terms(p, (rho, u), (rho, u))
    assert all(v == 0 for v in d.values())


def test_transport_term_unit_test_function():
    g = Grid.square(16)
    rho = 1 + np.random.default_rng(3).random(g.shape)
    u = cellular_flow(g)
    val = transport_term(g, rho, u, 1.5, np.ones(g.shape))
    assert val == pytest.approx(np.sum(rho**1.5 * div(g, u)) * g.cell_volume, rel=1e-13)


def test_renorm_square_refinement():
    vals = []
    for n in (16, 32, 64):
        g = Grid.square(n)
        X, Y = g.centers()
        u = cellular_flow(g)
        rho = solve_transport(TransportProblem(g, eps=1e-2, v=u, eta=1e-3, M=1.0))
        phi = np.exp(-((X - 0.5) ** 2 + (Y - 0.4) ** 2) / 0.05)
        vals.append(abs(renorm_residual(g, rho, u, "square", phi)))
    assert vals[0] > vals[1] > vals[2]


def test_level_diagnostics_record():
    p = energy_level(16)
    rho, u, _ = solve_level(p)
    rec = level_diagnostics(p, rho, u)
    assert isinstance(rec, DiagnosticsRecord) and rec.finite()
    rows = rec.rows(0, p)
    assert len(rows) == len(rec.flat())
    assert "Lq1" in rec.eps_gradient_norms


# ---------------------------------------------------------------------------
# eps scaling


def test_scaling_degenerate_for_constant_data():
    res = epsilon_scaling_study(constant_level(12), [1e-1, 3e-2, 1e-2, 3e-3])
    assert res.degenerate and res.slope is None


def test_scaling_needs_four_values():
    with pytest.raises(ValueError):
        epsilon_scaling_study(constant_level(12), [1e-1, 1e-2, 1e-3])


@given(st.floats(-3, 3), st.floats(0.01, 10))
def test_fit_slope_recovers_power(k, c):
    eps = np.array([1e-1, 3e-2, 1e-2, 3e-3])
    assert fit_slope(eps, c * eps**k) == pytest.approx(k, abs=1e-9)
