"""Diagnostics evaluated on converged level states.

Every integral below is the quadrature the solvers themselves use: corner
samples for velocity gradients, face differences for density gradients,
cell midpoints for everything else.  All functions are pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math
import warnings

import numpy as np

from .bogovskii import BogovskiiOp, bogovskii_apply, bogovskii_op
from .constitutive import admissible, dual_exponents, frob
from .continuity import renorm_residual, upwind_operator
from .fields import Grid, face_diff, grad, integral, lebesgue_norm, magnitude, mollify
from .momentum import convective_term, corner_ops, eps_coupling_term

log = logging.getLogger(__name__)

__all__ = [
    "BogovskiiOp", "DiagnosticsRecord", "ScalingResult", "bogovskii_apply",
    "default_battery", "defect_terms", "energy_identity_residual", "epsilon_scaling_study",
    "friedrichs_commutator", "level_diagnostics", "pressure_pairing",
    "pressure_test_function", "renorm_diagnostics", "weak_solution_residual",
]


# ---------------------------------------------------------------------------
# Pressure test function
# ---------------------------------------------------------------------------


def pressure_test_function(grid: Grid, rho: np.ndarray, r: float, gamma: float) -> np.ndarray:
    """B(rho^theta - mean rho^theta) with theta = gamma/(r-1)."""
    if (np.asarray(rho) < 0).any():
        raise ValueError("density must be nonnegative")
    f = rho ** (gamma / (r - 1.0))
    f = f - integral(grid, f) / grid.volume
    if np.abs(f).max() <= 1e-14 * max(1.0, float(np.abs(rho).max())):
        return np.zeros(grid.shape + (grid.d,))
    # the mean was removed in floating point; skip the strict zero-mean check
    return bogovskii_op(grid).apply(f, check_mean=False)


def pressure_pairing(grid: Grid, rho: np.ndarray, psi: np.ndarray, gamma: float) -> float:
    """<rho^gamma, div_h psi>, equal to -<grad_h rho^gamma, psi> for ring-free psi."""
    from .fields import div
    return float(np.sum(rho**gamma * div(grid, psi)) * grid.cell_volume)


# ---------------------------------------------------------------------------
# Friedrichs commutator
# ---------------------------------------------------------------------------


def _periodic_dx(grid: Grid, f: np.ndarray, axis: int) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * grid.h[axis])


def commutator(grid: Grid, a: np.ndarray, b: np.ndarray, eps: float, axis: int = 0) -> np.ndarray:
    """r_eps(a, b) = d_i(a_eps b) - d_i((a b)_eps) on a periodic grid."""
    if not grid.periodic:
        raise ValueError("commutator study runs on a periodic grid")
    if eps < grid.hmin:
        raise ValueError("eps below the grid spacing cannot be resolved by the mollifier")
    a_e = mollify(grid, a, eps)
    ab_e = mollify(grid, a * b, eps)
    return _periodic_dx(grid, a_e * b, axis) - _periodic_dx(grid, ab_e, axis)


def friedrichs_commutator(grid: Grid, a: np.ndarray, b: np.ndarray, eps_list,
                          s: float = 2.0, axis: int = 0) -> list[float]:
    """||r_eps(a, b)||_{L^s} for each eps (descending)."""
    eps_list = list(eps_list)
    if any(e2 > e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be descending")
    return [lebesgue_norm(grid, commutator(grid, a, b, e, axis), s) for e in eps_list]


# ---------------------------------------------------------------------------
# Energy identity
# ---------------------------------------------------------------------------


def _face_grad_sq(grid: Grid, f: np.ndarray) -> float:
    return float(sum(np.sum((face_diff(grid, f, ax) / h) ** 2) for ax, h in enumerate(grid.h))
                 * grid.cell_volume)


def stress_work(grid: Grid, stress, u: np.ndarray) -> float:
    """int S(Du):Du at the corner samples."""
    ops = corner_ops(grid)
    J = ops.jacobian_of_field(u)
    D = 0.5 * (J + np.swapaxes(J, -1, -2))
    return float(np.sum(stress.stress(D) * D) * ops.weight)


def energy_identity_residual(rho: np.ndarray, u: np.ndarray, p, form: str = "standard"):
    """Both sides of the level energy balance and their relative mismatch.

    ``form="standard"`` uses gamma eta a/(gamma-1) on int rho^gamma;
    ``form="half"`` uses half that coefficient (kept for comparison only,
    the constant state does not satisfy it).
    """
    grid = p.grid
    ph = p.physical
    gam, a = ph.gamma, ph.a
    vol = grid.cell_volume
    coef = gam * p.eta * a / (gam - 1.0)
    if form == "half":
        c_lhs = 0.5 * coef
    elif form == "standard":
        c_lhs = coef
    else:
        raise ValueError(f"unknown form {form!r}")
    ops = corner_ops(grid)
    J = ops.jacobian_of_field(u)
    lhs = {
        "stress_work": stress_work(grid, p.stress, u),
        "density_gradient": 4.0 * p.eps * a / gam * _face_grad_sq(grid, rho ** (gam / 2.0)),
        "damping": float(p.alpha * np.sum(frob(J) ** p.q) * ops.weight),
        "pressure_relaxation": float(c_lhs * np.sum(rho**gam) * vol),
        "kinetic_relaxation": float(p.eta * ph.M / grid.volume * 0.5 * np.sum(u * u) * vol),
    }
    rhs = {
        "mass_source": float(coef * ph.M / grid.volume * np.sum(rho ** (gam - 1.0)) * vol),
        "forcing": float(np.sum((rho[..., None] * ph.f + ph.g) * u) * vol),
    }
    L, R = sum(lhs.values()), sum(rhs.values())
    rel = abs(L - R) / max(abs(L), abs(R), 1e-30)
    return lhs, rhs, rel


# ---------------------------------------------------------------------------
# Weak residuals and renormalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestBattery:
    """Nonnegative scalar tests phi and ring-free vector tests psi."""

    phis: tuple
    psis: tuple


def default_battery(grid: Grid) -> TestBattery:
    X = np.meshgrid(*grid.axes(), indexing="ij")
    L = grid.lengths
    s = [np.sin(np.pi * (X[k] - grid.origin[k]) / L[k]) for k in range(grid.d)]
    c = [np.cos(np.pi * (X[k] - grid.origin[k]) / L[k]) for k in range(grid.d)]
    bub = np.prod(s, axis=0)
    phis = (np.ones(grid.shape), 1.0 + 0.5 * c[0] * c[-1], bub**2, 1.0 - 0.5 * s[0])
    ring = grid.boundary_cells()
    psis = []
    for k in range(grid.d):
        for mod in (np.ones(grid.shape), c[0], c[-1] * s[0]):
            psi = np.zeros(grid.shape + (grid.d,))
            psi[..., k] = bub * mod
            psi[ring] = 0.0
            psis.append(psi)
    return TestBattery(tuple(phis), tuple(psis))


def weak_continuity_residual(grid: Grid, rho: np.ndarray, u: np.ndarray, phi: np.ndarray) -> float:
    """<div_up(rho u), phi>, the discrete form of -int rho u . grad phi."""
    C = upwind_operator(grid, u)
    return float((C @ rho.ravel()) @ phi.ravel() * grid.cell_volume)


def weak_momentum_residual(grid: Grid, rho: np.ndarray, u: np.ndarray, stress, pressure,
                           f: np.ndarray, g: np.ndarray, psi: np.ndarray) -> float:
    """int S(Du):D psi - int rho u (x) u : grad psi - int p div psi - int (rho f + g) . psi."""
    ops = corner_ops(grid)
    J = ops.jacobian_of_field(u)
    D = 0.5 * (J + np.swapaxes(J, -1, -2))
    Jp = ops.jacobian_of_field(psi)
    Dp = 0.5 * (Jp + np.swapaxes(Jp, -1, -2))
    vol = grid.cell_volume
    t_visc = np.sum(stress.stress(D) * Dp) * ops.weight
    t_conv = np.sum(convective_term(grid, rho, u, u) * psi) * vol
    t_pres = np.sum(grad(grid, pressure(rho)) * psi) * vol
    t_force = np.sum((rho[..., None] * f + g) * psi) * vol
    return float(t_visc + t_conv + t_pres - t_force)


def weak_solution_residual(p, rho: np.ndarray, u: np.ndarray,
                           battery: TestBattery | None = None) -> dict:
    """Max-over-battery weak residuals of the limit system at a level state."""
    grid = p.grid
    battery = battery or default_battery(grid)
    ph = p.physical
    rc = [abs(weak_continuity_residual(grid, rho, u, phi)) for phi in battery.phis]
    rm = [abs(weak_momentum_residual(grid, rho, u, p.stress, ph.pressure, ph.f, ph.g, psi))
          for psi in battery.psis]
    return {"continuity": max(rc), "momentum": max(rm), "total": max(rc) + max(rm)}


RENORM_FAMILIES = ("linear", "square", ("power", 1.5))


def renorm_diagnostics(grid: Grid, rho: np.ndarray, u: np.ndarray,
                       battery: TestBattery | None = None) -> dict:
    """Max-over-battery renormalized continuity residual per family b."""
    battery = battery or default_battery(grid)
    out = {}
    for fam in RENORM_FAMILIES:
        name = fam if isinstance(fam, str) else f"{fam[0]}_{fam[1]}"
        out[name] = max(abs(renorm_residual(grid, rho, u, fam, phi)) for phi in battery.phis)
    return out


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsRecord:
    energy_lhs_terms: dict = field(default_factory=dict)
    energy_rhs_terms: dict = field(default_factory=dict)
    energy_residual: float = math.nan
    renorm_residuals: dict = field(default_factory=dict)
    eps_gradient_norms: dict = field(default_factory=dict)
    defect_terms: dict = field(default_factory=dict)
    weak_residuals: dict = field(default_factory=dict)
    norms: dict = field(default_factory=dict)

    def flat(self) -> dict:
        out = {}
        for group in ("energy_lhs_terms", "energy_rhs_terms", "renorm_residuals",
                      "eps_gradient_norms", "defect_terms", "weak_residuals", "norms"):
            for k, v in getattr(self, group).items():
                out[f"{group}.{k}"] = float(v)
        out["energy_residual"] = float(self.energy_residual)
        return out

    def finite(self) -> bool:
        return all(np.isfinite(v) for v in self.flat().values())

    def rows(self, rung_id: int, level) -> list[tuple]:
        """CSV rows: rung_id, eps, alpha, delta, eta, name, value."""
        return [(rung_id, level.eps, level.alpha, level.delta, level.eta, k, v)
                for k, v in self.flat().items()]


CSV_HEADER = ("rung_id", "eps", "alpha", "delta", "eta", "name", "value")


def density_gradient_norm(grid: Grid, rho: np.ndarray, p: float = 2.0) -> float:
    """||grad rho||_{L^p} with the cell-centered gradient."""
    return lebesgue_norm(grid, magnitude(grid, grad(grid, rho)), p)


def level_diagnostics(p, rho: np.ndarray, u: np.ndarray, battery: TestBattery | None = None,
                      eta1: float = 0.05) -> DiagnosticsRecord:
    grid = p.grid
    ph = p.physical
    rec = DiagnosticsRecord()
    lhs, rhs, rel = energy_identity_residual(rho, u, p)
    rec.energy_lhs_terms, rec.energy_rhs_terms, rec.energy_residual = lhs, rhs, rel
    battery = battery or default_battery(grid)
    rec.renorm_residuals = renorm_diagnostics(grid, rho, u, battery)
    rec.weak_residuals = weak_solution_residual(p, rho, u, battery)
    rec.eps_gradient_norms = {"L2": p.eps * density_gradient_norm(grid, rho, 2.0)}
    if p.hb is None and grid.d in (2, 3) and admissible(grid.d, ph.r, ph.gamma).admissible:
        q1, _ = dual_exponents(grid.d, ph.r, ph.gamma)
        pq = max(q1 - eta1, 1.0)
        rec.eps_gradient_norms["Lq1"] = p.eps * density_gradient_norm(grid, rho, pq)
        rec.eps_gradient_norms["q1_exponent"] = pq
    rg = ph.r * ph.gamma / (ph.r - 1.0)
    rec.norms = {
        "stress_work": lhs["stress_work"],
        "rho_L_rgamma": lebesgue_norm(grid, rho, rg),
        "eps_grad_rho_Lq": p.eps * density_gradient_norm(grid, rho, p.q),
        "mass": integral(grid, rho),
        "min_rho": float(rho.min()),
        "u_L2": lebesgue_norm(grid, magnitude(grid, u), 2.0),
    }
    return rec


# ---------------------------------------------------------------------------
# Defect terms between two rung states
# ---------------------------------------------------------------------------


def _at_samples(grid: Grid, phi: np.ndarray) -> np.ndarray:
    """Cell field averaged over each lattice cube, repeated for its 2^d samples."""
    d = grid.d
    acc = 0.0
    for corner in np.ndindex(*(2,) * d):
        sl = tuple(slice(c, n - 1 + c) for c, n in zip(corner, grid.shape))
        acc = acc + phi[sl]
    cube = (acc / 2**d).ravel()
    return np.tile(cube, 2**d)


def _stress_density(grid: Grid, stress, u: np.ndarray) -> np.ndarray:
    ops = corner_ops(grid)
    J = ops.jacobian_of_field(u)
    D = 0.5 * (J + np.swapaxes(J, -1, -2))
    return np.sum(stress.stress(D) * D, axis=(-1, -2))


def transport_term(grid: Grid, rho: np.ndarray, u: np.ndarray, gamma: float, phi: np.ndarray) -> float:
    """-(1/(gamma-1)) int rho^gamma u . grad phi + int rho^gamma div u phi."""
    from .fields import div
    rg = rho**gamma
    vol = grid.cell_volume
    a = -np.sum(rg[..., None] * u * grad(grid, phi)) * vol / (gamma - 1.0)
    b = np.sum(rg * div(grid, u) * phi) * vol
    return float(a + b)


def defect_terms(p, coarse: tuple, fine: tuple, battery: TestBattery | None = None) -> dict:
    """T1(phi) = int S(Du_c):Du_c phi - int S(Du_f):Du_f phi and the transport-term
    difference, per test function phi.  ``coarse``/``fine`` are (rho, u)."""
    grid = p.grid
    battery = battery or default_battery(grid)
    ops = corner_ops(grid)
    wc = _stress_density(grid, p.stress, coarse[1])
    wf = _stress_density(grid, p.stress, fine[1])
    out = {}
    for k, phi in enumerate(battery.phis):
        ps = _at_samples(grid, phi)
        out[f"T1_{k}"] = float(np.sum((wc - wf) * ps) * ops.weight)
        tc = transport_term(grid, coarse[0], coarse[1], p.physical.gamma, phi)
        tf = transport_term(grid, fine[0], fine[1], p.physical.gamma, phi)
        out[f"transport_{k}"] = tc - tf
    return out


# ---------------------------------------------------------------------------
# eps scaling
# ---------------------------------------------------------------------------


@dataclass
class ScalingResult:
    slope: float | None
    eps: list
    values: list
    degenerate: bool
    excluded: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def fit_slope(eps, values) -> float:
    return float(np.polyfit(np.log(eps), np.log(values), 1)[0])


def epsilon_scaling_study(base, eps_values, solver_opts: dict | None = None,
                          warm_start: bool = True) -> ScalingResult:
    """Solve the level at each eps (descending) and fit log(eps ||grad rho||_2) vs log eps."""
    from .outer import LevelSolveError, solve_level

    eps_values = sorted(eps_values, reverse=True)
    if len(eps_values) < 4:
        raise ValueError("need at least 4 eps values")
    span = math.log10(eps_values[0] / eps_values[-1])
    if span < 2.0:
        log.warning("eps values span only %.2f decades", span)
    used, vals, excluded, its = [], [], [], []
    u = None
    for eps in eps_values:
        lev = replace(base, eps=eps)
        try:
            rho, u_new, rep = solve_level(lev, u0=u if warm_start else None, **(solver_opts or {}))
        except LevelSolveError as exc:
            warnings.warn(f"eps = {eps:g} excluded: {exc}")
            excluded.append(eps)
            continue
        u = u_new
        used.append(eps)
        vals.append(eps * density_gradient_norm(base.grid, rho, 2.0))
        its.append(rep.iterations)
    scale = max([abs(v) for v in vals] + [0.0])
    if len(used) < 2 or scale <= 1e-13:
        return ScalingResult(None, used, vals, True, excluded, its)
    return ScalingResult(fit_slope(used, vals), used, vals, False, excluded, its)


# ---------------------------------------------------------------------------
# Bogovskii test corpus
# ---------------------------------------------------------------------------


def smooth_zero_mean_corpus(grid: Grid, size: int = 20, seed: int = 0) -> list[np.ndarray]:
    """Seeded corpus of smooth zero-mean fields.

    Half are sine waves along one axis, modulated along the other; half are
    Gaussian dipoles inside the domain.  Every member is shifted to an exact
    discrete zero mean.
    """
    rng = np.random.default_rng(seed)
    X = grid.centers()
    xi = [(X[k] - grid.origin[k]) / grid.lengths[k] for k in range(grid.d)]
    out = []
    for k in range(size):
        if k < size // 2:
            a = k % 2
            b = 1 - a
            m = int(rng.integers(1, 4))
            l = int(rng.integers(0, 3))
            c1, c2 = rng.uniform(-0.5, 0.5, 2)
            f = np.sin(2 * np.pi * m * xi[a]) * (1 + c1 * np.cos(np.pi * l * xi[b]) + c2 * xi[b] ** 2)
        else:
            c = rng.uniform(0.25, 0.75, (2, grid.d))
            s = rng.uniform(0.08, 0.15)
            r1 = sum((xi[j] - c[0, j]) ** 2 for j in range(grid.d))
            r2 = sum((xi[j] - c[1, j]) ** 2 for j in range(grid.d))
            f = np.exp(-r1 / s**2) - rng.uniform(0.5, 1.5) * np.exp(-r2 / s**2)
        out.append(f - integral(grid, f) / grid.volume)
    return out


def bogovskii_error(grid: Grid, f: np.ndarray, op: BogovskiiOp | None = None) -> float:
    """||div_h B f - f||_2 / ||f||_2."""
    from .fields import div
    op = op or bogovskii_op(grid)
    r = div(grid, op.apply(f)) - f
    return float(np.linalg.norm(r) / np.linalg.norm(f))
