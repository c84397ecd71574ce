"""Fixed-point operator E, the level solver, the continuation ladder and the
Herschel-Bulkley variant.

E(v): solve the regularized continuity equation transported by
w = omega_delta * T_delta(v), assemble F(rho, v), then solve the monotone
momentum problem.  A level solution is a fixed point u = E(u).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math
import time

import numpy as np

from .constitutive import HBRegParams, PowerLawParams, PressureLaw, admissible, frob
from .continuity import TransportProblem, mass_of, solve_transport
from .fields import Grid, mollified_truncation
from .momentum import (FAssemblyInputs, MomentumProblem, assemble_F, corner_ops,
                       solve_momentum)

log = logging.getLogger(__name__)


class LevelSolveError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class Physical:
    """Physical data of the steady problem on a fixed grid."""

    M: float
    gamma: float
    a: float
    r: float
    mu0: float
    lambda0: float
    f: np.ndarray
    g: np.ndarray

    @property
    def pressure(self) -> PressureLaw:
        return PressureLaw(self.a, self.gamma)

    @property
    def power_law(self) -> PowerLawParams:
        return PowerLawParams(self.mu0, self.lambda0, self.r)


@dataclass(frozen=True)
class HBData:
    tau_star: float
    nu: float
    eps_reg: float
    alpha_hb: float
    beta: float
    rho_check: np.ndarray


@dataclass(frozen=True)
class LevelParams:
    grid: Grid
    alpha: float
    delta: float
    eps: float
    eta: float
    q: float
    physical: Physical
    hb: HBData | None = None

    def __post_init__(self):
        d = self.grid.d
        ph = self.physical
        if self.hb is None:
            rep = admissible(d, ph.r, ph.gamma) if d in (2, 3) else None
            if rep is not None and not rep.admissible:
                raise ValueError(f"(d, r, gamma) = ({d}, {ph.r}, {ph.gamma}) is not admissible")
            if not ph.r > d / 2:
                raise ValueError("need r > d/2")
            if not self.eta > 0:
                raise ValueError("eta must be > 0 for the power-law level")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if min(self.alpha, self.delta, self.eta) < 0:
            raise ValueError("alpha, delta, eta must be nonnegative")
        if self.alpha > 0 and not self.q > d:
            raise ValueError("q must exceed d")
        for arr in (ph.f, ph.g):
            self.grid.check(arr, "vector")

    @property
    def stress(self):
        if self.hb is not None:
            return HBRegParams(self.hb.tau_star, self.hb.nu, self.physical.r, self.hb.eps_reg)
        return self.physical.power_law

    def ladder_key(self) -> dict:
        out = {"alpha": self.alpha, "delta": self.delta, "eps": self.eps, "eta": self.eta}
        if self.hb is not None:
            out["eps_reg"] = self.hb.eps_reg
        return out


@dataclass
class LevelReport:
    iterations: int = 0
    converged: bool = False
    status: str = ""
    updates: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    min_rho: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    momentum_iterations: list = field(default_factory=list)
    fixed_point_residual: float = math.nan
    tol: float = 0.0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def w1q_norm(grid: Grid, e: np.ndarray, q: float) -> float:
    """Discrete W^{1,q} norm (cell values plus corner-sampled gradients)."""
    ops = corner_ops(grid)
    J = ops.jacobian_of_field(e)
    lq = np.sum(np.linalg.norm(e.reshape(-1, grid.d), axis=1) ** q) * grid.cell_volume
    gq = np.sum(frob(J) ** q) * ops.weight
    return float((lq + gq) ** (1.0 / q))


def transport_problem(p: LevelParams, v: np.ndarray) -> TransportProblem:
    w = mollified_truncation(p.grid, v, p.delta)
    hb = p.hb
    return TransportProblem(
        p.grid, eps=p.eps, v=w, eta=p.eta,
        alpha=hb.alpha_hb if hb else 0.0,
        M=p.physical.M if p.eta > 0 else None,
        rho_check=hb.rho_check if hb else None,
    )


def apply_E(v: np.ndarray, p: LevelParams, u_guess: np.ndarray | None = None,
            momentum_rtol: float = 1e-11, details: bool = False,
            momentum_method: str = "newton"):
    """One application of the fixed-point map; returns ``(u, rho)``."""
    rho = solve_transport(transport_problem(p, v))
    rho = np.maximum(rho, 0.0)  # clears round-off negatives (|.| < 1e-13)
    ph = p.physical
    F = assemble_F(FAssemblyInputs(p.grid, rho, v, p.delta, p.eta, p.eps, ph.pressure, ph.f, ph.g))
    hb = p.hb
    mp = MomentumProblem(p.grid, p.stress, F, alpha=p.alpha, q=p.q,
                         beta=hb.beta if hb else 0.0, rho=rho)
    u, rep = solve_momentum(mp, u0=u_guess, rtol=momentum_rtol, method=momentum_method)
    if details:
        return u, rho, {"F": F, "momentum": rep}
    return u, rho


def solve_level(p: LevelParams, u0: np.ndarray | None = None, theta: float = 0.5,
                tol: float = 1e-8, max_iter: int = 500, method: str = "anderson",
                depth: int = 8, stall_window: int = 50):
    """Find u = E(u).  Returns ``(rho, u, LevelReport)``.

    ``method="picard"`` is the damped iteration u <- (1-theta) u + theta E(u)
    with theta halved on oscillation.  ``method="anderson"`` mixes the last
    ``depth`` residuals (Anderson acceleration with mixing theta), which
    handles the stiff pressure coupling at small eps.
    """
    t0 = time.perf_counter()
    grid = p.grid
    u = np.zeros(grid.shape + (grid.d,)) if u0 is None else np.array(u0, dtype=float)
    ring = grid.boundary_cells()
    u[ring] = 0.0
    rep = LevelReport(tol=tol)
    hist_u, hist_r = [], []
    best = math.inf
    best_at = 0
    guess = None
    rho = None
    for it in range(max_iter):
        Eu, rho, extra = apply_E(u, p, u_guess=guess, details=True)
        guess = Eu
        rep.masses.append(mass_of(grid, rho))
        rep.min_rho.append(float(rho.min()))
        rep.momentum_iterations.append(extra["momentum"].iterations)
        res = Eu - u
        upd = w1q_norm(grid, res, p.q)
        rep.updates.append(upd)
        rep.thetas.append(theta)
        if upd <= tol:
            rep.converged, rep.status = True, "converged"
            break
        if it == max_iter - 1:
            rep.status = "max_iter"
            break
        if upd < best:
            best, best_at = upd, it
        elif it - best_at >= stall_window:
            rep.status = "stagnation"
            break
        if method == "picard":
            if len(rep.updates) >= 3 and rep.updates[-1] > rep.updates[-2] > rep.updates[-3]:
                theta = max(theta * 0.5, 1e-6)
            u = u + theta * res
        elif method == "anderson":
            x = u.ravel()
            r = res.ravel()
            hist_u.append(x.copy())
            hist_r.append(r.copy())
            if len(hist_u) > depth + 1:
                hist_u.pop(0)
                hist_r.pop(0)
            if len(hist_u) > 1:
                dU = np.diff(np.array(hist_u), axis=0).T
                dR = np.diff(np.array(hist_r), axis=0).T
                coef, *_ = np.linalg.lstsq(dR, r, rcond=None)
                x_new = x + theta * r - (dU + theta * dR) @ coef
            else:
                x_new = x + theta * r
            # restart on blow-up
            if len(rep.updates) > 1 and upd > 10 * min(rep.updates):
                hist_u.clear()
                hist_r.clear()
                x_new = x + theta * r
            u = x_new.reshape(u.shape)
            u[ring] = 0.0
        else:
            raise ValueError(f"unknown method {method!r}")
    rep.iterations = len(rep.updates)
    rep.seconds = time.perf_counter() - t0
    if not rep.converged:
        raise LevelSolveError(f"level solve failed ({rep.status}) after {rep.iterations} "
                              f"iterations; last update {rep.updates[-1]:.3e}", rep)
    # fixed-point residual re-evaluated from scratch (cold momentum start)
    Eu_fresh, _ = apply_E(u, p)
    rep.fixed_point_residual = w1q_norm(grid, Eu_fresh - u, p.q)
    return rho, u, rep


# ---------------------------------------------------------------------------
# Continuation ladder
# ---------------------------------------------------------------------------


@dataclass
class LadderSchedule:
    levels: list
    warm_start: bool = True

    def __post_init__(self):
        if not self.levels:
            raise ValueError("empty schedule")
        keys = ("alpha", "delta", "eps", "eta")
        for a, b in zip(self.levels, self.levels[1:]):
            for k in keys:
                if getattr(b, k) > getattr(a, k) * (1 + 1e-12):
                    raise ValueError(f"ladder parameter {k} increases along the schedule")


def geometric_ladder(base: LevelParams, joint_rungs: int, eps_values, factor: float = 0.1,
                     floor: float = 1e-8) -> LadderSchedule:
    """(alpha, delta, eta) shrink jointly by ``factor`` per rung down to ``floor``,
    then eps descends through ``eps_values`` with the other three at the floor."""
    levels = []
    a, dl, et = base.alpha, base.delta, base.eta
    for _ in range(joint_rungs):
        levels.append(replace(base, alpha=a, delta=dl, eta=et))
        a, dl, et = (max(x * factor, floor) for x in (a, dl, et))
    for eps in eps_values:
        levels.append(replace(base, alpha=floor, delta=floor, eta=floor, eps=eps))
    return LadderSchedule(levels)


@dataclass
class RungResult:
    level: LevelParams
    rho: np.ndarray
    u: np.ndarray
    report: LevelReport
    diagnostics: dict


@dataclass
class LadderResult:
    rungs: list
    completed: bool
    error: str = ""


def run_ladder(s: LadderSchedule, solver_opts: dict | None = None, diagnostics: bool = True,
               test_battery=None) -> LadderResult:
    """Sequential warm-started solves with per-rung diagnostics.

    A failing rung halts the ladder; finished rungs are kept in the result.
    """
    from .analysis import level_diagnostics

    opts = dict(solver_opts or {})
    rungs = []
    u_prev = None
    for k, lev in enumerate(s.levels):
        try:
            rho, u, rep = solve_level(lev, u0=u_prev if s.warm_start else None, **opts)
        except LevelSolveError as exc:
            log.error("rung %d failed: %s", k, exc)
            return LadderResult(rungs, False, f"rung {k}: {exc}")
        diag = level_diagnostics(lev, rho, u, battery=test_battery) if diagnostics else {}
        rungs.append(RungResult(lev, rho, u, rep, diag))
        u_prev = u
    return LadderResult(rungs, True)


# ---------------------------------------------------------------------------
# Herschel-Bulkley
# ---------------------------------------------------------------------------


def hb_stress_split(p: LevelParams, u: np.ndarray) -> dict:
    """Power-law part, plastic part P_eps and total stress at the gradient samples."""
    law = p.stress
    ops = corner_ops(p.grid)
    J = ops.jacobian_of_field(u)
    D = 0.5 * (J + np.swapaxes(J, -1, -2))
    s = frob(D)
    power = (law.nu * np.where(s > 0, s, 1.0) ** (law.r - 2) * (s > 0))[:, None, None] * D
    plastic = law.plastic_part(D)
    return {"Du": D, "power": power, "plastic": plastic, "total": power + plastic}


def solve_hb(p: LevelParams, eps_reg_schedule, solver_opts: dict | None = None, on_rung=None):
    """Run the level solver along a descending eps_reg schedule.

    Returns ``(rho, u, stress, diagnostics)`` for the last entry, where
    ``stress`` is :func:`hb_stress_split` and ``diagnostics`` holds the
    pointwise bound audits of every rung.  ``on_rung(level, rho, u, report,
    audit)`` is called after each rung.
    """
    if p.hb is None:
        raise ValueError("level has no Herschel-Bulkley data")
    if not 1 < p.physical.gamma <= 2:
        raise ValueError("Herschel-Bulkley construction requires gamma in (1, 2]")
    if not p.hb.alpha_hb > 0:
        raise ValueError("alpha_hb must be > 0")
    if (np.asarray(p.hb.rho_check) < 0).any():
        raise ValueError("rho_check must be nonnegative")
    eps_list = list(eps_reg_schedule)
    if any(b > a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_reg schedule must be non-increasing")
    u = None
    audits = []
    rho = stress = None
    tau = p.hb.tau_star
    for er in eps_list:
        lev = replace(p, hb=replace(p.hb, eps_reg=er))
        rho, u, rep = solve_level(lev, u0=u, **(solver_opts or {}))
        stress = hb_stress_split(lev, u)
        pl = frob(stress["plastic"])
        still = frob(stress["Du"]) <= 1e-8
        tot = frob(stress["total"])
        audits.append({
            "eps_reg": er,
            "iterations": rep.iterations,
            "max_plastic": float(pl.max()),
            "plastic_ok": bool(np.all(pl <= tau)),
            "max_total_at_rest": float(tot[still].max()) if still.any() else 0.0,
            "rest_ok": bool(np.all(tot[still] <= tau * (1 + 1e-6))),
            "rest_samples": int(still.sum()),
            "mass": mass_of(p.grid, rho),
            "fixed_point_residual": rep.fixed_point_residual,
        })
        if on_rung is not None:
            on_rung(lev, rho, u, rep, audits[-1])
    prob = transport_problem(lev, u)
    diag = {"audits": audits, "target_mass": prob.target_mass, "mass": mass_of(p.grid, rho)}
    return rho, u, stress, diag
