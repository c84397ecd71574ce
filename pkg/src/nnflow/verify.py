"""Named property suites and the reference setups they run on.

Each suite returns a list of :class:`Check`; ``run_suite`` prints them.
The setup builders are shared with the test-suite and the scripts so a
number reported anywhere comes from one place.
"""
from __future__ import annotations

from dataclasses import dataclass
import time

import numpy as np

from .analysis import (bogovskii_error, bogovskii_op, default_battery, energy_identity_residual,
                       epsilon_scaling_study, friedrichs_commutator, renorm_diagnostics,
                       smooth_zero_mean_corpus)
from .constitutive import HBRegParams, frob, hb_g_eps
from .continuity import TransportProblem, solve_transport
from .fields import Grid
from .outer import HBData, LevelParams, Physical, geometric_ladder, run_ladder, solve_hb, solve_level


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


# ---------------------------------------------------------------------------
# Reference setups
# ---------------------------------------------------------------------------


def manufactured_forcing(grid: Grid, amplitude: float = 1.0) -> np.ndarray:
    """Smooth forcing used by the ladder and scaling studies."""
    X, Y = grid.centers()[:2]
    f = np.zeros(grid.shape + (grid.d,))
    f[..., 0] = 2 * amplitude * np.sin(np.pi * X) * np.sin(2 * np.pi * Y)
    f[..., 1] = amplitude * np.cos(np.pi * X) * np.sin(np.pi * Y)
    return f


def energy_level(n: int, eps: float = 0.1) -> LevelParams:
    g = Grid.square(n)
    X, Y = g.centers()
    f = np.zeros(g.shape + (2,))
    f[..., 0] = np.sin(np.pi * X) * np.sin(np.pi * Y)
    f[..., 1] = 0.5 * np.cos(np.pi * X)
    ph = Physical(M=1.0, gamma=1.5, a=1.0, r=2.0, mu0=1.0, lambda0=0.5, f=f, g=np.zeros_like(f))
    return LevelParams(g, alpha=1e-3, delta=0.1, eps=eps, eta=0.1, q=3.0, physical=ph)


def constant_level(n: int = 16, gamma: float = 1.5, M: float = 2.0) -> LevelParams:
    g = Grid.square(n)
    z = np.zeros(g.shape + (2,))
    ph = Physical(M=M, gamma=gamma, a=1.0, r=2.0, mu0=1.0, lambda0=0.0, f=z, g=z)
    return LevelParams(g, alpha=1e-3, delta=0.1, eps=0.1, eta=0.1, q=3.0, physical=ph)


def scaling_level(gamma: float, n: int = 64) -> LevelParams:
    g = Grid.square(n)
    f = manufactured_forcing(g)
    ph = Physical(M=1.0, gamma=gamma, a=1.0, r=2.0, mu0=1.0, lambda0=0.0, f=f, g=np.zeros_like(f))
    return LevelParams(g, alpha=1e-3, delta=2.0 / n, eps=0.1, eta=1e-2, q=3.0, physical=ph)


SCALING_EPS = (1e-1, 3e-2, 1e-2, 3e-3)


def ladder_base(n: int = 32) -> LevelParams:
    g = Grid.square(n)
    f = manufactured_forcing(g)
    ph = Physical(M=1.0, gamma=1.5, a=1.0, r=2.0, mu0=1.0, lambda0=0.0, f=f, g=np.zeros_like(f))
    return LevelParams(g, alpha=1e-2, delta=0.1, eps=0.1, eta=1e-2, q=3.0, physical=ph)


LADDER_EPS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


def hb_level(n: int = 32, gamma: float = 1.5) -> LevelParams:
    g = Grid.square(n)
    X, Y = g.centers()
    f = np.zeros(g.shape + (2,))
    f[..., 0] = 3 * np.sin(np.pi * X) * np.sin(np.pi * Y)
    ph = Physical(M=1.0, gamma=gamma, a=1.0, r=2.0, mu0=1.0, lambda0=0.0, f=f, g=np.zeros_like(f))
    hb = HBData(tau_star=0.5, nu=1.0, eps_reg=1e-1, alpha_hb=1.0, beta=0.0,
                rho_check=1 + 0.2 * np.cos(np.pi * X))
    return LevelParams(g, alpha=1e-3, delta=0.1, eps=0.05, eta=0.0, q=3.0, physical=ph, hb=hb)


HB_EPS_REG = (1e-1, 1e-2, 1e-3)


def cellular_flow(grid: Grid, drift: float = 0.3) -> np.ndarray:
    """Smooth transport field, zero on the ring, mostly divergence free."""
    X, Y = grid.centers()
    u = np.zeros(grid.shape + (2,))
    u[..., 0] = np.sin(np.pi * X) ** 2 * np.sin(2 * np.pi * Y)
    u[..., 1] = -np.sin(2 * np.pi * X) * np.sin(np.pi * Y) ** 2
    u[..., 1] += drift * np.sin(np.pi * X) ** 2 * np.sin(np.pi * Y) ** 2
    u[grid.boundary_cells()] = 0.0
    return u


def trig_pair(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    X, Y = grid.centers()
    a = np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y) + 0.3 * np.cos(4 * np.pi * Y)
    b = np.cos(2 * np.pi * X + 1) + np.sin(2 * np.pi * Y)
    return a, b


def _decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


def _fmt(xs) -> str:
    return "[" + ", ".join(f"{x:.3g}" for x in xs) + "]"


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def suite_hb_bounds(samples: int = 1000, matrices: int = 10_000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for eps in (1.0, 0.1, 0.01):
        s = np.sort(np.concatenate([rng.uniform(0, 5 * eps, samples // 2),
                                    rng.uniform(0, 100 * eps, samples - samples // 2)]))
        g = hb_g_eps(s, eps)
        cap = np.minimum(1.0 / eps, np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), np.inf))
        out.append(Check(f"g_eps <= min(1/eps, 1/s), eps={eps:g}", bool(np.all(g <= cap)),
                         f"max excess {np.max(g - cap):.3g}"))
        out.append(Check(f"g_eps non-increasing, eps={eps:g}", bool(np.all(np.diff(g) <= 0))))
        ds = 1e-6 * eps
        fd = (hb_g_eps(s + ds, eps) - hb_g_eps(s, eps)) / ds
        bound = -4.0 / (9.0 * eps**2) * (1 + 1e-6)
        out.append(Check(f"g_eps slope >= -4/(9 eps^2), eps={eps:g}", bool(fd.min() >= bound),
                         f"min slope {fd.min():.6g} vs {bound:.6g}"))
        A = rng.uniform(-10, 10, (matrices, 2, 2)) * rng.choice([1e-3, 1e-1, 1.0], (matrices, 1, 1))
        A = 0.5 * (A + np.swapaxes(A, -1, -2))
        law = HBRegParams(tau_star=0.7, nu=1.0, r=2.0, eps_reg=eps)
        pn = frob(law.plastic_part(A))
        out.append(Check(f"|P_eps(A)| <= tau, eps={eps:g}", bool(np.all(pn <= 0.7)),
                         f"max {pn.max():.17g}"))
    return out


def suite_bogovskii(n: int = 64, tol: float = 0.02) -> list[Check]:
    g = Grid.square(n)
    op = bogovskii_op(g)
    t0 = time.perf_counter()
    corpus = smooth_zero_mean_corpus(g)
    errs = [bogovskii_error(g, f, op) for f in corpus]
    out = [Check(f"||div B f - f|| / ||f|| <= {tol:g} on {len(corpus)} fields", max(errs) <= tol,
                 f"max {max(errs):.3g}, mean {np.mean(errs):.3g}")]
    f1, f2 = corpus[0], corpus[-1]
    lin = op.apply(2.0 * f1 - 3.0 * f2) - (2.0 * op.apply(f1) - 3.0 * op.apply(f2))
    scale = np.abs(op.apply(f1)).max() + np.abs(op.apply(f2)).max()
    out.append(Check("linearity", float(np.abs(lin).max()) <= 1e-12 * max(scale, 1.0),
                     f"{np.abs(lin).max():.2g}"))
    out.append(Check("B 0 = 0", not np.any(op.apply(np.zeros(g.shape)))))
    psi = op.apply(f1)
    out.append(Check("boundary ring is zero", not np.any(psi[g.boundary_cells()])))
    # corner-heavy fields reach the structural floor of the centered divergence
    X, Y = g.centers()
    fc = np.cos(np.pi * X) * np.cos(np.pi * Y)
    fc -= fc.mean()
    out.append(Check("corner-loaded cos(pi x) cos(pi y) (informational)", True,
                     f"relative error {bogovskii_error(g, fc, op):.3g}"))
    out.append(Check("suite time", True, f"{time.perf_counter() - t0:.1f} s"))
    return out


def suite_friedrichs(n: int = 128) -> list[Check]:
    g = Grid.square(n, periodic=True)
    a, b = trig_pair(g)
    h = g.hmin
    norms = friedrichs_commutator(g, a, b, [8 * h, 4 * h, 2 * h])
    out = [Check("||r_eps|| decreasing over eps = 8h, 4h, 2h", _decreasing(norms), _fmt(norms)),
           Check("final <= 0.2 initial", norms[-1] <= 0.2 * norms[0],
                 f"ratio {norms[-1] / norms[0]:.3g}")]
    zero = friedrichs_commutator(g, a, np.full_like(a, 2.0), [4 * h])[0]
    out.append(Check("constant b gives zero commutator", zero <= 1e-12, f"{zero:.2g}"))
    return out


def suite_renorm(n: int = 64, eps_values=(1e-1, 3e-2, 1e-2, 3e-3)) -> list[Check]:
    g = Grid.square(n)
    u = cellular_flow(g)
    battery = default_battery(g)
    hist: dict[str, list] = {}
    for eps in eps_values:
        rho = solve_transport(TransportProblem(g, eps=eps, v=u, eta=1e-3, M=1.0))
        for k, v in renorm_diagnostics(g, rho, u, battery).items():
            hist.setdefault(k, []).append(v)
    return [Check(f"renormalized residual decreasing in eps, b={k}", _decreasing(v), _fmt(v))
            for k, v in hist.items()]


def energy_refinement(ns=(32, 64)) -> list[float]:
    out = []
    for n in ns:
        p = energy_level(n)
        rho, u, _ = solve_level(p)
        out.append(energy_identity_residual(rho, u, p)[2])
    return out


def suite_energy() -> list[Check]:
    p = constant_level()
    rho, u, rep = solve_level(p)
    rel = energy_identity_residual(rho, u, p)[2]
    out = [Check("constant state residual <= 1e-12", rel <= 1e-12, f"{rel:.2g}")]
    r32, r64 = energy_refinement()
    out.append(Check("residual(64) <= 0.6 residual(32)", r64 <= 0.6 * r32,
                     f"{r32:.3g} -> {r64:.3g} (ratio {r64 / r32:.3g})"))
    return out


def suite_scaling(n: int = 64, min_slope: float = 0.4) -> list[Check]:
    out = []
    for gamma in (1.5, 2.5):
        res = epsilon_scaling_study(scaling_level(gamma, n), SCALING_EPS)
        ok = res.slope is not None and res.slope >= min_slope and not res.excluded
        out.append(Check(f"slope of eps ||grad rho|| vs eps >= {min_slope}, gamma={gamma}", ok,
                         f"slope {res.slope}, values {_fmt(res.values)}"))
    return out


def suite_ladder(n: int = 32) -> list[Check]:
    res = run_ladder(geometric_ladder(ladder_base(n), 3, LADDER_EPS))
    out = [Check("ladder completes", res.completed, res.error)]
    if res.completed:
        w = [r.diagnostics.weak_residuals["total"] for r in res.rungs[-3:]]
        out.append(Check("weak residual decreasing over last three eps rungs", _decreasing(w), _fmt(w)))
    return out


def suite_hb_run(n: int = 32) -> list[Check]:
    p = hb_level(n)
    rho, u, stress, diag = solve_hb(p, HB_EPS_REG)
    last = diag["audits"][-1]
    return [
        Check("|P part| <= tau*", all(a["plastic_ok"] for a in diag["audits"]),
              f"max {last['max_plastic']:.17g}"),
        Check("|S_total| <= tau*(1+1e-6) where |Du| <= 1e-8", all(a["rest_ok"] for a in diag["audits"]),
              f"max {last['max_total_at_rest']:.3g} over {last['rest_samples']} samples"),
        Check("mixed-branch mass rule", abs(diag["mass"] - diag["target_mass"]) <= 1e-10,
              f"|defect| {abs(diag['mass'] - diag['target_mass']):.2g}"),
    ]


SUITES = {
    "hb-bounds": suite_hb_bounds,
    "bogovskii": suite_bogovskii,
    "friedrichs": suite_friedrichs,
    "renorm": suite_renorm,
    "energy": suite_energy,
    "scaling": suite_scaling,
    "ladder": suite_ladder,
    "hb-run": suite_hb_run,
}


def run_suite(name: str, echo=print) -> bool:
    names = list(SUITES) if name == "all" else [name]
    ok = True
    for nm in names:
        t0 = time.perf_counter()
        checks = SUITES[nm]()
        for c in checks:
            echo(f"[{nm}] {c.line()}")
            ok &= c.passed
        echo(f"[{nm}] done in {time.perf_counter() - t0:.1f} s")
    return ok
