"""Acceptance criteria, one test each.

Every test stores a one-line verdict in ``RESULTS``; conftest prints them at the
end of the session.  ``python tests/test_acceptance.py`` runs them standalone.
"""
import time

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from nnflow.constitutive import HBRegParams, PowerLawParams, frob
from nnflow.continuity import TransportProblem, mass_of, solve_transport
from nnflow.fields import Grid, lebesgue_norm, magnitude
from nnflow.momentum import MomentumProblem, solve_momentum
from nnflow.outer import geometric_ladder, run_ladder, solve_level
from nnflow.verify import (energy_refinement, ladder_base, suite_bogovskii, suite_energy,
                           suite_friedrichs, suite_hb_bounds, suite_hb_run, suite_ladder,
                           suite_scaling)

from test_continuity import dense_transport, random_field
from test_momentum import restrict, sample_operator, smooth_F, to_field
from test_outer import level

RESULTS: dict[int, str] = {}


def _record(k, title, passed, detail, seconds):
    RESULTS[k] = f"[{'PASS' if passed else 'FAIL'}] {k:>2}. {title}: {detail} ({seconds:.1f} s)"
    return passed


def _from_checks(checks):
    ok = all(c.passed for c in checks)
    return ok, "; ".join(f"{c.name}: {c.detail}" if c.detail else c.name for c in checks)


# ---------------------------------------------------------------------------


def _sym_batch(rng, n, d):
    A = rng.normal(size=(n, d, d)) * rng.choice([1e-3, 1e-1, 1.0, 10.0], (n, 1, 1))
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def criterion_1():
    rng = np.random.default_rng(1)
    n = 10_000
    laws = [PowerLawParams(1.0, 0.0, 2.0), PowerLawParams(1.0, 0.5, 1.5),
            PowerLawParams(0.7, 1.0, 3.0), PowerLawParams(2.0, 0.3, 4.5)]
    bad, notes = [], []
    for d in (2, 3):
        for p in laws:
            A, B = _sym_batch(rng, n, d), _sym_batch(rng, n, d)
            SA = p.stress(A)
            mono = np.sum((SA - p.stress(B)) * (A - B), axis=(-1, -2))
            if mono.min() < 0:
                bad.append(f"monotonicity r={p.r} d={d}")
            s = frob(A)
            C1, C2 = p.growth_constants(d)
            up = frob(SA) / (C1 * s ** (p.r - 1))
            low = np.sum(SA * A, axis=(-1, -2)) / (C2 * s**p.r)
            if p.lambda0 > 0:
                # strict on both sides away from trace-free A
                if up.max() > 1.0:
                    bad.append(f"upper bound r={p.r} d={d}")
            elif np.abs(up - 1).max() > 1e-13:
                bad.append(f"upper equality r={p.r} d={d}")
            if low.min() < 1.0 - 1e-13:
                bad.append(f"lower bound r={p.r} d={d}")
            notes.append(up.max())
        hb = HBRegParams(tau_star=0.5, nu=1.0, r=2.0, eps_reg=0.01)
        A, B = _sym_batch(rng, n, d), _sym_batch(rng, n, d)
        if np.sum((hb.stress(A) - hb.stress(B)) * (A - B), axis=(-1, -2)).min() < 0:
            bad.append(f"monotonicity HB d={d}")
    detail = "all models" if not bad else ", ".join(bad)
    return not bad, f"{detail}; max |S|/(C1 |A|^(r-1)) = {max(notes):.15g}"


def criterion_2():
    return _from_checks(suite_hb_bounds())


def criterion_3():
    g = Grid.square(32)
    rng = np.random.default_rng(3)
    worst_min, worst_mass = np.inf, 0.0
    for seed in range(100):
        eps, eta, M = 10 ** rng.uniform(-3, 0), 10 ** rng.uniform(-4, 0), rng.uniform(0.1, 5)
        v = random_field(g, seed, scale=10 ** rng.uniform(-1, 1))
        rho = solve_transport(TransportProblem(g, eps=eps, v=v, eta=eta, M=M))
        worst_min = min(worst_min, rho.min())
        worst_mass = max(worst_mass, abs(mass_of(g, rho) - M))
    g8 = Grid.square(8)
    err = 0.0
    for seed in range(10):
        v = random_field(g8, seed, scale=3.0)
        rho = solve_transport(TransportProblem(g8, eps=0.05, v=v, eta=0.2, M=1.5))
        err = max(err, np.abs(rho - dense_transport(g8, 0.05, v, 0.2, 1.5)).max())
    ok = worst_min >= -1e-13 and worst_mass <= 1e-10 and err <= 1e-10
    return ok, f"min rho {worst_min:.3g}, mass defect {worst_mass:.2g}, 8x8 oracle {err:.2g}"


def criterion_4():
    # Newtonian: sparse direct solve of the assembled quadratic form
    g = Grid.square(16)
    F = smooth_F(g)
    L, interior = sample_operator(g)
    D = 0.5 * (L + np.swapaxes(L, 1, 2))
    Ds = sp.csr_matrix(D.reshape(-1, D.shape[-1]))
    K = (g.cell_volume / 4) * (Ds.T @ Ds)
    ref = to_field(g, spla.spsolve(K.tocsc(), g.cell_volume * restrict(F, interior)), interior)
    u, _ = solve_momentum(MomentumProblem(g, PowerLawParams(1, 0, 2), F), rtol=1e-13)
    e_newt = np.abs(u - ref).max()

    # r = 3: direct minimization of the discrete energy
    F3 = smooth_F(g, 5.0)
    w = g.cell_volume / 4
    Fx = g.cell_volume * restrict(F3, interior)

    def phi(x):
        Dx = np.einsum("sikn,n->sik", D, x)
        s = np.sqrt(np.sum(Dx * Dx, axis=(1, 2)))
        return (w * np.sum(s**3) / 3 - Fx @ x,
                w * np.einsum("sik,sikn->n", s[:, None, None] * Dx, D) - Fx)

    res = minimize(phi, np.zeros(Fx.size), jac=True, method="L-BFGS-B",
                   options={"maxiter": 20000, "gtol": 1e-14, "ftol": 1e-16, "maxcor": 50})
    u3, _ = solve_momentum(MomentumProblem(g, PowerLawParams(1, 0, 3), F3), rtol=1e-12)
    e_cubic = lebesgue_norm(g, magnitude(g, u3 - to_field(g, res.x, interior)))

    drops = []
    for r, lam in ((1.5, 0.0), (2.0, 0.5), (3.0, 1.0), (4.0, 0.0)):
        p = MomentumProblem(g, PowerLawParams(1.0, lam, r), smooth_F(g, 3.0), alpha=1e-2, q=3.0)
        _, rep = solve_momentum(p, method="kacanov", rtol=1e-10)
        drops.append(max(rep.energy_drops) if rep.energy_drops else 0.0)
    ok = e_newt <= 1e-10 and e_cubic <= 1e-6 and all(d < 0 for d in drops)
    return ok, (f"Newtonian {e_newt:.2g}, r=3 L2 {e_cubic:.2g}, "
                f"largest Kacanov energy change {max(drops):.2g}")


def criterion_5():
    _, _, triv = solve_level(level(M=2.0))
    res = run_ladder(geometric_ladder(ladder_base(32), 3, []), {"tol": 1e-8, "max_iter": 500},
                     diagnostics=False)
    its = [r.report.iterations for r in res.rungs]
    upd = [r.report.updates[-1] for r in res.rungs]
    ok = (triv.iterations == 1 and res.completed and len(res.rungs) == 3
          and all(i <= 500 for i in its) and all(x <= 1e-8 for x in upd))
    return ok, f"trivial {triv.iterations} iteration, forced rungs {its} iterations, last updates {[f'{x:.2g}' for x in upd]}"


def criterion_6():
    return _from_checks(suite_energy())


def criterion_7():
    return _from_checks(suite_scaling())


def criterion_8():
    return _from_checks(suite_bogovskii())


def criterion_9():
    return _from_checks(suite_friedrichs())


def criterion_10():
    return _from_checks(suite_ladder())


def criterion_11():
    return _from_checks(suite_hb_run())


CRITERIA = {
    1: ("constitutive monotonicity and growth", criterion_1, 5.0),
    2: ("HB regularizer bounds", criterion_2, 5.0),
    3: ("continuity positivity, mass, oracle", criterion_3, 60.0),
    4: ("momentum oracles and Kacanov descent", criterion_4, 120.0),
    5: ("fixed point and ladder smoke", criterion_5, 120.0),
    6: ("energy identity", criterion_6, None),
    7: ("sqrt(eps) density gradient scaling", criterion_7, 600.0),
    8: ("Bogovskii right inverse", criterion_8, 300.0),
    9: ("Friedrichs commutator", criterion_9, None),
    10: ("weak residual along the eps ladder", criterion_10, None),
    11: ("HB end to end", criterion_11, None),
}


def run_criterion(k):
    title, fn, budget = CRITERIA[k]
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    if budget is not None and dt > budget:
        ok, detail = False, f"{detail}; over the {budget:g} s budget"
    return _record(k, title, ok, detail, dt)


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k):
    assert run_criterion(k), RESULTS[k]


if __name__ == "__main__":
    for k in sorted(CRITERIA):
        run_criterion(k)
        print(RESULTS[k], flush=True)
