"""Momentum right-hand side and the monotone quasilinear velocity solve.

Velocities carry homogeneous Dirichlet data on the outer ring of cells; the
remaining cells are unknowns.  The viscous operator is the gradient of the
discrete convex energy

    Phi(u) = sum_s w [A(|Du_s|) + B(|div u_s|) + alpha/q |grad u_s|^q]
             + sum_cells vol beta/2 rho |u|^2 - sum_cells vol F . u

where gradient samples ``s`` are taken at the 2^d corners of every lattice
cube spanned by neighbouring cell centers (forward/backward differences
along cube edges).  Each sample uses only nearest neighbours, so the
operator has no odd-even null space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import itertools
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constitutive import GRAD_GUARD, PowerLawParams, HBRegParams, PressureLaw, frob
from .continuity import face_mass_flux
from .fields import Grid, face_diff, grad, mollified_truncation, mollify, truncate

log = logging.getLogger(__name__)

_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)


class MomentumSolveError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


# ---------------------------------------------------------------------------
# Corner-gradient operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CornerOps:
    """Sparse gradient-sample operators restricted to the interior unknowns."""

    grid: Grid
    G: tuple  # per axis, shape (n_samples, n_unknowns)
    unknown: np.ndarray  # flat indices of unknown cells
    weight: float  # quadrature weight per sample

    @property
    def n_samples(self) -> int:
        return self.G[0].shape[0]

    @property
    def n_unknowns(self) -> int:
        return self.unknown.size

    def restrict(self, f: np.ndarray) -> np.ndarray:
        """Cell field (scalar or vector) -> values on unknowns, shape (n, [d])."""
        flat = np.asarray(f).reshape((self.grid.n_cells,) + np.shape(f)[self.grid.d:])
        return flat[self.unknown]

    def prolong(self, x: np.ndarray) -> np.ndarray:
        """Values on unknowns -> cell field with zero boundary ring."""
        out = np.zeros((self.grid.n_cells,) + x.shape[1:])
        out[self.unknown] = x
        return out.reshape(self.grid.shape + x.shape[1:])

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Sampled J[s, i, k] = d u_i / d x_k from unknown values x (n, d)."""
        return np.stack([np.stack([Gk @ x[:, i] for Gk in self.G], axis=-1)
                         for i in range(x.shape[1])], axis=1)

    def jacobian_of_field(self, u: np.ndarray) -> np.ndarray:
        return self.jacobian(self.restrict(u))

    def divergence_T(self, T: np.ndarray) -> np.ndarray:
        """sum_k G_k^T (w T[:, i, k]) -> (n, d); the discrete -div of a tensor."""
        return np.stack([sum(Gk.T @ (self.weight * T[:, i, k]) for k, Gk in enumerate(self.G))
                         for i in range(T.shape[1])], axis=-1)


@lru_cache(maxsize=16)
def corner_ops(grid: Grid) -> CornerOps:
    if grid.periodic:
        raise ValueError("Dirichlet velocity operators need a non-periodic grid")
    d = grid.d
    idx = np.arange(grid.n_cells).reshape(grid.shape)
    cube = np.stack(np.meshgrid(*[np.arange(n - 1) for n in grid.shape], indexing="ij"),
                    axis=-1).reshape(-1, d)
    rows_all = [[] for _ in range(d)]
    cols_all = [[] for _ in range(d)]
    vals_all = [[] for _ in range(d)]
    n_cube = cube.shape[0]
    for c_no, corner in enumerate(itertools.product((0, 1), repeat=d)):
        rows = c_no * n_cube + np.arange(n_cube)
        for k in range(d):
            base = cube + np.array(corner)
            base[:, k] = cube[:, k]
            top = base.copy()
            top[:, k] += 1
            i0 = idx[tuple(base.T)]
            i1 = idx[tuple(top.T)]
            h = grid.h[k]
            rows_all[k] += [rows, rows]
            cols_all[k] += [i1, i0]
            vals_all[k] += [np.full(n_cube, 1.0 / h), np.full(n_cube, -1.0 / h)]
    n_samples = n_cube * 2**d
    unknown = np.flatnonzero(~grid.boundary_cells().ravel())
    G = []
    for k in range(d):
        full = sp.csr_matrix((np.concatenate(vals_all[k]),
                              (np.concatenate(rows_all[k]), np.concatenate(cols_all[k]))),
                             shape=(n_samples, grid.n_cells))
        G.append(full[:, unknown].tocsr())
    return CornerOps(grid, tuple(G), unknown, grid.cell_volume / 2**d)


# ---------------------------------------------------------------------------
# Problem and energy
# ---------------------------------------------------------------------------


@dataclass
class MomentumProblem:
    grid: Grid
    stress: PowerLawParams | HBRegParams
    F: np.ndarray
    alpha: float = 0.0
    q: float = 2.0
    beta: float = 0.0
    rho: np.ndarray | None = None

    def __post_init__(self):
        self.grid.check(self.F, "vector")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.alpha > 0 and not self.q > self.grid.d:
            raise ValueError("damping exponent q must exceed d")
        if self.beta > 0 and self.rho is None:
            raise ValueError("beta > 0 needs a frozen density")


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    status: str = ""
    residuals: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    energy_drops: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    tol: float = 0.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("iterations", "converged", "status", "residuals",
                                               "energies", "energy_drops", "steps", "tol")}


class _Energy:
    """Evaluates Phi, its gradient and the lagged (secant) matrix on unknowns."""

    def __init__(self, p: MomentumProblem):
        self.p = p
        self.ops = corner_ops(p.grid)
        self.vol = p.grid.cell_volume
        self.Fx = self.ops.restrict(p.F)
        self.beta_w = (p.beta * self.vol * self.ops.restrict(p.rho)
                       if p.beta > 0 else None)

    # pointwise pieces -----------------------------------------------------
    def _parts(self, J):
        D = 0.5 * (J + np.swapaxes(J, -1, -2))
        s = frob(D)
        t = np.trace(D, axis1=-2, axis2=-1)
        gn = frob(J)
        return D, s, t, gn

    def flux(self, J):
        """Per-sample dW/dJ: S(D) + alpha |J|^{q-2} J."""
        p = self.p
        D, s, t, gn = self._parts(J)
        T = p.stress.shear_coef(s)[:, None, None] * D
        bc = p.stress.bulk_coef(np.abs(t))
        if np.any(bc):
            T = T + (bc * t)[:, None, None] * np.eye(J.shape[-1])
        if p.alpha > 0:
            T = T + (p.alpha * gn ** (p.q - 2))[:, None, None] * J
        return T

    def value(self, x):
        p = self.p
        J = self.ops.jacobian(x)
        _, s, t, gn = self._parts(J)
        W = p.stress.shear_potential(s) + p.stress.bulk_potential(np.abs(t))
        if p.alpha > 0:
            W = W + p.alpha / p.q * gn**p.q
        val = self.ops.weight * np.sum(W) - self.vol * np.sum(self.Fx * x)
        if self.beta_w is not None:
            val += 0.5 * np.sum(self.beta_w[:, None] * x * x)
        return float(val)

    def gradient(self, x):
        g = self.ops.divergence_T(self.flux(self.ops.jacobian(x))) - self.vol * self.Fx
        if self.beta_w is not None:
            g = g + self.beta_w[:, None] * x
        return g

    def slope(self, x, dx):
        """Directional derivative <grad Phi(x), dx>."""
        J = self.ops.jacobian(x)
        dJ = self.ops.jacobian(dx)
        val = self.ops.weight * np.sum(self.flux(J) * dJ) - self.vol * np.sum(self.Fx * dx)
        if self.beta_w is not None:
            val += np.sum(self.beta_w[:, None] * x * dx)
        return float(val)

    def change(self, x, dx, t):
        """Phi(x + t dx) - Phi(x) by Gauss quadrature of the slope along the segment.

        Immune to the cancellation that differencing two energies suffers once
        the decrease is below round-off of Phi itself.
        """
        nodes = 0.5 * t * (_GL4_X + 1.0)
        return 0.5 * t * sum(w * self.slope(x + s * dx, dx) for s, w in zip(nodes, _GL4_W))

    # lagged matrix --------------------------------------------------------
    def _floor(self, s):
        p = self.p
        degenerate = (getattr(p.stress, "r", 2.0) > 2) or (p.alpha > 0 and p.q > 2)
        if not degenerate:
            return GRAD_GUARD
        scale = float(np.sqrt(np.mean(s**2)))
        return max(GRAD_GUARD, 1e-6 * scale) if scale > 0 else 1.0

    def coefficients(self, J):
        p = self.p
        _, s, t, gn = self._parts(J)
        floor = self._floor(s)
        a = p.stress.shear_coef(np.maximum(s, floor), guard=True)
        b = p.stress.bulk_coef(np.maximum(np.abs(t), floor), guard=True)
        c = p.alpha * np.maximum(gn, floor) ** (p.q - 2) if p.alpha > 0 else np.zeros_like(s)
        return a, b, c

    def matrix(self, x):
        """Symmetric positive definite lagged-coefficient matrix."""
        ops = self.ops
        d = self.p.grid.d
        a, b, c = self.coefficients(ops.jacobian(x))
        w = ops.weight
        G = ops.G

        def P(k, kk, coef):
            return G[k].T @ sp.diags(w * coef) @ G[kk]

        blocks = [[None] * d for _ in range(d)]
        diag_sum = sum(P(k, k, 0.5 * a + c) for k in range(d))
        for i in range(d):
            for ii in range(d):
                blk = P(ii, i, 0.5 * a)
                if np.any(b):
                    blk = blk + P(i, ii, b)
                if i == ii:
                    blk = blk + diag_sum
                blocks[i][ii] = blk
        return self._finish(sp.bmat(blocks, format="csr"))

    def _finish(self, A):
        if self.beta_w is not None:
            A = A + sp.diags(np.tile(self.beta_w, self.p.grid.d))
        # bit-exact symmetry: a + b == b + a in floating point
        A = (A + A.T.tocsr()) * 0.5
        return A.tocsr()

    def hessian(self, x):
        """Exact Hessian of Phi with the same coefficient floors as ``matrix``."""
        ops = self.ops
        p = self.p
        d = p.grid.d
        J = ops.jacobian(x)
        D, s, t, gn = self._parts(J)
        a, _, c = self.coefficients(J)
        floor = self._floor(s)
        sf = np.maximum(s, floor)
        w = ops.weight
        G = ops.G
        bulk = p.stress.bulk_curv(np.maximum(np.abs(t), floor))
        # rank-one factors: C[s, i, k, j, l] += sum_m coef_m X_m[s,i,k] X_m[s,j,l]
        rank1 = [(p.stress.shear_curv(sf), D)]
        if p.alpha > 0 and p.q != 2:
            gf = np.maximum(gn, floor)
            rank1.append((p.alpha * (p.q - 2) * gf ** (p.q - 4), J))

        def P(k, kk, coef):
            return G[k].T @ sp.diags(w * coef) @ G[kk]

        blocks = [[None] * d for _ in range(d)]
        diag_sum = sum(P(k, k, 0.5 * a + c) for k in range(d))
        for i in range(d):
            for j in range(d):
                blk = P(j, i, 0.5 * a)
                if np.any(bulk):
                    blk = blk + P(i, j, bulk)
                if i == j:
                    blk = blk + diag_sum
                for k in range(d):
                    for l in range(d):
                        coef = sum(cm * X[:, i, k] * X[:, j, l] for cm, X in rank1)
                        blk = blk + P(k, l, coef)
                blocks[i][j] = blk
        return self._finish(sp.bmat(blocks, format="csr"))


def _flat(x):
    return x.T.ravel()  # component-major: [u_1 unknowns, u_2 unknowns, ...]


def _unflat(v, d):
    return v.reshape(d, -1).T


def residual_norm(grid: Grid, g: np.ndarray) -> float:
    """Discrete L2 norm of the residual density grad Phi / vol."""
    vol = grid.cell_volume
    return float(np.sqrt(np.sum((g / vol) ** 2) * vol))


def momentum_energy(p: MomentumProblem, u: np.ndarray) -> float:
    e = _Energy(p)
    return e.value(e.ops.restrict(u))


def momentum_residual(p: MomentumProblem, u: np.ndarray) -> float:
    e = _Energy(p)
    return residual_norm(p.grid, e.gradient(e.ops.restrict(u)))


def solve_momentum(p: MomentumProblem, u0: np.ndarray | None = None, rtol: float = 1e-9,
                   atol: float = 1e-14, max_iter: int = 200, max_halvings: int = 40,
                   armijo: float = 1e-4, raise_on_fail: bool = True,
                   keep_matrices: bool = False, method: str = "kacanov"):
    """Descent on Phi with Armijo backtracking.

    ``method="kacanov"``: each step solves ``A(u_k) du = -grad Phi(u_k)``
    with the frozen secant coefficients (for exact coefficients ``u_k + du``
    is the classical Kacanov update).  ``method="newton"`` uses the exact
    Hessian instead and falls back to the Kacanov direction whenever the
    Newton direction is not a descent direction.  Returns ``(u, report)``.
    """
    if method not in ("kacanov", "newton"):
        raise ValueError(f"unknown method {method!r}")
    grid = p.grid
    e = _Energy(p)
    ops = e.ops
    d = grid.d
    if u0 is None:
        x = np.zeros((ops.n_unknowns, d))
    else:
        grid.check(u0, "vector")
        ring = grid.boundary_cells()
        if np.abs(u0[ring]).max(initial=0.0) > 0:
            raise ValueError("initial guess must vanish on the boundary ring")
        x = ops.restrict(u0).astype(float)
    vol = grid.cell_volume
    F_norm = float(np.sqrt(np.sum(e.Fx**2) * vol))
    tol = rtol * F_norm + atol
    rep = SolveReport(tol=tol)
    rep.matrices = [] if keep_matrices else None
    phi = e.value(x)
    rep.energies.append(phi)
    for it in range(max_iter + 1):
        g = e.gradient(x)
        res = residual_norm(grid, g)
        rep.residuals.append(res)
        if res <= tol:
            rep.converged, rep.status = True, "converged"
            break
        if it == max_iter:
            rep.status = "max_iter"
            break
        dx = None
        if method == "newton":
            H = e.hessian(x)
            dx = _unflat(spla.spsolve(H.tocsc(), -_flat(g)), d)
            slope0 = float(np.sum(g * dx))
            if not (np.isfinite(slope0) and slope0 < 0):
                dx = None
            elif keep_matrices:
                rep.matrices.append(H)
        if dx is None:
            A = e.matrix(x)
            if keep_matrices:
                rep.matrices.append(A)
            dx = _unflat(spla.spsolve(A.tocsc(), -_flat(g)), d)
            slope0 = float(np.sum(g * dx))
        if slope0 >= 0:
            rep.status = "not a descent direction"
            break
        # Kacanov overshoots by ~(r-1) for shear-thickening laws; start the
        # backtracking at the secant estimate of the line minimizer.
        t = 1.0
        slope1 = e.slope(x + dx, dx)
        if slope1 > 0:
            t = slope0 / (slope0 - slope1)
        for _ in range(max_halvings + 1):
            drop = e.change(x, dx, t)
            if drop <= armijo * t * slope0:
                break
            t *= 0.5
        else:
            rep.status = "line search exhausted"
            break
        x = x + t * dx
        rep.iterations += 1
        rep.steps.append(t)
        rep.energy_drops.append(drop)
        phi = e.value(x)
        rep.energies.append(phi)
    u = ops.prolong(x)
    if not rep.converged:
        msg = f"momentum solve failed ({rep.status}); residual {rep.residuals[-1]:.3e} > tol {tol:.3e}"
        log.warning(msg)
        if raise_on_fail:
            raise MomentumSolveError(msg, rep)
    return u, rep


# ---------------------------------------------------------------------------
# Right-hand side of the approximate system
# ---------------------------------------------------------------------------


@dataclass
class FAssemblyInputs:
    grid: Grid
    rho: np.ndarray
    v: np.ndarray
    delta: float
    eta: float
    eps: float
    pressure: PressureLaw
    f: np.ndarray
    g: np.ndarray


def convective_term(grid: Grid, rho: np.ndarray, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Finite-volume div(rho w (x) v) with upwinded mass flux and centered v.

    The mass flux is exactly the one of the continuity solver, which makes
    <div(m (x) v), v> = <div m, |v|^2/2> hold discretely.
    """
    out = np.zeros(grid.shape + (grid.d,))
    for ax, h in enumerate(grid.h):
        m = face_mass_flux(grid, rho, w, ax)
        if grid.periodic:
            vf = 0.5 * (v + np.roll(v, -1, axis=ax))
            flux = m[..., None] * vf
            out += (flux - np.roll(flux, 1, axis=ax)) / h
            continue
        lo = tuple(slice(None, -1) if k == ax else slice(None) for k in range(grid.d))
        hi = tuple(slice(1, None) if k == ax else slice(None) for k in range(grid.d))
        flux = m[..., None] * 0.5 * (v[lo] + v[hi])
        out[lo] += flux / h
        out[hi] -= flux / h
    return out


def eps_coupling_term(grid: Grid, v: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """(grad v grad rho)_i = sum_j d_j v_i d_j rho, averaged over the faces of each cell."""
    out = np.zeros(grid.shape + (grid.d,))
    for ax, h in enumerate(grid.h):
        prod = face_diff(grid, v, ax) * face_diff(grid, rho, ax)[..., None] / h**2
        if grid.periodic:
            out += 0.5 * (prod + np.roll(prod, 1, axis=ax))
            continue
        lo = tuple(slice(None, -1) if k == ax else slice(None) for k in range(grid.d))
        hi = tuple(slice(1, None) if k == ax else slice(None) for k in range(grid.d))
        out[lo] += 0.5 * prod
        out[hi] += 0.5 * prod
    return out


def pressure_term(grid: Grid, rho: np.ndarray, pressure: PressureLaw, delta: float) -> np.ndarray:
    """T_delta(omega_delta * ext0(grad p(rho)))."""
    gp = grad(grid, pressure.a * rho**pressure.gamma)
    return truncate(grid, mollify(grid, gp, delta), delta)


def assemble_F(inp: FAssemblyInputs, parts: bool = False):
    """F(rho, v) = -div(rho w (x) v) - T(omega * grad p) - eta/2 rho v - eps grad v grad rho + rho f + g,
    with w = omega_delta * T_delta(v)."""
    grid = inp.grid
    for arr, kind in ((inp.rho, "scalar"), (inp.v, "vector"), (inp.f, "vector"), (inp.g, "vector")):
        grid.check(arr, kind)
    if (inp.rho < 0).any():
        raise ValueError("density must be nonnegative")
    w = mollified_truncation(grid, inp.v, inp.delta)
    terms = {
        "convection": -convective_term(grid, inp.rho, w, inp.v),
        "pressure": -pressure_term(grid, inp.rho, inp.pressure, inp.delta),
        "relaxation": -0.5 * inp.eta * inp.rho[..., None] * inp.v,
        "eps_coupling": -inp.eps * eps_coupling_term(grid, inp.v, inp.rho),
        "forcing": inp.rho[..., None] * inp.f + inp.g,
    }
    F = sum(terms.values())
    return (F, terms) if parts else F
