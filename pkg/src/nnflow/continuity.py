"""Regularized steady continuity equation.

Solves, with zero normal flux for rho,

    -eps Lap rho + eta (rho - M/|Omega|) + alpha rho + div(rho v) = alpha rho_check

on a cell-centered grid.  Diffusion is the Neumann Laplacian; convection is
first-order upwind with face velocities averaged from the two adjacent cells.
The matrix is then a column-diagonally-dominant M-matrix, so rho >= 0 for
nonnegative data, and summing the rows gives the exact discrete mass rule

    (eta + alpha) int rho = eta M + alpha int rho_check.
"""
from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import Grid, div, face_diff, grad, integral, neumann_laplacian

log = logging.getLogger(__name__)

DIRECT_LIMIT = 128 * 128


class TransportSolveError(RuntimeError):
    pass


@dataclass
class TransportProblem:
    grid: Grid
    eps: float
    v: np.ndarray
    eta: float = 0.0
    alpha: float = 0.0
    M: float | None = None
    rho_check: np.ndarray | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("artificial diffusion eps must be > 0")
        if self.eta < 0 or self.alpha < 0:
            raise ValueError("eta and alpha must be nonnegative")
        has_eta = self.eta > 0 and self.M is not None
        has_alpha = self.alpha > 0 and self.rho_check is not None
        if not (has_eta or has_alpha):
            raise ValueError("singular transport problem: need eta > 0 with M or alpha > 0 with rho_check")
        if self.eta > 0 and self.M is None:
            raise ValueError("eta > 0 requires the mass M")
        self.grid.check(self.v, "vector")
        ring = self.grid.boundary_cells()
        if ring.any() and np.abs(self.v[ring]).max() > 0:
            raise ValueError("transport field must vanish on the boundary ring")
        if self.rho_check is not None:
            self.grid.check(self.rho_check, "scalar")

    @property
    def target_mass(self) -> float:
        src = integral(self.grid, self.rho_check) if self.rho_check is not None else 0.0
        M = self.M if self.M is not None else 0.0
        return (self.eta * M + self.alpha * src) / (self.eta + self.alpha)


def face_velocity(grid: Grid, v: np.ndarray, ax: int) -> np.ndarray:
    """Normal velocity on the faces between consecutive cells along ``ax``."""
    c = v[..., ax]
    if grid.periodic:
        return 0.5 * (c + np.roll(c, -1, axis=ax))
    return 0.5 * (c[tuple(slice(None, -1) if k == ax else slice(None) for k in range(grid.d))]
                  + c[tuple(slice(1, None) if k == ax else slice(None) for k in range(grid.d))])


def _face_pairs(grid: Grid, ax: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices (left, right) of the cells adjacent to each face."""
    idx = np.arange(grid.n_cells).reshape(grid.shape)
    if grid.periodic:
        return idx.ravel(), np.roll(idx, -1, axis=ax).ravel()
    sl_l = tuple(slice(None, -1) if k == ax else slice(None) for k in range(grid.d))
    sl_r = tuple(slice(1, None) if k == ax else slice(None) for k in range(grid.d))
    return idx[sl_l].ravel(), idx[sl_r].ravel()


def upwind_operator(grid: Grid, v: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix C with (C rho)_i = upwind discrete div(rho v) at cell i."""
    rows, cols, vals = [], [], []
    for ax in range(grid.d):
        h = grid.h[ax]
        wf = face_velocity(grid, v, ax).ravel()
        left, right = _face_pairs(grid, ax)
        wp = np.maximum(wf, 0.0) / h
        wm = np.maximum(-wf, 0.0) / h
        # flux left->right: wp rho_L - wm rho_R
        rows += [left, left, right, right]
        cols += [left, right, left, right]
        vals += [wp, -wm, -wp, wm]
    n = grid.n_cells
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def face_mass_flux(grid: Grid, rho: np.ndarray, v: np.ndarray, ax: int) -> np.ndarray:
    """Upwinded mass flux rho_up * v_f on the faces along ``ax``."""
    wf = face_velocity(grid, v, ax)
    if grid.periodic:
        rl, rr = rho, np.roll(rho, -1, axis=ax)
    else:
        rl = rho[tuple(slice(None, -1) if k == ax else slice(None) for k in range(grid.d))]
        rr = rho[tuple(slice(1, None) if k == ax else slice(None) for k in range(grid.d))]
    return np.maximum(wf, 0.0) * rl - np.maximum(-wf, 0.0) * rr


def transport_matrix(p: TransportProblem) -> tuple[sp.csr_matrix, np.ndarray]:
    g = p.grid
    A = -p.eps * neumann_laplacian(g) + upwind_operator(g, p.v)
    A = A + (p.eta + p.alpha) * sp.identity(g.n_cells, format="csr")
    b = np.zeros(g.n_cells)
    if p.eta > 0:
        b += p.eta * p.M / g.volume
    if p.alpha > 0:
        b += p.alpha * np.asarray(p.rho_check, dtype=float).ravel()
    return A.tocsr(), b


def _relres(A, x, b) -> float:
    r = A @ x - b
    scale = abs(A).max() * np.abs(x).max() + np.abs(b).max()
    return float(np.abs(r).max() / scale) if scale > 0 else 0.0


def solve_transport(p: TransportProblem, tol: float = 1e-12) -> np.ndarray:
    """Unique nonnegative discrete solution of the regularized transport problem.

    The sum of all equations is the mass rule, so one equation is redundant
    given the others plus that rule.  The last row is replaced by the mass rule
    before factorization; this keeps the total mass exact to round-off even
    when eta + alpha is tiny and the matrix is nearly singular.
    """
    g = p.grid
    src_const = p.rho_check is None or np.ptp(p.rho_check) == 0
    if not np.any(p.v) and src_const:
        # no transport and a constant source: the constant is the exact solution
        return np.full(g.shape, p.target_mass / g.volume)
    A, b = transport_matrix(p)
    diag_scale = float(np.abs(A.diagonal()).max())
    B = A.tolil()
    B[g.n_cells - 1, :] = diag_scale * np.ones(g.n_cells)
    B = B.tocsc()
    bb = b.copy()
    bb[-1] = diag_scale * p.target_mass / g.cell_volume
    if g.n_cells <= DIRECT_LIMIT:
        lu = spla.splu(B)
        x = lu.solve(bb)
        for _ in range(3):
            if _relres(A, x, b) <= tol:
                break
            x = x + lu.solve(bb - B @ x)
    else:
        ilu = spla.spilu(B, drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(B.shape, ilu.solve)
        x, info = spla.gmres(B, bb, M=M, rtol=1e-14, atol=0.0, restart=100, maxiter=50)
        if info != 0:
            raise TransportSolveError(f"gmres did not converge (info={info}), "
                                      f"residual {_relres(A, x, b):.3e}")
    res = _relres(A, x, b)
    if res > tol:
        raise TransportSolveError(f"transport solve residual {res:.3e} exceeds {tol:.1e}")
    return x.reshape(g.shape)


def mass_of(grid: Grid, rho: np.ndarray) -> float:
    return integral(grid, rho)


def discrete_mass_defect(p: TransportProblem, rho: np.ndarray) -> float:
    """eta (int rho - M) + alpha (int rho - int rho_check), zero for exact solves."""
    m = mass_of(p.grid, rho)
    out = 0.0
    if p.eta > 0:
        out += p.eta * (m - p.M)
    if p.alpha > 0:
        out += p.alpha * (m - integral(p.grid, p.rho_check))
    return out


def transport_energy(grid: Grid, rho: np.ndarray, eps: float, eta: float) -> float:
    """eps int |grad rho|^2 + eta int rho^2 with face differences."""
    vol = grid.cell_volume
    total = 0.0
    for ax, h in enumerate(grid.h):
        total += eps * np.sum((face_diff(grid, rho, ax) / h) ** 2) * vol
    return float(total + eta * np.sum(rho**2) * vol)


# ---------------------------------------------------------------------------
# Renormalization defect
# ---------------------------------------------------------------------------


def renorm_family(kind) -> tuple:
    """(b, b') for a named renormalization: "linear", "square" or ("power", k)."""
    if callable(kind):
        raise TypeError("pass (b, db) as a tuple for custom families")
    if isinstance(kind, tuple) and len(kind) == 2 and callable(kind[0]):
        return kind
    if kind == "linear":
        return (lambda r: r, lambda r: np.ones_like(r))
    if kind == "square":
        return (lambda r: r**2, lambda r: 2 * r)
    if isinstance(kind, tuple) and kind[0] == "power":
        k = float(kind[1])
        return (lambda r: r**k, lambda r: k * r ** (k - 1))
    raise ValueError(f"unknown renormalization family {kind!r}")


def renorm_residual(grid: Grid, rho: np.ndarray, u: np.ndarray, b_kind, phi: np.ndarray) -> float:
    """-int b(rho) u . grad(phi) + int (rho b'(rho) - b(rho)) div(u) phi."""
    b, db = renorm_family(b_kind)
    br = b(rho)
    coef = rho * db(rho) - br
    vol = grid.cell_volume
    t1 = -np.sum(br[..., None] * u * grad(grid, phi)) * vol
    t2 = np.sum(coef * div(grid, u) * phi) * vol
    return float(t1 + t2)
