"""Explicit Bogovskii right inverse of the divergence on a rectangle.

    B f(x) = int f(y) N(x, y) dy,
    N(x, y) = (x - y)/|x - y|^d int_{|x-y|}^inf omega(y + s e) s^{d-1} ds,  e = (x-y)/|x-y|

with omega the quartic bump (unit mass) on a ball centered in the domain.
Along a ray, |y + s e - x0|^2 is quadratic in s, so the radial integrand is a
polynomial and is integrated in closed form.  The discrete operator treats
f as piecewise constant and integrates N(x_i, .) over each source cell:
polar coordinates on the self cell (the 1/|x-y| singularity cancels the
Jacobian), tensor Gauss-Legendre on nearby cells, 2x2 Gauss elsewhere.

Zeroing the boundary ring leaves the discrete divergence of the kernel
field inconsistent in the first two cell layers, because the boundary rows
of ``fields.div`` are only zeroth-order accurate.  ``correct=True`` (default)
adds the minimum-norm ring-free field Psi_c with div_h Psi_c equal to the
remaining defect projected onto the range of div_h.  The range excludes
the parity classes of the centered stencil and the corner cells; for smooth
f the excluded part is O(h).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import logging

import numpy as np

import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .fields import Grid, div, integral

log = logging.getLogger(__name__)


def bump_mass_constant(d: int, R: float) -> float:
    """c with int c (1 - |z|^2/R^2)^2 dz = 1 over the ball of radius R."""
    if d == 2:
        return 3.0 / (np.pi * R**2)
    if d == 3:
        return 105.0 / (32.0 * np.pi * R**3)
    raise ValueError("d must be 2 or 3")


def kernel(x: np.ndarray, y: np.ndarray, x0: np.ndarray, R: float) -> np.ndarray:
    """N(x, y) for broadcastable point arrays (..., d); zero where x == y."""
    d = x.shape[-1]
    z = x - y
    dist = np.sqrt(np.sum(z * z, axis=-1))
    safe = np.where(dist > 0, dist, 1.0)
    e = z / safe[..., None]
    p = y - x0
    b = np.sum(e * p, axis=-1)
    c = np.sum(p * p, axis=-1)
    disc = b * b - c + R * R
    sq = np.sqrt(np.maximum(disc, 0.0))
    lo = np.maximum(dist, -b - sq)
    hi = -b + sq
    ok = (disc > 0) & (hi > lo) & (dist > 0)
    inv = 1.0 / (R * R)
    a0 = 1.0 - c * inv
    a1 = -2.0 * b * inv
    a2 = -inv
    coefs = (a0 * a0, 2 * a0 * a1, a1 * a1 + 2 * a0 * a2, 2 * a1 * a2, a2 * a2)
    radial = np.zeros_like(dist)
    for k, ck in enumerate(coefs):
        m = k + d
        radial = radial + ck * (hi**m - lo**m) / m
    w = np.where(ok, bump_mass_constant(d, R) * radial / safe**d, 0.0)
    return z * w[..., None]


def _gauss_box(d: int, m: int, h) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of an m^d Gauss rule on a cell of size h centered at 0."""
    t, w = np.polynomial.legendre.leggauss(m)
    offs = np.stack(np.meshgrid(*[0.5 * hk * t for hk in h], indexing="ij"), -1).reshape(-1, d)
    wts = np.prod(np.stack(np.meshgrid(*[0.5 * hk * w for hk in h], indexing="ij"), -1),
                  axis=-1).ravel()
    return offs, wts


def _self_cell_rule(h, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar rule on a 2D cell centered at the singular point."""
    t, w = np.polynomial.legendre.leggauss(m)
    pts, wts = [], []
    hx, hy = h
    for k in range(4):
        # triangle toward face k; theta spans the face seen from the center
        ax = k % 2
        sgn = 1.0 if k < 2 else -1.0
        half = (hx if ax == 0 else hy) / 2
        other = (hy if ax == 0 else hx) / 2
        tmax = np.arctan2(other, half)
        for ti, wi in zip(tmax * t, tmax * w):
            rmax = half / np.cos(ti)
            for si, wsi in zip(0.5 * rmax * (t + 1), 0.5 * rmax * w):
                e_n, e_t = np.cos(ti), np.sin(ti)
                v = np.zeros(2)
                v[ax] = sgn * e_n * si
                v[1 - ax] = e_t * si
                pts.append(v)
                wts.append(wi * wsi * si)
    return np.array(pts), np.array(wts)


@dataclass
class BogovskiiOp:
    """Discrete Bogovskii operator on ``grid``.

    ``near`` is the Chebyshev radius (in cells) of the 8x8 Gauss zone.  The
    dense kernel matrix is built lazily and cached, so repeated applications
    cost one matrix-vector product each.
    """

    grid: Grid
    x0: np.ndarray | None = None
    radius: float | None = None
    near: int = 3
    near_order: int = 8
    far_order: int = 2
    chunk: int = 128
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.grid.periodic:
            raise ValueError("Bogovskii operator needs a bounded domain")
        if self.grid.d != 2:
            raise NotImplementedError("cell quadrature implemented for d = 2")
        L = np.asarray(self.grid.lengths, dtype=float)
        org = np.asarray(self.grid.origin)
        if self.x0 is None:
            self.x0 = org + 0.5 * L
        if self.radius is None:
            self.radius = 0.4 * float(L.min())
        dist = np.min(np.concatenate([self.x0 - org, org + L - self.x0]))
        if self.radius > dist:
            raise ValueError("bump ball must lie inside the domain")

    @cached_property
    def matrix(self) -> np.ndarray:
        g = self.grid
        d = g.d
        h = np.asarray(g.h)
        P = np.stack([c.ravel() for c in np.meshgrid(*g.axes(), indexing="ij")], -1)
        idx = np.stack([c.ravel() for c in np.meshgrid(*[np.arange(n) for n in g.shape],
                                                       indexing="ij")], -1)
        n = len(P)
        K = np.empty((n, d, n))
        far_off, far_w = _gauss_box(d, self.far_order, h)
        near_off, near_w = _gauss_box(d, self.near_order, h)
        self_off, self_w = _self_cell_rule(h, self.near_order)
        x0, R = self.x0, self.radius
        for s in range(0, n, self.chunk):
            X = P[s:s + self.chunk]
            blk = np.zeros((len(X), n, d))
            for off, w in zip(far_off, far_w):
                blk += w * kernel(X[:, None, :], P[None, :, :] + off, x0, R)
            Ii = idx[s:s + self.chunk]
            cheb = np.abs(Ii[:, None, :] - idx[None, :, :]).max(-1)
            ii, jj = np.nonzero((cheb <= self.near) & (cheb > 0))
            acc = np.zeros((len(ii), d))
            for off, w in zip(near_off, near_w):
                acc += w * kernel(X[ii], P[jj] + off, x0, R)
            blk[ii, jj] = acc
            ii = np.arange(len(X))
            jj = ii + s
            acc = np.zeros((len(ii), d))
            for off, w in zip(self_off, self_w):
                acc += w * kernel(X, X + off, x0, R)
            blk[ii, jj] = acc
            K[s:s + self.chunk] = np.transpose(blk, (0, 2, 1))
        ring = g.boundary_cells().ravel()
        K[ring] = 0.0
        return K

    @cached_property
    def _div_system(self):
        """Sparse div_h on ring-free vector unknowns, its null-space classes and
        a pinned factorization of D D^T."""
        D, free = div_matrix(self.grid)
        DT = D.T.tocsr()
        # every column of D links two cells; components = kernel of D^T
        n = self.grid.n_cells
        rows = DT.indices.reshape(-1, 2)
        adj = sp.coo_matrix((np.ones(len(rows)), (rows[:, 0], rows[:, 1])), shape=(n, n))
        ncomp, labels = connected_components(adj, directed=False)
        pin = np.array([np.flatnonzero(labels == c)[0] for c in range(ncomp)])
        keep = np.setdiff1d(np.arange(n), pin)
        A = (D @ DT).tocsc()
        lu = spla.splu(A[keep][:, keep].tocsc())
        return D, DT, free, labels, ncomp, keep, lu

    def range_projection(self, r: np.ndarray) -> np.ndarray:
        """Orthogonal projection of a cell field onto the range of div_h."""
        *_, labels, ncomp, _, _ = self._div_system
        r = np.asarray(r, dtype=float).ravel()
        means = np.bincount(labels, weights=r, minlength=ncomp) / np.bincount(labels, minlength=ncomp)
        return (r - means[labels]).reshape(self.grid.shape)

    def correction(self, defect: np.ndarray) -> np.ndarray:
        g = self.grid
        D, DT, free, labels, ncomp, keep, lu = self._div_system
        b = self.range_projection(defect).ravel()
        y = np.zeros(g.n_cells)
        y[keep] = lu.solve(b[keep])
        out = np.zeros(g.n_cells * g.d)
        out[free] = DT @ y
        return out.reshape(g.d, g.n_cells).T.reshape(g.shape + (g.d,))

    def apply(self, f: np.ndarray, check_mean: bool = True, correct: bool = True) -> np.ndarray:
        g = self.grid
        g.check(f, "scalar")
        f = np.asarray(f, dtype=float)
        if check_mean:
            l1 = integral(g, np.abs(f))
            if abs(integral(g, f)) > 1e-10 * max(l1, 1e-300):
                raise ValueError("Bogovskii input must have zero mean")
        out = self.matrix.reshape(-1, g.n_cells) @ f.ravel()
        psi = out.reshape(g.shape + (g.d,))
        if correct:
            psi = psi + self.correction(f - div(g, psi))
        return psi


def div_matrix(grid: Grid) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse ``fields.div`` acting on vector fields that vanish on the ring.

    Unknowns are component-major; ``free`` lists their positions in the
    flattened component-major vector of all cells.
    """
    n = grid.n_cells
    idx = np.arange(n).reshape(grid.shape)
    inner = ~grid.boundary_cells()
    rows, cols, vals = [], [], []
    free = []
    col = 0
    for ax in range(grid.d):
        k = idx[inner]
        h2 = 2.0 * grid.h[ax]
        lo = np.roll(idx, 1, axis=ax)[inner]
        hi = np.roll(idx, -1, axis=ax)[inner]
        c = np.arange(col, col + len(k))
        rows += [lo, hi]
        cols += [c, c]
        vals += [np.full(len(k), 1.0 / h2), np.full(len(k), -1.0 / h2)]
        free.append(ax * n + k)
        col += len(k)
    D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, col))
    return D, np.concatenate(free)


_OPS: dict = {}


def bogovskii_op(grid: Grid) -> BogovskiiOp:
    """Cached default operator per grid."""
    key = repr(grid.to_dict())
    if key not in _OPS:
        _OPS.clear()  # one dense matrix alive at a time
        _OPS[key] = BogovskiiOp(grid)
    return _OPS[key]


def bogovskii_apply(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Psi with div Psi = f, Psi = 0 on the boundary ring; f must have zero mean."""
    return bogovskii_op(grid).apply(f)
