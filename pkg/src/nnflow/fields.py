"""Structured-grid fields and discrete calculus.

Fields are plain numpy arrays laid out on a :class:`Grid`:

* scalar: shape ``grid.shape``
* vector: shape ``grid.shape + (d,)``
* symmetric tensor: shape ``grid.shape + (d, d)`` (stored full, packed only
  in dumps)

Cell centers sit at ``origin + (i + 1/2) h`` along every axis.  Operators
work in any dimension; production runs use d = 2.
"""
from __future__ import annotations

from dataclasses import dataclass
import json
import math
from pathlib import Path
import warnings

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    shape: tuple[int, ...]
    lengths: tuple[float, ...]
    origin: tuple[float, ...] | None = None
    periodic: bool = False

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        lengths = tuple(float(l) for l in self.lengths)
        if len(shape) != len(lengths) or len(shape) not in (1, 2, 3):
            raise ValueError("shape and lengths must have equal length 1..3")
        if min(shape) < 4:
            raise ValueError("need at least 4 cells per axis")
        if min(lengths) <= 0:
            raise ValueError("extents must be positive")
        origin = self.origin if self.origin is not None else (0.0,) * len(shape)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "origin", tuple(float(o) for o in origin))

    @classmethod
    def square(cls, n: int, length: float = 1.0, d: int = 2, periodic: bool = False):
        return cls((n,) * d, (length,) * d, periodic=periodic)

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(l / n for l, n in zip(self.lengths, self.shape))

    @property
    def hmin(self) -> float:
        return min(self.h)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    @property
    def volume(self) -> float:
        return math.prod(self.lengths)

    @property
    def n_cells(self) -> int:
        return math.prod(self.shape)

    # 2D conveniences
    nx = property(lambda self: self.shape[0])
    ny = property(lambda self: self.shape[1])
    lx = property(lambda self: self.lengths[0])
    ly = property(lambda self: self.lengths[1])

    def axes(self) -> list[np.ndarray]:
        return [o + (np.arange(n) + 0.5) * h for o, n, h in zip(self.origin, self.shape, self.h)]

    def centers(self) -> list[np.ndarray]:
        """Coordinate arrays of cell centers, one per axis (ij indexing)."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def sample(self, fn) -> np.ndarray:
        """Evaluate ``fn(*coords)`` at cell centers."""
        return np.asarray(fn(*self.centers()), dtype=float)

    def boundary_distance(self) -> np.ndarray:
        if self.periodic:
            return np.full(self.shape, np.inf)
        dist = np.full(self.shape, np.inf)
        for x, o, l in zip(self.centers(), self.origin, self.lengths):
            dist = np.minimum(dist, np.minimum(x - o, o + l - x))
        return dist

    def boundary_cells(self) -> np.ndarray:
        """Boolean mask of the outermost ring of cells."""
        mask = np.zeros(self.shape, dtype=bool)
        if self.periodic:
            return mask
        for ax in range(self.d):
            idx = [slice(None)] * self.d
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def check(self, f: np.ndarray, kind: str | None = None) -> str:
        """Validate that ``f`` lives on this grid; return its kind."""
        f = np.asarray(f)
        if f.shape[: self.d] != self.shape:
            raise ValueError(f"field of shape {f.shape} does not live on grid {self.shape}")
        tail = f.shape[self.d :]
        found = {(): "scalar", (self.d,): "vector", (self.d, self.d): "symtensor"}.get(tail)
        if found is None:
            raise ValueError(f"unsupported field shape {f.shape}")
        if kind is not None and found != kind and not (kind == "tensor" and found == "symtensor"):
            raise ValueError(f"expected a {kind} field, got {found}")
        return found

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "lengths": list(self.lengths),
                "origin": list(self.origin), "periodic": self.periodic}


# ---------------------------------------------------------------------------
# Differences
# ---------------------------------------------------------------------------


def _d_axis(grid: Grid, f: np.ndarray, ax: int) -> np.ndarray:
    """Second-order derivative of a scalar array along one axis.

    Centered in the interior; second-order one-sided on the two end rows
    (wrap-around on periodic grids).
    """
    h = grid.h[ax]
    if grid.periodic:
        return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2 * h)
    out = np.empty_like(f, dtype=float)
    f = np.moveaxis(f, ax, 0)
    o = np.moveaxis(out, ax, 0)
    o[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    o[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    o[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return out


def grad(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Gradient of a scalar field (vector field)."""
    grid.check(f, "scalar")
    return np.stack([_d_axis(grid, f, ax) for ax in range(grid.d)], axis=-1)


def jacobian(grid: Grid, v: np.ndarray) -> np.ndarray:
    """J[..., i, j] = d v_i / d x_j."""
    grid.check(v, "vector")
    return np.stack([grad(grid, v[..., i]) for i in range(grid.d)], axis=-2)


def sym_grad(grid: Grid, v: np.ndarray) -> np.ndarray:
    J = jacobian(grid, v)
    return 0.5 * (J + np.swapaxes(J, -1, -2))


def div(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Divergence, the negative adjoint of :func:`grad` on fields vanishing
    on the boundary ring.

    Interior rows are centered differences.  End rows use the finite-volume
    form with zero flux through the domain boundary, i.e. the divergence of a
    field with homogeneous Dirichlet trace.
    """
    grid.check(v, "vector")
    out = np.zeros(grid.shape)
    for ax in range(grid.d):
        h = grid.h[ax]
        c = v[..., ax]
        if grid.periodic:
            out += (np.roll(c, -1, axis=ax) - np.roll(c, 1, axis=ax)) / (2 * h)
            continue
        cm = np.moveaxis(c, ax, 0)
        o = np.zeros_like(cm)
        o[1:-1] = (cm[2:] - cm[:-2]) / (2 * h)
        o[0] = (cm[0] + cm[1]) / (2 * h)
        o[-1] = -(cm[-1] + cm[-2]) / (2 * h)
        out += np.moveaxis(o, 0, ax)
    return out


def face_diff(grid: Grid, f: np.ndarray, ax: int) -> np.ndarray:
    """f[i+1] - f[i] along ``ax`` over interior faces (all faces if periodic)."""
    if grid.periodic:
        return np.roll(f, -1, axis=ax) - f
    return np.diff(f, axis=ax)


def neumann_laplacian(grid: Grid) -> sp.csr_matrix:
    """Five-point (2d+1-point) Laplacian with zero normal flux at the boundary."""
    mats = []
    for n, h in zip(grid.shape, grid.h):
        main = -2.0 * np.ones(n)
        off = np.ones(n - 1)
        D = sp.diags([off, main, off], [-1, 0, 1], format="lil")
        if grid.periodic:
            D[0, n - 1] = 1.0
            D[n - 1, 0] = 1.0
        else:
            D[0, 0] = -1.0
            D[n - 1, n - 1] = -1.0
        mats.append(sp.csr_matrix(D) / h**2)
    L = sp.csr_matrix((grid.n_cells, grid.n_cells))
    for ax, D in enumerate(mats):
        term = sp.identity(1, format="csr")
        for k, n in enumerate(grid.shape):
            term = sp.kron(term, D if k == ax else sp.identity(n), format="csr")
        L = L + term
    return L.tocsr()


# ---------------------------------------------------------------------------
# Mollification, truncation, extension
# ---------------------------------------------------------------------------


def mollifier_kernel(grid: Grid, delta: float) -> np.ndarray:
    """Quartic bump (1 - |x|^2/delta^2)^2 sampled at cell offsets, unit sum."""
    half = [int(math.floor(delta / h)) for h in grid.h]
    offs = np.meshgrid(*[np.arange(-k, k + 1) * h for k, h in zip(half, grid.h)], indexing="ij")
    rr = sum(o**2 for o in offs) / delta**2
    ker = np.where(rr < 1.0, (1.0 - rr) ** 2, 0.0)
    return ker / ker.sum()


def mollify(grid: Grid, f: np.ndarray, delta: float) -> np.ndarray:
    """Convolution with the discrete radius-``delta`` bump.

    Non-periodic fields are extended by zero outside the domain before
    convolving.  ``delta < h`` cannot be resolved and falls back to the
    identity (with a warning unless ``delta == 0``).
    """
    grid.check(f)
    if delta <= 0:
        return np.array(f, dtype=float)
    if delta < grid.hmin:
        warnings.warn(f"mollification radius {delta:g} below grid spacing; identity used",
                      stacklevel=2)
        return np.array(f, dtype=float)
    ker = mollifier_kernel(grid, delta)
    mode = "wrap" if grid.periodic else "constant"
    f = np.asarray(f, dtype=float)
    if f.ndim == grid.d:
        return ndi.correlate(f, ker, mode=mode, cval=0.0)
    flat = f.reshape(grid.shape + (-1,))
    out = np.stack([ndi.correlate(flat[..., k], ker, mode=mode, cval=0.0)
                    for k in range(flat.shape[-1])], axis=-1)
    return out.reshape(f.shape)


def interior_mask(grid: Grid, delta: float) -> np.ndarray:
    """Cells whose center lies at distance >= 2 delta from the boundary."""
    if delta <= 0:
        return np.ones(grid.shape, dtype=bool)
    return grid.boundary_distance() >= 2 * delta


def truncate(grid: Grid, f: np.ndarray, delta: float) -> np.ndarray:
    grid.check(f)
    mask = interior_mask(grid, delta)
    return np.where(mask.reshape(mask.shape + (1,) * (np.ndim(f) - grid.d)), f, 0.0)


def mollified_truncation(grid: Grid, v: np.ndarray, delta: float) -> np.ndarray:
    """omega_delta * T_delta(v): vanishes within distance delta of the boundary."""
    return mollify(grid, truncate(grid, v, delta), delta)


def extend_zero(grid: Grid, f: np.ndarray, pad: int) -> tuple[Grid, np.ndarray]:
    """Embed ``f`` in a grid enlarged by ``pad`` cells per side, zero outside."""
    grid.check(f)
    big = Grid(tuple(n + 2 * pad for n in grid.shape),
               tuple(l + 2 * pad * h for l, h in zip(grid.lengths, grid.h)),
               tuple(o - pad * h for o, h in zip(grid.origin, grid.h)))
    widths = [(pad, pad)] * grid.d + [(0, 0)] * (np.ndim(f) - grid.d)
    return big, np.pad(np.asarray(f, dtype=float), widths)


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


def magnitude(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Pointwise |f| (Euclidean / Frobenius for vectors and tensors)."""
    kind = grid.check(f)
    f = np.asarray(f, dtype=float)
    if kind == "scalar":
        return np.abs(f)
    axes = tuple(range(grid.d, f.ndim))
    return np.sqrt(np.sum(f * f, axis=axes))


def lebesgue_norm(grid: Grid, f: np.ndarray, p: float = 2.0) -> float:
    """Midpoint-rule L^p norm; ``p = inf`` gives the max norm."""
    if p < 1:
        raise ValueError("p must be >= 1")
    m = magnitude(grid, f)
    if math.isinf(p):
        return float(m.max())
    return float(np.sum(m**p) * grid.cell_volume) ** (1.0 / p)


def inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    grid.check(f)
    grid.check(g)
    return float(np.sum(np.asarray(f) * np.asarray(g)) * grid.cell_volume)


def integral(grid: Grid, f: np.ndarray) -> float:
    grid.check(f, "scalar")
    return float(np.sum(f) * grid.cell_volume)


# ---------------------------------------------------------------------------
# Field dumps
# ---------------------------------------------------------------------------

_AXIS_KEYS = ("x", "y", "z")


def _pack_sym(T: np.ndarray, d: int) -> np.ndarray:
    iu = np.triu_indices(d)
    return T[..., iu[0], iu[1]]


def _unpack_sym(P: np.ndarray, d: int) -> np.ndarray:
    iu = np.triu_indices(d)
    T = np.zeros(P.shape[:-1] + (d, d))
    T[..., iu[0], iu[1]] = P
    T[..., iu[1], iu[0]] = P
    return T


def write_field(path, grid: Grid, f: np.ndarray) -> Path:
    """Write one JSON header line followed by little-endian float64 data.

    Data is C-ordered over ``(n_x, n_y[, n_z], components)``; symmetric
    tensors are packed as their upper triangle, row by row.  The file is
    written to a temporary name and renamed into place.
    """
    kind = grid.check(f)
    data = np.asarray(f, dtype=float)
    if kind == "symtensor":
        data = _pack_sym(data, grid.d)
    k = 1 if kind == "scalar" else data.shape[-1]
    header = {"kind": kind, "components": k, "periodic": grid.periodic}
    for key, n, l in zip(_AXIS_KEYS, grid.shape, grid.lengths):
        header[f"n{key}"] = n
        header[f"l{key}"] = l
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(np.ascontiguousarray(data).astype("<f8").tobytes())
    tmp.replace(path)
    return path


def read_field(path) -> tuple[Grid, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        raw = np.frombuffer(fh.read(), dtype="<f8")
    keys = [k for k in _AXIS_KEYS if f"n{k}" in header]
    grid = Grid(tuple(header[f"n{k}"] for k in keys), tuple(header[f"l{k}"] for k in keys),
                periodic=header.get("periodic", False))
    k = header["components"]
    data = raw.reshape(grid.shape + ((k,) if header["kind"] != "scalar" else ()))
    if header["kind"] == "symtensor":
        data = _unpack_sym(data, grid.d)
    return grid, data.astype(float)
