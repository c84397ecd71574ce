"""Pointwise constitutive laws: power-law and regularized Herschel-Bulkley
stress, barotropic pressure, and the (r, gamma) admissibility calculus.

Stress laws act on stacks of symmetric matrices of shape ``(..., d, d)``.
Both stress families share the isotropic form

    S(A) = a(|A|) A + b(|tr A|) tr(A) I

with scalar "secant" coefficients ``a`` and ``b``; the momentum solver only
talks to a law through :meth:`shear_coef`, :meth:`bulk_coef` and the matching
potentials, so the two families are interchangeable there.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

# Guard on |A| used inside linearization coefficients only (never in direct
# evaluation, where S(0) = 0 is set explicitly).
GRAD_GUARD = 1e-14

# Quartic correction of the g_eps blend.
_BLEND_C = 0.3

# Gauss-Legendre nodes for the antiderivative of s*g_eps(s) on the blend.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def frob(A: np.ndarray) -> np.ndarray:
    """Frobenius norm over the last two axes."""
    return np.sqrt(np.einsum("...ij,...ij->...", A, A))


def _check_sym(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected (..., d, d) matrices, got shape {A.shape}")
    if np.isnan(A).any():
        raise ValueError("NaN entries in stress argument")
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if np.abs(A - np.swapaxes(A, -1, -2)).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("stress argument must be symmetric")
    return A


def _pow_or_zero(s: np.ndarray, e: float) -> np.ndarray:
    """s**e with the value 0 at s = 0 (only meaningful when multiplied by s)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    nz = s > 0
    out[nz] = s[nz] ** e
    return out


def _eye_like(A: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.eye(A.shape[-1]), A.shape)


# ---------------------------------------------------------------------------
# Herschel-Bulkley regularizer g_eps
# ---------------------------------------------------------------------------


def _blend_m(s, eps):
    u = (s - 0.5 * eps) / eps
    return eps * (1.0 + 0.5 * u**2 + _BLEND_C * u**2 * (1.0 - u) ** 2)


def _blend_dm(s, eps):
    u = (s - 0.5 * eps) / eps
    return u + 2.0 * _BLEND_C * u * (1.0 - u) * (1.0 - 2.0 * u)


def hb_g_eps(s, eps: float):
    """Regularized 1/s: equal to 1/eps on [0, eps/2] and 1/s beyond 3 eps/2.

    On the blend interval g = 1/m with a quartic m that matches value and
    slope of both branches, so g is C^1 and non-increasing.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    s = np.asarray(s, dtype=float)
    if (s < 0).any():
        raise ValueError("g_eps is defined for s >= 0")
    out = np.empty_like(s)
    lo = s <= 0.5 * eps
    hi = s >= 1.5 * eps
    mid = ~(lo | hi)
    out[lo] = 1.0 / eps
    out[hi] = 1.0 / s[hi]
    out[mid] = 1.0 / _blend_m(s[mid], eps)
    return out if out.ndim else float(out)


def hb_g_eps_prime(s, eps: float):
    """Derivative of :func:`hb_g_eps`."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    hi = s >= 1.5 * eps
    mid = (s > 0.5 * eps) & ~hi
    out[hi] = -1.0 / s[hi] ** 2
    out[mid] = -_blend_dm(s[mid], eps) / _blend_m(s[mid], eps) ** 2
    return out if out.ndim else float(out)


def _hb_primitive(s, eps):
    """int_0^s t g_eps(t) dt."""
    s = np.asarray(s, dtype=float)
    a, b = 0.5 * eps, 1.5 * eps
    out = np.empty_like(s)
    lo = s <= a
    out[lo] = 0.5 * s[lo] ** 2 / eps
    rest = ~lo
    if rest.any():
        top = np.minimum(s[rest], b)
        half = 0.5 * (top - a)
        t = a + half[:, None] * (_GL_X[None, :] + 1.0)
        blend = half * np.sum(_GL_W * t / _blend_m(t, eps), axis=-1)
        out[rest] = 0.5 * a**2 / eps + blend + np.maximum(s[rest] - b, 0.0)
    return out


# ---------------------------------------------------------------------------
# Parameter records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawParams:
    """S(A) = mu0 |A|^{r-2} A + lambda0 |tr A|^{r-2} tr(A) I."""

    mu0: float
    lambda0: float
    r: float

    def __post_init__(self):
        if not self.mu0 > 0:
            raise ValueError("mu0 must be > 0")
        if not self.lambda0 >= 0:
            raise ValueError("lambda0 must be >= 0")
        if not self.r > 1:
            raise ValueError("r must be > 1")

    def growth_constants(self, d: int) -> tuple[float, float]:
        """(C1, C2) with |S(A)| <= C1 |A|^{r-1} and S(A):A >= C2 |A|^r."""
        return self.mu0 + self.lambda0 * d ** (self.r / 2), self.mu0

    # coefficient interface used by the momentum solver
    def shear_coef(self, s, guard: bool = False):
        if guard:
            return self.mu0 * np.maximum(s, GRAD_GUARD) ** (self.r - 2)
        return self.mu0 * _pow_or_zero(s, self.r - 2)

    def bulk_coef(self, t, guard: bool = False):
        if self.lambda0 == 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        if guard:
            return self.lambda0 * np.maximum(t, GRAD_GUARD) ** (self.r - 2)
        return self.lambda0 * _pow_or_zero(t, self.r - 2)

    def shear_curv(self, s):
        """(A''(s) - A'(s)/s)/s^2 for the shear potential A; s > 0."""
        return self.mu0 * (self.r - 2) * np.asarray(s, dtype=float) ** (self.r - 4)

    def bulk_curv(self, t):
        """Second derivative of the bulk potential; t > 0."""
        if self.lambda0 == 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        return self.lambda0 * (self.r - 1) * np.asarray(t, dtype=float) ** (self.r - 2)

    def shear_potential(self, s):
        return self.mu0 * np.asarray(s, dtype=float) ** self.r / self.r

    def bulk_potential(self, t):
        return self.lambda0 * np.asarray(t, dtype=float) ** self.r / self.r

    def stress(self, A):
        return eval_stress_power_law(A, self)


@dataclass(frozen=True)
class HBRegParams:
    """Regularized Herschel-Bulkley law nu |A|^{r-2} A + tau* g_eps(|A|) A."""

    tau_star: float
    nu: float
    r: float
    eps_reg: float

    def __post_init__(self):
        for name in ("tau_star", "nu", "eps_reg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.r > 1:
            raise ValueError("r must be > 1")

    def shear_coef(self, s, guard: bool = False):
        s = np.asarray(s, dtype=float)
        if guard:
            power = self.nu * np.maximum(s, GRAD_GUARD) ** (self.r - 2)
        else:
            power = self.nu * _pow_or_zero(s, self.r - 2)
        return power + self.tau_star * hb_g_eps(s, self.eps_reg)

    def bulk_coef(self, t, guard: bool = False):
        return np.zeros_like(np.asarray(t, dtype=float))

    def shear_curv(self, s):
        s = np.asarray(s, dtype=float)
        return (self.nu * (self.r - 2) * s ** (self.r - 4)
                + self.tau_star * hb_g_eps_prime(s, self.eps_reg) / s)

    def bulk_curv(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def shear_potential(self, s):
        s = np.asarray(s, dtype=float)
        return self.nu * s**self.r / self.r + self.tau_star * _hb_primitive(s, self.eps_reg)

    def bulk_potential(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def plastic_part(self, A):
        """P_eps(A) = tau* g_eps(|A|) A."""
        A = np.asarray(A, dtype=float)
        P = self.tau_star * np.asarray(hb_g_eps(frob(A), self.eps_reg))[..., None, None] * A
        # rounding in tau A/|A| can overshoot tau by an ulp; pull back onto the ball
        for _ in range(4):
            n = frob(P)
            over = n > self.tau_star
            if not over.any():
                break
            safe = np.where(over, n, 1.0)
            P = P * np.where(over, self.tau_star / safe * (1.0 - 2.0**-52), 1.0)[..., None, None]
        return P

    def stress(self, A):
        return eval_stress_hb_reg(A, self)


StressModel = PowerLawParams | HBRegParams


@dataclass(frozen=True)
class PressureLaw:
    """p(rho) = a rho^gamma."""

    a: float
    gamma: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be > 0")
        if not self.gamma > 1:
            raise ValueError("gamma must be > 1")

    def __call__(self, rho):
        return eval_pressure(rho, self)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def eval_stress_power_law(A, p: PowerLawParams, d: int | None = None) -> np.ndarray:
    A = _check_sym(A)
    if d is not None and A.shape[-1] != d:
        raise ValueError(f"matrix size {A.shape[-1]} does not match d={d}")
    s = frob(A)
    tr = np.trace(A, axis1=-2, axis2=-1)
    shear = p.mu0 * _pow_or_zero(s, p.r - 2)
    bulk = p.lambda0 * _pow_or_zero(np.abs(tr), p.r - 2) * tr
    return shear[..., None, None] * A + bulk[..., None, None] * _eye_like(A)


def eval_stress_hb_reg(A, p: HBRegParams) -> np.ndarray:
    A = _check_sym(A)
    s = frob(A)
    return p.shear_coef(s)[..., None, None] * A


def eval_pressure(rho, law: PressureLaw):
    rho = np.asarray(rho, dtype=float)
    if (rho < 0).any():
        raise ValueError("density must be nonnegative")
    out = law.a * rho**law.gamma
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Admissibility of (d, r, gamma)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    r_lower: float
    gamma_lower: float
    branch: str
    q1_star: float | None = None
    q2_star: float | None = None
    open_ended: bool = False

    def lines(self) -> list[str]:
        out = [
            f"admissible: {self.admissible}",
            f"branch: {self.branch}",
            f"r_lower = {self.r_lower:.6g}",
            f"gamma_lower = {self.gamma_lower:.6g}",
        ]
        if self.q1_star is not None:
            flag = " (open-ended)" if self.open_ended else ""
            out.append(f"q1_star = {self.q1_star:.6g}{flag}")
            out.append(f"q2_star = {self.q2_star:.6g}{flag}")
        return out


def _gamma_lower(d: int, r: float) -> float:
    if r >= d:
        return 1.0
    return d * (r - 1) / ((d + 2) * r - 3 * d)


def admissible(d: int, r: float, gamma: float) -> AdmissibilityReport:
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    if not (r > 1 and gamma > 1):
        raise ValueError("r and gamma must exceed 1")
    r_lower = 3 * d / (d + 2)
    if r >= d:
        branch = "r >= d"
        ok = gamma > 1
        g_lo = 1.0
    elif r > r_lower:
        branch = "3d/(d+2) < r < d"
        g_lo = _gamma_lower(d, r)
        ok = gamma > g_lo
    else:
        branch = "r <= 3d/(d+2)"
        g_lo = math.inf
        ok = False
    q1 = q2 = None
    open_ended = False
    if ok:
        q1, q2, open_ended = _duals(d, r, gamma)
    return AdmissibilityReport(ok, r_lower, g_lo, branch, q1, q2, open_ended)


def _duals(d, r, gamma):
    tail = (r - 1) / (r * gamma)
    if r < d:
        return 1.0 / (1.0 / r - 1.0 / d + tail), 1.0 / (2.0 / r - 2.0 / d + tail), False
    top = 1.0 / tail
    return top, top, r == d


def dual_exponents(d: int, r: float, gamma: float, with_flag: bool = False):
    """Integrability exponents (q1*, q2*) of the a priori estimates.

    For r = d the admissible range is open at r gamma / (r - 1); that endpoint
    is returned and ``with_flag=True`` additionally returns ``open_ended``.
    """
    rep = admissible(d, r, gamma)
    if not rep.admissible:
        raise ValueError(f"(d, r, gamma) = ({d}, {r}, {gamma}) is not admissible")
    if with_flag:
        return rep.q1_star, rep.q2_star, rep.open_ended
    return rep.q1_star, rep.q2_star
