"""Convex models for the rate potential psi: R^m -> R and the stored-energy
density F: M^{m x n} -> R, with exact gradients, Hessian actions and Legendre
transforms.

Power-law variants carry an optional regularization eps >= 0:

    psi(w) = (1/p) * ((|w|^2 + eps^2)^(p/2) - eps^p)

(identically for F on the Frobenius norm).  eps = 0 recovers the plain
(1/p)|w|^p model, which is non-differentiable at 0 when p < 2; gradients
there raise `SingularPoint`.  All models are normalized to vanish at the
origin and stay nonnegative.

Evaluation is vectorized: arguments are shaped (m,) / (m, N) for psi and
(m, n) / (m, n, N) for F, reducing over the leading component axes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy.optimize import brentq

from .errors import ModelMismatch, SingularPoint

__all__ = [
    "PPower",
    "Quadratic",
    "PPowerNorm",
    "QuadraticFrobenius",
    "DissipationSpec",
    "EnergySpec",
    "psi_eval",
    "psi_grad",
    "psi_hess_apply",
    "psi_legendre",
    "dissipation_potential",
    "F_eval",
    "F_grad",
    "F_hess_apply",
    "growth_exponent",
    "with_eps",
    "GrowthReport",
    "check_growth_coercivity",
]


@dataclass(frozen=True)
class PPower:
    """psi(w) = ((|w|^2 + eps^2)^(p/2) - eps^p) / p on R^m."""

    p: float
    eps: float = 0.0
    m: int = 1

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")


@dataclass(frozen=True)
class Quadratic:
    """psi(w) = w . A w / 2 with A symmetric positive definite."""

    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be a square matrix")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        if np.linalg.eigvalsh(A).min() <= 0:
            raise ValueError("A must be positive definite")
        A = A.copy()
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def alpha(self) -> float:
        """Smallest eigenvalue of A."""
        return float(np.linalg.eigvalsh(self.A).min())

    @property
    def A_max(self) -> float:
        """Largest eigenvalue of A."""
        return float(np.linalg.eigvalsh(self.A).max())


@dataclass(frozen=True)
class PPowerNorm:
    """F(M) = ((|M|^2 + eps^2)^(p/2) - eps^p) / p, |.| Frobenius on M^{m x n}."""

    p: float
    eps: float = 0.0
    m: int = 1
    n: int = 1

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")


@dataclass(frozen=True)
class QuadraticFrobenius:
    """F(M) = theta * |M|^2 / 2; uniformly convex with both constants theta."""

    theta: float
    m: int = 1
    n: int = 1

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")


DissipationSpec = Union[PPower, Quadratic]
EnergySpec = Union[PPowerNorm, QuadraticFrobenius]


def with_eps(spec, eps: float):
    """Copy of a power-law spec at a different regularization level.

    Quadratic specs are returned unchanged (they have no eps).
    """
    if isinstance(spec, (PPower, PPowerNorm)):
        return replace(spec, eps=float(eps))
    return spec


def growth_exponent(spec) -> float:
    """The p in the coercivity/growth conditions for one model variant."""
    if isinstance(spec, (PPower, PPowerNorm)):
        return spec.p
    return 2.0


def _sq_mag(arr: np.ndarray, axes) -> np.ndarray:
    return np.sum(arr * arr, axis=axes)


def _power_eval(p: float, eps: float, s: np.ndarray):
    # s = |arg|^2 + eps^2
    return ((s + eps * eps) ** (p / 2.0) - eps**p) / p


def _power_coef(p: float, eps: float, s: np.ndarray, what: str) -> np.ndarray:
    """Radial coefficient s -> (s + eps^2)^(exponent) with singular guard.

    what = "grad" gives (p-2)/2, what = "hess" gives (p-4)/2; entries with
    s + eps^2 == 0 are set to 0 (they always multiply the zero vector).
    """
    t = s + eps * eps
    expo = (p - 2.0) / 2.0 if what == "grad" else (p - 4.0) / 2.0
    if eps == 0.0 and p < 2.0 and np.any(t == 0.0):
        raise SingularPoint(
            f"p = {p} power model is not differentiable at 0; use eps > 0"
        )
    with np.errstate(divide="ignore"):
        coef = np.where(t > 0.0, t, 1.0) ** expo
    # t = 0 only reaches here with a nonnegative exponent; t^0 == 1
    fill = 1.0 if expo == 0.0 else 0.0
    return np.where(t > 0.0, coef, fill)


def psi_eval(spec: DissipationSpec, w) -> np.ndarray:
    """psi(w) for w shaped (m,) or (m, N); returns scalar or (N,)."""
    w = np.asarray(w, dtype=float)
    if isinstance(spec, PPower):
        return _power_eval(spec.p, spec.eps, _sq_mag(w, 0))
    return 0.5 * np.einsum("i...,ij,j...->...", w, spec.A, w)


def psi_grad(spec: DissipationSpec, w) -> np.ndarray:
    """Exact gradient of psi_eval; raises SingularPoint for p < 2, eps = 0, w = 0."""
    w = np.asarray(w, dtype=float)
    if isinstance(spec, PPower):
        coef = _power_coef(spec.p, spec.eps, _sq_mag(w, 0), "grad")
        return coef[None, ...] * w
    return np.einsum("ij,j...->i...", spec.A, w)


def psi_hess_apply(spec: DissipationSpec, w, x) -> np.ndarray:
    """Action of the Hessian D^2 psi(w) on a direction x (same shape as w)."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if isinstance(spec, PPower):
        s = _sq_mag(w, 0)
        c1 = _power_coef(spec.p, spec.eps, s, "grad")
        c2 = (spec.p - 2.0) * _power_coef(spec.p, spec.eps, s, "hess")
        wx = np.sum(w * x, axis=0)
        return c1[None, ...] * x + (c2 * wx)[None, ...] * w
    return np.einsum("ij,j...->i...", spec.A, x)


def _power_legendre(p: float, eps: float, t: np.ndarray) -> np.ndarray:
    """Conjugate of r -> ((r^2+eps^2)^(p/2)-eps^p)/p at dual magnitude t >= 0.

    eps = 0 has the closed form t^q / q, q = p/(p-1).  For eps > 0 the
    optimal radius solves (r^2+eps^2)^((p-2)/2) r = t, a strictly increasing
    equation solved to ~1e-15 by bracketed root finding.
    """
    if eps == 0.0:
        q = p / (p - 1.0)
        return t**q / q

    def radius(ti: float) -> float:
        if ti == 0.0:
            return 0.0
        g = lambda r: (r * r + eps * eps) ** ((p - 2.0) / 2.0) * r - ti
        hi = max(ti ** (1.0 / (p - 1.0)), ti, 1.0)
        while g(hi) < 0.0:
            hi *= 2.0
        return brentq(g, 0.0, hi, xtol=1e-300, rtol=1e-15)

    t = np.asarray(t, dtype=float)
    r = np.vectorize(radius)(t)
    return r * t - _power_eval(p, eps, r * r)


def psi_legendre(spec: DissipationSpec, xi) -> np.ndarray:
    """Legendre transform psi*(xi) = sup_w { w.xi - psi(w) }."""
    xi = np.asarray(xi, dtype=float)
    if isinstance(spec, PPower):
        t = np.sqrt(_sq_mag(xi, 0))
        return _power_legendre(spec.p, spec.eps, t)
    Ainv_xi = np.einsum("ij,j...->i...", np.linalg.inv(spec.A), xi)
    return 0.5 * np.sum(xi * Ainv_xi, axis=0)


def dissipation_potential(spec: DissipationSpec, w) -> np.ndarray:
    """psi*(Dpsi(w)) computed through the exact identity Dpsi(w).w - psi(w)."""
    w = np.asarray(w, dtype=float)
    return np.sum(psi_grad(spec, w) * w, axis=0) - psi_eval(spec, w)


def F_eval(spec: EnergySpec, M) -> np.ndarray:
    """F(M) for M shaped (m, n) or (m, n, N); returns scalar or (N,)."""
    M = np.asarray(M, dtype=float)
    if isinstance(spec, PPowerNorm):
        return _power_eval(spec.p, spec.eps, _sq_mag(M, (0, 1)))
    return 0.5 * spec.theta * _sq_mag(M, (0, 1))


def F_grad(spec: EnergySpec, M) -> np.ndarray:
    """Exact gradient DF(M); SingularPoint as for psi_grad."""
    M = np.asarray(M, dtype=float)
    if isinstance(spec, PPowerNorm):
        coef = _power_coef(spec.p, spec.eps, _sq_mag(M, (0, 1)), "grad")
        return coef[None, None, ...] * M
    return spec.theta * M


def F_hess_apply(spec: EnergySpec, M, X) -> np.ndarray:
    """Action of D^2 F(M) on a direction X (same shape as M)."""
    M = np.asarray(M, dtype=float)
    X = np.asarray(X, dtype=float)
    if isinstance(spec, PPowerNorm):
        s = _sq_mag(M, (0, 1))
        c1 = _power_coef(spec.p, spec.eps, s, "grad")
        c2 = (spec.p - 2.0) * _power_coef(spec.p, spec.eps, s, "hess")
        MX = np.sum(M * X, axis=(0, 1))
        return c1[None, None, ...] * X + (c2 * MX)[None, None, ...] * M
    return spec.theta * X


# --- coercivity and growth verification -----------------------------------


def _variant_constants(spec):
    """(gamma, beta, C) valid for one variant at its own growth exponent."""
    if isinstance(spec, PPower) or isinstance(spec, PPowerNorm):
        p, eps = spec.p, spec.eps
        gamma = 1.0 / p
        beta = eps**p / p
        C = (1.0 + eps) ** max(p - 2.0, 0.0)
        return gamma, beta, C
    if isinstance(spec, Quadratic):
        return spec.alpha / 2.0, 0.0, spec.A_max
    return spec.theta / 2.0, 0.0, spec.theta


@dataclass(frozen=True)
class GrowthReport:
    gamma: float
    beta: float
    C: float
    p: float
    passed: bool
    coercivity_margin: float  # min relative margin (lhs - rhs) / scale; >= 0 passes
    growth_margin: float  # min relative margin (bound - |Dpsi| - |DF|) / scale


def check_growth_coercivity(
    dspec: DissipationSpec,
    espec: EnergySpec,
    sample_count: int,
    gamma: float | None = None,
    beta: float | None = None,
    C: float | None = None,
    seed: int = 0,
) -> GrowthReport:
    """Sample-verify psi(w) + F(M) >= gamma(|w|^p + |M|^p) - beta and
    |Dpsi(w)| + |DF(M)| <= C(|w|^(p-1) + |M|^(p-1) + 1).

    Constants default to the variants' analytic values; callers may pass
    weaker ones to confirm a specific certificate.  Both models must share
    one growth exponent p.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    p = growth_exponent(dspec)
    if growth_exponent(espec) != p:
        raise ModelMismatch(
            f"growth exponents differ: psi has p={p}, F has p={growth_exponent(espec)}"
        )
    g1, b1, c1 = _variant_constants(dspec)
    g2, b2, c2 = _variant_constants(espec)
    gamma = min(g1, g2) if gamma is None else float(gamma)
    beta = b1 + b2 if beta is None else float(beta)
    C = c1 + c2 if C is None else float(C)

    m = dspec.m
    mn = (espec.m, espec.n)
    rng = np.random.default_rng(seed)
    radii = np.concatenate([[0.0], np.logspace(-3, 3, max(1, sample_count - 1))])
    coer_margin = np.inf
    grow_margin = np.inf
    for r in radii:
        w = rng.standard_normal(m)
        M = rng.standard_normal(mn)
        nw = np.linalg.norm(w)
        nM = np.linalg.norm(M)
        w = w * (r / nw if nw > 0 else 0.0)
        M = M * (r / nM if nM > 0 else 0.0)
        aw, aM = np.linalg.norm(w), np.linalg.norm(M)
        lhs = float(psi_eval(dspec, w) + F_eval(espec, M))
        rhs = gamma * (aw**p + aM**p) - beta
        scale = max(1.0, abs(lhs), abs(rhs))
        coer_margin = min(coer_margin, (lhs - rhs) / scale)
        try:
            gnorm = float(
                np.linalg.norm(psi_grad(dspec, w)) + np.linalg.norm(F_grad(espec, M))
            )
        except SingularPoint:
            continue  # p < 2 exact models: growth bound holds in the limit
        bound = C * (aw ** (p - 1.0) + aM ** (p - 1.0) + 1.0)
        grow_margin = min(grow_margin, (bound - gnorm) / max(1.0, bound, gnorm))

    tol = -1e-12
    passed = coer_margin >= tol and grow_margin >= tol
    return GrowthReport(gamma, beta, C, p, passed, float(coer_margin), float(grow_margin))
