"""The implicit time scheme for D(psi)(v_t) = div DF(Dv).

Each step advances v^{k-1} to v^k by minimizing the strictly convex discrete
functional

    J(u) = w * [ sum_cells F(Du) + tau * sum_nodes psi((u - v^{k-1}) / tau) ]

over interior nodal values (w = quadrature weight).  The stationarity
condition is the discrete weak form of the step equation; the solver drives
its quadrature-weighted defect norm below `residual_tol` with a damped
Newton-CG iteration (Jacobi-preconditioned conjugate gradients on the
Hessian action, Armijo backtracking, gradient-descent fallback).

Non-smooth power models (p < 2, or eps below the target) are handled by an
eps-continuation: the step is solved for a short schedule of decreasing
regularization levels, warm-starting each solve at the previous level's
minimizer, and the reported residual is always measured in the target
models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NonConvergence, OutOfRange
from .grids import Grid, VectorField, divergence_values, gradient_values
from .models import (
    DissipationSpec,
    EnergySpec,
    F_eval,
    F_grad,
    PPower,
    PPowerNorm,
    psi_eval,
    psi_grad,
    with_eps,
)

__all__ = [
    "StepConfig",
    "StepStats",
    "Trajectory",
    "energy",
    "weak_residual",
    "default_residual_tol",
    "step",
    "evolve",
    "interpolants",
]


@dataclass(frozen=True)
class StepConfig:
    """Solver knobs for one implicit step.

    tau:           time-step size (required by `step`; `evolve` sets T/N).
    residual_tol:  stopping tolerance on the weighted defect norm; None means
                   the default 1e-9 * max(1, E_F(initial datum)).
    max_iter:      Newton iteration cap per regularization level.
    eps_schedule:  nonincreasing regularization levels ending at the models'
                   own eps; None derives a short schedule automatically.
    """

    tau: float | None = None
    residual_tol: float | None = None
    max_iter: int = 200
    eps_schedule: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.tau is not None and not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.residual_tol is not None and not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.eps_schedule is not None:
            sched = tuple(float(e) for e in self.eps_schedule)
            if any(b > a for a, b in zip(sched, sched[1:])):
                raise ValueError("eps_schedule must be nonincreasing")
            object.__setattr__(self, "eps_schedule", sched)


@dataclass(frozen=True)
class StepStats:
    iterations: int
    residual: float
    value: float  # discrete step functional at the accepted minimizer


@dataclass(frozen=True)
class Trajectory:
    """Scheme output {v^0 = g, v^1, ..., v^N} with per-step solver statistics."""

    grid: Grid
    m: int
    dspec: DissipationSpec
    espec: EnergySpec
    tau: float
    fields: tuple[VectorField, ...]
    stats: tuple[StepStats, ...]
    residual_tol: float

    @property
    def N(self) -> int:
        return len(self.fields) - 1

    @property
    def T(self) -> float:
        return self.tau * self.N

    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)


def energy(espec: EnergySpec, field: VectorField) -> float:
    """E_F(u) = w * sum_cells F(Du)."""
    g = gradient_values(field.grid, field.values)
    return float(field.grid.weight * np.sum(F_eval(espec, g)))


def default_residual_tol(espec: EnergySpec, g: VectorField) -> float:
    return 1e-9 * max(1.0, energy(espec, g))


def _defect(grid, u_vals, vp_vals, dspec, espec, tau):
    """Strong-form defect Dpsi((u - v_prev)/tau) - div DF(Du), shape (m, N)."""
    delta = (u_vals - vp_vals) / tau
    du = gradient_values(grid, u_vals)
    return psi_grad(dspec, delta) - divergence_values(grid, F_grad(espec, du))


def weak_residual(
    v_next: VectorField,
    v_prev: VectorField,
    dspec: DissipationSpec,
    espec: EnergySpec,
    tau: float,
) -> float:
    """Quadrature-weighted Euclidean norm of the discrete step-equation defect."""
    if v_next.grid != v_prev.grid or v_next.m != v_prev.m:
        raise ValueError("fields live on different grids or component counts")
    r = _defect(v_next.grid, v_next.values, v_prev.values, dspec, espec, tau)
    return float(np.sqrt(v_next.grid.weight * np.sum(r * r)))


def _functional(grid, u_vals, vp_vals, dspec, espec, tau):
    delta = (u_vals - vp_vals) / tau
    du = gradient_values(grid, u_vals)
    return grid.weight * (
        float(np.sum(F_eval(espec, du))) + tau * float(np.sum(psi_eval(dspec, delta)))
    )


def _diag_scale(grid, delta, du, dspec, espec, tau):
    """Nodal Jacobi scale for the step Hessian (isotropic parts only)."""
    if isinstance(dspec, PPower):
        s = np.sum(delta * delta, axis=0) + dspec.eps**2
        with np.errstate(divide="ignore"):
            cpsi = np.where(s > 0, s, 1.0) ** ((dspec.p - 2.0) / 2.0)
        cpsi = np.where(s > 0, cpsi, 0.0)
    else:
        cpsi = np.full(grid.n_nodes, np.trace(dspec.A) / dspec.A.shape[0])
    if isinstance(espec, PPowerNorm):
        s = np.sum(du * du, axis=(0, 1)) + espec.eps**2
        with np.errstate(divide="ignore"):
            cF = np.where(s > 0, s, 1.0) ** ((espec.p - 2.0) / 2.0)
        cF = np.where(s > 0, cF, 0.0)
    else:
        cF = np.full(grid.n_cells, espec.theta)
    # node diagonal of G^T cF G: adjacent-cell coefficients over h^2 per axis
    h = grid.spacing
    if grid.dim == 1:
        lap = (cF[1:] + cF[:-1]) / h[0] ** 2
    else:
        n1, n2 = grid.shape
        c = cF.reshape(n1 + 1, n2 + 1)
        lap = (c[1:, 1:] + c[:-1, 1:]) / h[0] ** 2 + (c[1:, 1:] + c[1:, :-1]) / h[1] ** 2
        lap = lap.reshape(-1)
    d = cpsi / tau + lap
    floor = 1e-300 + 1e-12 * d.max(initial=0.0)
    return np.maximum(d, floor)


def _power_hess_coeffs(p, eps, s):
    """(c1, c2) with D^2 of the radial power model = c1*I + c2 * arg (x) arg."""
    t = s + eps * eps
    with np.errstate(divide="ignore"):
        base = np.where(t > 0.0, t, 1.0)
        c1 = base ** ((p - 2.0) / 2.0)
        c2 = (p - 2.0) * base ** ((p - 4.0) / 2.0)
    fill1 = 1.0 if p == 2.0 else 0.0
    c1 = np.where(t > 0.0, c1, fill1)
    c2 = np.where(t > 0.0, c2, 0.0)
    return c1, c2


def _make_hessian_apply(grid, delta, du, dspec, espec, tau, mu):
    """Hessian action of the step functional's defect, with all model
    coefficients precomputed (called once per Newton iteration)."""
    if isinstance(dspec, PPower):
        s = np.sum(delta * delta, axis=0)
        c1p, c2p = _power_hess_coeffs(dspec.p, dspec.eps, s)
        c1p = c1p[None, :]

        def psi_part(x):
            return c1p * x + (c2p * np.sum(delta * x, axis=0))[None, :] * delta

    else:
        A = dspec.A

        def psi_part(x):
            return np.einsum("ij,jk->ik", A, x)

    if isinstance(espec, PPowerNorm):
        sF = np.sum(du * du, axis=(0, 1))
        c1f, c2f = _power_hess_coeffs(espec.p, espec.eps, sF)
        c1f = c1f[None, None, :]

        def f_part(gx):
            return c1f * gx + (c2f * np.sum(du * gx, axis=(0, 1)))[None, None, :] * du

    else:
        theta = espec.theta

        def f_part(gx):
            return theta * gx

    inv_tau = 1.0 / tau

    def apply(x):
        hx = inv_tau * psi_part(x) - divergence_values(grid, f_part(gradient_values(grid, x)))
        if mu > 0.0:
            hx = hx + mu * x
        return hx

    return apply


def _pcg(apply_h, b, inv_diag, rtol, maxiter):
    """Plain preconditioned conjugate gradients on (m, N) arrays."""
    x = np.zeros_like(b)
    r = b.copy()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x, True
    z = r * inv_diag
    pvec = z.copy()
    rz = float(np.sum(r * z))
    for _ in range(maxiter):
        q = apply_h(pvec)
        pq = float(np.sum(pvec * q))
        if pq <= 0.0 or not math.isfinite(pq):
            return x, False  # lost positive definiteness
        alpha = rz / pq
        x += alpha * pvec
        r -= alpha * q
        if float(np.linalg.norm(r)) <= rtol * b_norm:
            return x, True
        z = r * inv_diag
        rz_new = float(np.sum(r * z))
        pvec = z + (rz_new / rz) * pvec
        rz = rz_new
    return x, True  # truncated CG directions still descend


def _minimize_level(grid, u0, vp_vals, dspec, espec, tau, tol, max_iter):
    """Damped Newton-CG on the step functional for one regularization level.

    Returns (values, iterations, residual).  The defect norm is measured in
    this level's models; the caller re-checks against the target models.
    """
    w = grid.weight
    sqw = math.sqrt(w)
    u = u0.copy()
    J = _functional(grid, u, vp_vals, dspec, espec, tau)
    r = _defect(grid, u, vp_vals, dspec, espec, tau)
    res = sqw * float(np.linalg.norm(r))
    iters = 0
    mu = 0.0  # Levenberg shift, raised only on CG/line-search trouble

    while res > tol and iters < max_iter:
        iters += 1
        delta = (u - vp_vals) / tau
        du = gradient_values(grid, u)
        diag = _diag_scale(grid, delta, du, dspec, espec, tau)
        inv_diag = (1.0 / diag)[None, :]
        apply_h = _make_hessian_apply(grid, delta, du, dspec, espec, tau, mu)

        # loose forcing far from the solution, tight only in the endgame
        if res > 100.0 * tol:
            rtol = 1e-2
        else:
            rtol = min(1e-2, max(0.05 * tol / res, 1e-14))
        d, ok = _pcg(apply_h, -r, inv_diag, rtol, maxiter=600)
        slope = w * float(np.sum(r * d)) if ok and np.all(np.isfinite(d)) else 0.0
        if slope >= 0.0:
            # no descent from CG (degenerate Hessian); raise the Levenberg
            # shift for later iterations and take a scaled gradient step
            mu = max(10.0 * mu, 1e-8 * float(diag.mean()))
            d = -r * inv_diag
            slope = w * float(np.sum(r * d))
            if slope >= 0.0:
                break  # stationary to rounding

        t = 1.0
        accepted = False
        fuzz = 1e-14 * (abs(J) + 1e-300)  # rounding slack in the functional sum
        while t >= 1e-14:
            u_try = u + t * d
            J_try = _functional(grid, u_try, vp_vals, dspec, espec, tau)
            if J_try <= J + 1e-4 * t * slope + fuzz:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break  # cannot decrease: at the minimizer within rounding
        u = u_try
        J = J_try
        r = _defect(grid, u, vp_vals, dspec, espec, tau)
        res = sqw * float(np.linalg.norm(r))
    return u, iters, res


def _resolve_schedule(cfg_schedule, dspec, espec):
    """Regularization levels to visit, ending at the models' own eps."""
    targets = [s.eps for s in (dspec, espec) if isinstance(s, (PPower, PPowerNorm))]
    target = min(targets) if targets else 0.0
    if cfg_schedule is not None:
        levels = [e for e in cfg_schedule if e > target]
    else:
        levels = []
        needs_smoothing = any(
            isinstance(s, (PPower, PPowerNorm)) and s.p < 2 and s.eps < 1e-4
            for s in (dspec, espec)
        )
        if needs_smoothing:
            levels = [e for e in (1e-2, 1e-4) if e > target]
    return levels + [target]


def step(
    v_prev: VectorField,
    dspec: DissipationSpec,
    espec: EnergySpec,
    cfg: StepConfig,
) -> tuple[VectorField, StepStats]:
    """One implicit step: the unique minimizer of the step functional.

    Postconditions: the weighted defect norm of the returned field is at most
    cfg.residual_tol, and its functional value does not exceed the value at
    v_prev.  Raises NonConvergence if the iteration budget runs out first.
    """
    if cfg.tau is None:
        raise ValueError("StepConfig.tau must be set")
    tau = cfg.tau
    grid = v_prev.grid
    tol = cfg.residual_tol
    if tol is None:
        tol = default_residual_tol(espec, v_prev)

    if not np.any(v_prev.values):
        # 0 is the global minimizer: psi, F >= 0 with equality at 0
        zero = VectorField.zeros(grid, v_prev.m)
        return zero, StepStats(iterations=0, residual=0.0, value=0.0)

    vp = v_prev.values
    u = vp.copy()
    total_iters = 0
    res = np.inf
    schedule = _resolve_schedule(cfg.eps_schedule, dspec, espec)
    for i, eps in enumerate(schedule):
        d_lvl = with_eps(dspec, eps)
        e_lvl = with_eps(espec, eps)
        final = i == len(schedule) - 1
        lvl_tol = tol if final else max(tol, 1e-4)
        if final and i > 0:
            # never let a warm start leave us above the target functional at v_prev
            if _functional(grid, u, vp, d_lvl, e_lvl, tau) > _functional(
                grid, vp, vp, d_lvl, e_lvl, tau
            ):
                u = vp.copy()
        u, iters, res = _minimize_level(
            grid, u, vp, d_lvl, e_lvl, tau, lvl_tol, cfg.max_iter
        )
        total_iters += iters

    if res > tol:
        raise NonConvergence(
            f"step solver stalled at residual {res:.3e} > tol {tol:.3e} "
            f"after {total_iters} iterations"
        )
    value = _functional(grid, u, vp, dspec, espec, tau)
    return VectorField(grid, u), StepStats(total_iters, res, value)


def evolve(
    g: VectorField,
    dspec: DissipationSpec,
    espec: EnergySpec,
    T: float,
    N: int,
    cfg: StepConfig | None = None,
) -> Trajectory:
    """Run the scheme from v^0 = g with tau = T/N for N steps."""
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    cfg = cfg or StepConfig()
    tau = T / N
    tol = cfg.residual_tol if cfg.residual_tol is not None else default_residual_tol(espec, g)
    step_cfg = replace(cfg, tau=tau, residual_tol=tol)

    fields = [g]
    stats = []
    for k in range(1, N + 1):
        try:
            v_next, st = step(fields[-1], dspec, espec, step_cfg)
        except NonConvergence as exc:
            raise NonConvergence(f"step k={k}: {exc}") from exc
        fields.append(v_next)
        stats.append(st)
    return Trajectory(
        grid=g.grid,
        m=g.m,
        dspec=dspec,
        espec=espec,
        tau=tau,
        fields=tuple(fields),
        stats=tuple(stats),
        residual_tol=tol,
    )


def interpolants(traj: Trajectory, t: float) -> tuple[VectorField, VectorField]:
    """(piecewise-constant, piecewise-linear) interpolants at time t in [0, T].

    The constant interpolant equals v^k on (tau_{k-1}, tau_k]; the linear one
    joins consecutive iterates.  Both equal v^k at t = tau_k exactly.
    """
    T = traj.T
    fuzz = 1e-12 * max(T, 1.0)
    if t < -fuzz or t > T + fuzz:
        raise OutOfRange(f"t = {t} outside [0, {T}]")
    t = min(max(t, 0.0), T)
    tau = traj.tau
    if t == 0.0:
        return traj.fields[0], traj.fields[0]

    k_const = min(traj.N, max(1, int(math.ceil(t / tau - 1e-12))))
    v_const = traj.fields[k_const]

    j = min(traj.N - 1, int(math.floor(t / tau + 1e-12)))
    theta = (t - j * tau) / tau
    theta = min(max(theta, 0.0), 1.0)
    v_lin = traj.fields[j] + theta * (traj.fields[j + 1] - traj.fields[j])
    return v_const, v_lin
