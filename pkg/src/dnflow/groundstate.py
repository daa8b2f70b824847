"""p-Rayleigh quotients along the homogeneous flow and two computers of the
optimal quotient and its ground states.

`ground_state_via_flow` runs the implicit scheme for the p-power models,
renormalizing the iterate to unit L^p norm after each step and refreshing
the step size from the current quotient; the quotient is nonincreasing along
the flow and its stall is the stopping signal.  `direct_rayleigh_minimize`
is an independent oracle: projected gradient descent on the quotient itself
(steps along the Euler-Lagrange defect, preconditioned by the inverse of a
separately assembled 5-point Laplacian), never touching the time-stepping
machinery.

Profiles are gauge-fixed to a canonical representative: sign flipped so the
first component's nodal sum is nonnegative and, for m > 1, rotated by an
orthogonal matrix aligning the dominant component direction with the first
coordinate axis (ground states are unique at best modulo scalar and
orthogonal factors).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from .diagnostics import SeriesReport
from .errors import DegenerateFit, ModelMismatch, ZeroCollapse, ZeroField
from .grids import (
    Grid,
    VectorField,
    divergence_values,
    gradient_values,
    lp_norm,
    rayleigh_quotient,
    w1p_seminorm,
)
from .models import F_grad, F_hess_apply, PPower, PPowerNorm
from .scheme import StepConfig, Trajectory, step

__all__ = [
    "FlowConfig",
    "GroundStateReport",
    "LambdaBoundsReport",
    "DecayFitReport",
    "rayleigh_series",
    "ground_state_via_flow",
    "direct_rayleigh_minimize",
    "el_residual",
    "lambda_bounds_check",
    "decay_rate_fit",
]


@dataclass(frozen=True)
class FlowConfig:
    """Knobs shared by both ground-state solvers.

    rq_tol:       relative quotient-stall tolerance (stopping criterion).
    stall_sweeps: consecutive stalled sweeps required before stopping (the
                  quotient is second-order in the profile error, so a single
                  lucky stall can leave the profile underconverged).
    max_sweeps:   iteration cap.
    eps:          regularization for the p-power models; None picks 0 for
                  p >= 2 and 1e-8 below (the models are singular at 0 there).
    residual_tol: inner-step tolerance for the flow solver; None scales it
                  off the iterate's energy.
    """

    rq_tol: float = 1e-10
    stall_sweeps: int = 1
    max_sweeps: int = 10_000
    eps: float | None = None
    residual_tol: float | None = None
    max_iter: int = 200

    def __post_init__(self):
        if not self.rq_tol > 0:
            raise ValueError("rq_tol must be positive")
        if self.max_sweeps < 1 or self.stall_sweeps < 1:
            raise ValueError("max_sweeps and stall_sweeps must be >= 1")


@dataclass(frozen=True)
class GroundStateReport:
    p: float
    m: int
    lambda_estimate: float
    upsilon: float  # lambda_estimate ** (1 / (p - 1))
    profile: VectorField  # unit L^p norm, gauge-fixed
    rayleigh_history: np.ndarray
    iterations: int
    converged: bool


@dataclass(frozen=True)
class LambdaBoundsReport:
    passed: bool
    lambda_vec: float
    lambda_scalar: float
    lower: float  # m^(-|p/2-1|) * lambda_scalar - slack
    upper: float  # lambda_scalar + slack
    slack: float


@dataclass(frozen=True)
class DecayFitReport:
    fitted_rate: float  # least-squares decay rate of log E_F
    bound_rate: float  # p * log(1 + tau * upsilon_h) / tau
    passed: bool
    max_bound_excess: float  # worst E_k / (bound_k * (1 + 1e-8)) - 1


def _require_ppower(traj_or_pair, p: float):
    dspec, espec = traj_or_pair
    ok = (
        isinstance(dspec, PPower)
        and isinstance(espec, PPowerNorm)
        and dspec.p == p
        and espec.p == p
    )
    if not ok:
        raise ModelMismatch(f"operation requires p-power models with p = {p}")


def rayleigh_series(traj: Trajectory, p: float) -> SeriesReport:
    """Quotient of each iterate, asserted nonincreasing within solver slack.

    The series truncates at the first zero iterate; a zero initial datum
    raises ZeroField.  The slack scales like 1 / |v^k|_p^p: solver noise in
    the quotient grows as the field decays.
    """
    _require_ppower((traj.dspec, traj.espec), p)
    if lp_norm(traj.fields[0], p) == 0.0:
        raise ZeroField("rayleigh_series needs a nonzero initial datum")
    values = []
    denoms = []
    for f in traj.fields:
        b = lp_norm(f, p) ** p
        if b == 0.0:
            break
        values.append(w1p_seminorm(f, p) ** p / b)
        denoms.append(b)
    values = np.array(values)
    times = traj.times()[: len(values)]
    tol = traj.residual_tol
    violation = 0.0
    passed = True
    for k in range(len(values) - 1):
        inc = values[k + 1] - values[k]
        violation = max(violation, inc)
        if inc > 100.0 * tol / denoms[k + 1]:
            passed = False
    slack = 100.0 * tol / min(denoms)
    return SeriesReport(
        name="rayleigh",
        times=times,
        values=values,
        monotone_violation=float(max(violation, 0.0)),
        slack=float(slack),
        passed=passed,
    )


def _canonicalize(field: VectorField) -> VectorField:
    """Sign/rotation gauge: dominant direction along axis 1, component-1 sum >= 0."""
    vals = field.values
    m = vals.shape[0]
    if m > 1:
        # rotate the left singular frame so the dominant direction is e_1
        U, _, _ = np.linalg.svd(vals, full_matrices=True)
        if np.linalg.det(U) < 0:
            U[:, -1] *= -1.0
        vals = U.T @ vals
    if vals[0].sum() < 0:
        vals = -vals
    return VectorField(field.grid, vals)


def ground_state_via_flow(
    g: VectorField, p: float, cfg: FlowConfig | None = None
) -> GroundStateReport:
    """Scheme-step / renormalize iteration for the optimal p-Rayleigh quotient.

    Each sweep takes one implicit step of size tau = 1 / Upsilon_guess
    (refreshed from the current quotient, keeping the contraction factor
    near 1/2), renormalizes to unit L^p norm, and recomputes the quotient;
    stops when the quotient changes by at most rq_tol relatively over a
    sweep, or at the sweep cap.
    """
    cfg = cfg or FlowConfig()
    if lp_norm(g, p) == 0.0:
        raise ZeroField("ground-state flow needs a nonzero start")
    eps = cfg.eps if cfg.eps is not None else (0.0 if p >= 2 else 1e-8)
    m = g.m
    dspec = PPower(p, eps, m=m)
    espec = PPowerNorm(p, eps, m=m, n=g.grid.dim)

    u = g * (1.0 / lp_norm(g, p))
    quot = rayleigh_quotient(u, p)
    history = [quot]
    converged = False
    sweeps = 0
    stalled = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        upsilon_guess = quot ** (1.0 / (p - 1.0))
        tau = 1.0 / upsilon_guess
        tol = cfg.residual_tol
        if tol is None:
            tol = 1e-11 * max(1.0, quot)
        v1, _ = step(u, dspec, espec, StepConfig(tau=tau, residual_tol=tol, max_iter=cfg.max_iter))
        nrm = lp_norm(v1, p)
        if nrm < 1e-300:
            raise ZeroCollapse("flow iterate collapsed before renormalization")
        u = v1 * (1.0 / nrm)
        new_quot = rayleigh_quotient(u, p)
        history.append(new_quot)
        stalled = stalled + 1 if abs(new_quot - quot) <= cfg.rq_tol * new_quot else 0
        quot = new_quot
        if stalled >= cfg.stall_sweeps:
            converged = True
            break
    return GroundStateReport(
        p=p,
        m=m,
        lambda_estimate=quot,
        upsilon=quot ** (1.0 / (p - 1.0)),
        profile=_canonicalize(u * (1.0 / lp_norm(u, p))),
        rayleigh_history=np.array(history),
        iterations=sweeps,
        converged=converged,
    )


def _laplacian_matrix(grid: Grid) -> sp.csc_matrix:
    """Dirichlet 5-point Laplacian (positive operator), assembled via kron."""
    blocks = []
    for a in range(grid.dim):
        n = grid.interior_counts[a]
        h = grid.spacing[a]
        main = np.full(n, 2.0 / h**2)
        off = np.full(n - 1, -1.0 / h**2)
        blocks.append(sp.diags([off, main, off], [-1, 0, 1], format="csc"))
    if grid.dim == 1:
        return blocks[0]
    I0 = sp.identity(grid.interior_counts[0], format="csc")
    I1 = sp.identity(grid.interior_counts[1], format="csc")
    return (sp.kron(blocks[0], I1) + sp.kron(I0, blocks[1])).tocsc()


def _weighted_laplacian(grid: Grid, wcell: np.ndarray) -> sp.csc_matrix:
    """Dirichlet form sum_cells w_c sum_a (edge difference)_a^2 / h_a^2 as a
    sparse matrix on interior nodes; w floored away from zero so the factor
    stays nonsingular (preconditioner use only)."""
    wcell = np.maximum(wcell, 1e-10 * wcell.mean() + 1e-300)
    cells = np.indices(grid.cell_shape).reshape(grid.dim, -1)  # low-corner padded index

    def interior_flat(idx):
        ok = np.ones(idx.shape[1], dtype=bool)
        for a in range(grid.dim):
            ok &= (idx[a] >= 1) & (idx[a] <= grid.shape[a])
        flat = np.zeros(idx.shape[1], dtype=np.int64)
        for a in range(grid.dim):
            flat = flat * grid.shape[a] + (idx[a] - 1)
        return np.where(ok, flat, -1)

    rows, cols, vals = [], [], []
    for a in range(grid.dim):
        coeff = wcell / grid.spacing[a] ** 2
        lo = interior_flat(cells)
        hi_idx = cells.copy()
        hi_idx[a] += 1
        hi = interior_flat(hi_idx)
        both = (lo >= 0) & (hi >= 0)
        rows += [lo[lo >= 0], hi[hi >= 0], lo[both], hi[both]]
        cols += [lo[lo >= 0], hi[hi >= 0], hi[both], lo[both]]
        vals += [coeff[lo >= 0], coeff[hi >= 0], -coeff[both], -coeff[both]]
    n = grid.n_nodes
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsc()


def _el_defect_values(grid: Grid, vals: np.ndarray, lam: float, p: float, eps: float):
    """div(|Du|^(p-2)Du) + lam |u|^(p-2) u as raw nodal values."""
    espec = PPowerNorm(p, eps, m=vals.shape[0], n=grid.dim)
    flux = F_grad(espec, gradient_values(grid, vals))
    s = np.sum(vals * vals, axis=0)
    with np.errstate(divide="ignore"):
        coef = np.where(s > 0, s, 1.0) ** ((p - 2.0) / 2.0)
    zero_order = np.where(s > 0, coef, 0.0)[None, :] * vals
    return divergence_values(grid, flux) + lam * zero_order


def el_residual(u: VectorField, lam: float, p: float) -> float:
    """Weighted norm of the discrete Euler-Lagrange defect
    div(|Du|^(p-2)Du) + lam |u|^(p-2) u; raises ZeroField on u == 0."""
    if not np.any(u.values):
        raise ZeroField("Euler-Lagrange residual of the zero field is undefined")
    r = _el_defect_values(u.grid, u.values, lam, p, eps=0.0)
    return float(np.sqrt(u.grid.weight * np.sum(r * r)))


def direct_rayleigh_minimize(
    grid: Grid, p: float, m: int, seed: int, cfg: FlowConfig | None = None
) -> GroundStateReport:
    """Independent quotient minimizer: projected gradient descent on the
    p-Rayleigh quotient from a seeded random start.

    The descent direction is the Euler-Lagrange defect of the current
    iterate, preconditioned by the inverse of a separately assembled
    Dirichlet Laplacian (the quotient's gradient on the unit-L^p sphere is
    proportional to that defect, so its zeros are exactly the critical
    points); the step is backtracked on the quotient and the iterate is
    renormalized to unit L^p norm each sweep.
    """
    cfg = cfg or FlowConfig()
    eps = cfg.eps if cfg.eps is not None else (0.0 if p >= 2 else 1e-8)
    rng = np.random.default_rng(seed)
    # smooth random start: a few random low modes, kept away from sign-symmetric traps
    x = grid.node_positions()
    base = np.ones(grid.n_nodes)
    for a in range(grid.dim):
        base = base * np.sin(np.pi * x[:, a] / grid.lengths[a])
    vals = np.empty((m, grid.n_nodes))
    for c in range(m):
        bump = base.copy()
        for a in range(grid.dim):
            bump = bump + 0.2 * rng.standard_normal() * np.sin(
                2 * np.pi * x[:, a] / grid.lengths[a]
            ) * base
        vals[c] = (0.5 + rng.random()) * bump
    u = vals / lp_norm(VectorField(grid, vals), p)

    def quotient(vals_):
        f = VectorField(grid, vals_)
        return w1p_seminorm(f, p) ** p / lp_norm(f, p) ** p

    quot = quotient(u)
    history = [quot]
    s_step = 1.0
    converged = False
    sweeps = 0
    stalled = 0
    m_comp = u.shape[0]
    espec_reg = PPowerNorm(p, eps, m=m_comp, n=grid.dim)
    for sweeps in range(1, cfg.max_sweeps + 1):
        # steepest descent in the metric H = G^T D^2F(Du) G + quot * Z''(u),
        # where Z'' is the zero-order Hessian of the constraint term (it
        # carries the |u|^(p-2) boundary-layer stiffness that dominates for
        # p < 2).  Solved by CG preconditioned with the |Du|^(p-2)-weighted
        # Dirichlet form plus the matching diagonal; reduces to shifted
        # inverse iteration at p = 2.
        du = gradient_values(grid, u)
        s = np.sum(du * du, axis=(0, 1)) + eps * eps
        with np.errstate(divide="ignore"):
            wcell = np.where(s > 0, s, 1.0) ** ((p - 2.0) / 2.0)
        wcell = np.where(s > 0, wcell, 0.0)
        su = np.sum(u * u, axis=0) + eps * eps
        with np.errstate(divide="ignore"):
            znode = np.where(su > 0, su, 1.0) ** ((p - 2.0) / 2.0)
        znode = np.where(su > 0, znode, 0.0)
        A_pre = _weighted_laplacian(grid, wcell) + quot * sp.diags(znode)
        lu = splu(A_pre.tocsc())

        def hess_mv(x, _du=du, _znode=znode):
            x2 = x.reshape(m_comp, -1)
            hx = -divergence_values(
                grid, F_hess_apply(espec_reg, _du, gradient_values(grid, x2))
            )
            zx = _znode[None, :] * x2 + (
                (p - 2.0)
                * np.where(su > 0, np.where(su > 0, su, 1.0) ** ((p - 4.0) / 2.0), 0.0)
                * np.sum(u * x2, axis=0)
            )[None, :] * u
            return (hx + quot * zx).reshape(-1)

        n_flat = m_comp * grid.n_nodes
        H = LinearOperator((n_flat, n_flat), matvec=hess_mv)
        M = LinearOperator(
            (n_flat, n_flat),
            matvec=lambda x: np.stack(
                [lu.solve(xc) for xc in x.reshape(m_comp, -1)]
            ).reshape(-1),
        )
        defect = _el_defect_values(grid, u, quot, p, eps)
        d_flat, _info = cg(
            H, defect.reshape(-1), rtol=1e-10, atol=0.0, maxiter=200, M=M
        )
        d = d_flat.reshape(m_comp, -1)
        if not np.all(np.isfinite(d)):
            d = np.stack([lu.solve(defect[c]) for c in range(m_comp)])
        accepted = False
        for _ in range(60):
            trial = u + s_step * d
            tn = lp_norm(VectorField(grid, trial), p)
            if tn > 1e-300:
                trial = trial / tn
                q_try = quotient(trial)
                if q_try <= quot:
                    accepted = True
                    break
            s_step *= 0.5
        if not accepted:
            converged = True  # cannot decrease the quotient: stationary
            break
        u = trial
        s_step = min(1.0, 1.5 * s_step)
        stalled = stalled + 1 if abs(q_try - quot) <= cfg.rq_tol * max(q_try, 1e-300) else 0
        quot = q_try
        history.append(quot)
        if stalled >= cfg.stall_sweeps:
            converged = True
            break
    field = VectorField(grid, u)
    field = field * (1.0 / lp_norm(field, p))
    return GroundStateReport(
        p=p,
        m=m,
        lambda_estimate=quot,
        upsilon=quot ** (1.0 / (p - 1.0)),
        profile=_canonicalize(field),
        rayleigh_history=np.array(history),
        iterations=sweeps,
        converged=converged,
    )


def lambda_bounds_check(
    lambda_vec: float, lambda_scalar: float, p: float, m: int, slack_rel: float = 1e-6
) -> LambdaBoundsReport:
    """Vector-vs-scalar bracket m^(-|p/2-1|) lambda <= Lambda <= lambda."""
    slack = slack_rel * lambda_scalar
    lower = lambda_scalar * m ** (-abs(p / 2.0 - 1.0)) - slack
    upper = lambda_scalar + slack
    return LambdaBoundsReport(
        passed=bool(lower <= lambda_vec <= upper),
        lambda_vec=lambda_vec,
        lambda_scalar=lambda_scalar,
        lower=lower,
        upper=upper,
        slack=slack,
    )


def decay_rate_fit(traj: Trajectory, p: float, upsilon_h: float) -> DecayFitReport:
    """Fit the decay rate of int |Dv|^p and compare against the scheme's
    exact per-step bound (1 + tau * upsilon_h)^(-p).

    fitted_rate is the least-squares slope of -log E over the step times;
    passed requires every recorded energy to sit below
    exp(-bound_rate * t_k) * E_0 * (1 + 1e-8).
    """
    _require_ppower((traj.dspec, traj.espec), p)
    if traj.N < 8:
        raise ValueError("decay_rate_fit needs at least 8 steps")
    E = np.array([w1p_seminorm(f, p) ** p for f in traj.fields])
    if np.any(E <= 0.0):
        raise DegenerateFit("energy reached zero; no decay rate to fit")
    times = traj.times()
    slope = np.polyfit(times, np.log(E), 1)[0]
    fitted = -float(slope)
    bound = p * math.log1p(traj.tau * upsilon_h) / traj.tau
    ratio = E / (E[0] * np.exp(-bound * times) * (1.0 + 1e-8))
    return DecayFitReport(
        fitted_rate=fitted,
        bound_rate=bound,
        passed=bool(np.all(ratio <= 1.0)),
        max_bound_excess=float(ratio.max() - 1.0),
    )
