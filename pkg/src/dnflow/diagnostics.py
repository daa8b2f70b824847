"""Monitored quantities along scheme trajectories: energy and its
dissipation bookkeeping, the monotone series the scheme is guaranteed to
produce (dissipation potential, scaled energy, Rayleigh-adjacent checks),
the scalar maximum principle, and the local regularity probes (excess over
parabolic cylinders, second-derivative and velocity-gradient norms).

Every monotone assertion carries a slack proportional to the trajectory's
per-step residual tolerance: the underlying statements are exact for the
exact minimizers, and only inexact inner solves can violate them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelMismatch, NotScalar, OutOfDomain
from .grids import Grid, gradient_values, w1p_seminorm
from .models import (
    PPower,
    PPowerNorm,
    Quadratic,
    QuadraticFrobenius,
    dissipation_potential,
    psi_grad,
)
from .scheme import Trajectory, energy

__all__ = [
    "SeriesReport",
    "RegularityReport",
    "energy_series",
    "dissipation_series",
    "max_principle_check",
    "scaled_energy_report",
    "energy_convexity_check",
    "excess",
    "regularity_norms",
]


@dataclass(frozen=True)
class SeriesReport:
    """A monitored time series with its monotonicity verdict.

    `monotone_violation` is the largest violation of the asserted behavior
    (an increase where a decrease is asserted, or a bound excess), measured
    in the scale stated by each producer; `passed` is exactly
    monotone_violation <= slack.
    """

    name: str
    times: np.ndarray
    values: np.ndarray
    monotone_violation: float
    slack: float
    passed: bool
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if len(times) != len(values):
            raise ValueError("times and values must have equal length")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("series values must be finite")
        if self.passed != (self.monotone_violation <= self.slack):
            raise ValueError("passed flag inconsistent with violation vs slack")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)


def _deltas(traj: Trajectory):
    """Backward difference quotients (v^k - v^{k-1}) / tau, k = 1..N."""
    return [
        (traj.fields[k].values - traj.fields[k - 1].values) / traj.tau
        for k in range(1, traj.N + 1)
    ]


def energy_series(traj: Trajectory) -> SeriesReport:
    """E_F(v^k) per step with dissipation bookkeeping.

    aux carries the cumulative dissipation sum_{j<=k} tau * w * Dpsi(d^j).d^j
    and the energy-balance defect per k, measured one-sidedly: the scheme
    satisfies cumulative + E_F(v^k) <= E_F(g) exactly (the convexity gap is
    nonnegative), so only its positive part can indict the solver.
    """
    w = traj.grid.weight
    E = np.array([energy(traj.espec, f) for f in traj.fields])
    rates = [
        w * float(np.sum(psi_grad(traj.dspec, d) * d)) for d in _deltas(traj)
    ]
    cum = np.concatenate([[0.0], np.cumsum(traj.tau * np.array(rates))])
    signed_gap = cum + E - E[0]
    step_defect = np.array(
        [
            max(0.0, traj.tau * rates[k - 1] + E[k] - E[k - 1])
            for k in range(1, traj.N + 1)
        ]
    )
    violation = float(np.max(np.diff(E), initial=0.0))
    slack = 10.0 * traj.residual_tol
    return SeriesReport(
        name="energy",
        times=traj.times(),
        values=E,
        monotone_violation=max(violation, 0.0),
        slack=slack,
        passed=bool(max(violation, 0.0) <= slack),
        aux={
            "cumulative_dissipation": cum,
            "identity_defect": np.maximum(signed_gap, 0.0),
            "signed_gap": signed_gap,
            "step_defect": step_defect,
        },
    )


def dissipation_series(traj: Trajectory) -> SeriesReport:
    """w * sum_nodes psi*(Dpsi(d^k)) per step, asserted nonincreasing.

    Computed through the exact identity psi*(Dpsi(w)) = Dpsi(w).w - psi(w);
    slack 10 * residual_tol * (1 + 1/tau), since the underlying proof tests
    the step equations against the difference quotients themselves.
    """
    if traj.N < 2:
        raise ValueError("dissipation_series needs at least 2 steps")
    w = traj.grid.weight
    values = np.array(
        [w * float(np.sum(dissipation_potential(traj.dspec, d))) for d in _deltas(traj)]
    )
    times = traj.times()[1:]
    violation = float(np.max(np.diff(values), initial=0.0))
    slack = 10.0 * traj.residual_tol * (1.0 + 1.0 / traj.tau)
    return SeriesReport(
        name="dissipation",
        times=times,
        values=values,
        monotone_violation=max(violation, 0.0),
        slack=slack,
        passed=bool(max(violation, 0.0) <= slack),
    )


def max_principle_check(traj: Trajectory) -> SeriesReport:
    """sup |v^k| <= sup |g| + slack for scalar trajectories."""
    if traj.m != 1:
        raise NotScalar("the maximum principle check applies to m = 1 only")
    values = np.array([np.abs(f.values).max(initial=0.0) for f in traj.fields])
    violation = float(np.max(values - values[0], initial=0.0))
    slack = 10.0 * traj.residual_tol
    return SeriesReport(
        name="max_principle",
        times=traj.times(),
        values=values,
        monotone_violation=max(violation, 0.0),
        slack=slack,
        passed=bool(max(violation, 0.0) <= slack),
    )


def _require_power_pair(traj: Trajectory) -> float:
    if not (isinstance(traj.dspec, PPower) and isinstance(traj.espec, PPowerNorm)):
        raise ModelMismatch("p-power models required")
    if traj.dspec.p != traj.espec.p:
        raise ModelMismatch("psi and F must share one exponent p")
    return traj.dspec.p


def scaled_energy_report(traj: Trajectory, upsilon: float) -> SeriesReport:
    """exp(p*upsilon*t_k) * int |Dv^k|^p, checked nonincreasing.

    The check is exact (up to solver slack) when upsilon is the scheme's own
    per-step rate log(1 + tau*Y_h)/tau for the grid eigenvalue Y_h; the
    violation is reported back-scaled to the unscaled energy so the slack is
    the usual 10 * residual_tol.  aux carries the exponential-decay bound
    exp(-p*upsilon*t_k) * E_0 and its margins.
    """
    p = _require_power_pair(traj)
    if upsilon < 0:
        raise ValueError("upsilon must be nonnegative")
    E = np.array([w1p_seminorm(f, p) ** p for f in traj.fields])
    times = traj.times()
    scale = np.exp(p * upsilon * times)
    values = scale * E
    violation = float(
        np.max((values[1:] - values[:-1]) / scale[1:], initial=0.0)
    )
    slack = 10.0 * traj.residual_tol
    bound = E[0] / scale
    return SeriesReport(
        name="scaled_energy",
        times=times,
        values=values,
        monotone_violation=max(violation, 0.0),
        slack=slack,
        passed=bool(max(violation, 0.0) <= slack),
        aux={
            "seminorm_p": E,
            "decay_bound": bound,
            "decay_margin": bound * (1.0 + 1e-8) - E,
        },
    )


def energy_convexity_check(traj: Trajectory, p: float) -> SeriesReport:
    """Second differences of t -> int |Dv|^p must be >= -slack.

    Convexity in time is exact for the exact scheme (it follows from the
    dissipation monotonicity); slack 100 * residual_tol / tau^2.
    """
    if traj.N < 3:
        raise ValueError("energy_convexity_check needs at least 3 steps")
    pp = _require_power_pair(traj)
    if pp != p:
        raise ModelMismatch(f"trajectory models have p = {pp}, requested {p}")
    E = np.array([w1p_seminorm(f, p) ** p for f in traj.fields])
    second = E[2:] - 2.0 * E[1:-1] + E[:-2]
    violation = float(max(0.0, -second.min(initial=0.0)))
    slack = 100.0 * traj.residual_tol / traj.tau**2
    return SeriesReport(
        name="energy_convexity",
        times=traj.times(),
        values=E,
        monotone_violation=violation,
        slack=slack,
        passed=bool(violation <= slack),
        aux={"second_differences": second},
    )


# --- nodal derivative stencils (excess / regularity probes) ---------------
#
# These act on nodal values only: central differences inside, with the
# stencil shifted one-sidedly at the first interior layer.  All stencils
# are exact on affine data, which makes the excess vanish identically on
# space-time-affine fields.


def _shifted_diff(vals: np.ndarray, axis: int, h: float, order: int) -> np.ndarray:
    """order-1 or order-2 derivative along one axis of an (..., n) block."""
    v = np.moveaxis(vals, axis, -1)
    n = v.shape[-1]
    out = np.empty_like(v)
    if order == 1:
        if n >= 3:
            out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2 * h)
            out[..., 0] = (-3 * v[..., 0] + 4 * v[..., 1] - v[..., 2]) / (2 * h)
            out[..., -1] = (3 * v[..., -1] - 4 * v[..., -2] + v[..., -3]) / (2 * h)
        elif n == 2:
            out[..., :] = ((v[..., 1] - v[..., 0]) / h)[..., None]
        else:
            out[...] = 0.0
    else:
        if n >= 3:
            out[..., 1:-1] = (v[..., 2:] - 2 * v[..., 1:-1] + v[..., :-2]) / h**2
            out[..., 0] = (v[..., 0] - 2 * v[..., 1] + v[..., 2]) / h**2
            out[..., -1] = (v[..., -1] - 2 * v[..., -2] + v[..., -3]) / h**2
        else:
            out[...] = 0.0
    return np.moveaxis(out, -1, axis)


def _node_gradient(grid: Grid, vals: np.ndarray) -> np.ndarray:
    """(m, dim, *shape) nodal first derivatives of (m, n_nodes) values."""
    m = vals.shape[0]
    blocks = vals.reshape(m, *grid.shape)
    return np.stack(
        [_shifted_diff(blocks, 1 + a, grid.spacing[a], 1) for a in range(grid.dim)],
        axis=1,
    )


def _node_hessian(grid: Grid, vals: np.ndarray) -> np.ndarray:
    """(m, dim, dim, *shape) nodal second derivatives (mixed via repeated
    first differences, pure via 3-point second differences)."""
    m = vals.shape[0]
    blocks = vals.reshape(m, *grid.shape)
    dim = grid.dim
    out = np.empty((m, dim, dim, *grid.shape))
    firsts = [
        _shifted_diff(blocks, 1 + b, grid.spacing[b], 1) for b in range(dim)
    ]
    for a in range(dim):
        for b in range(dim):
            if a == b:
                out[:, a, a] = _shifted_diff(blocks, 1 + a, grid.spacing[a], 2)
            else:
                out[:, a, b] = _shifted_diff(firsts[b], 1 + a, grid.spacing[a], 1)
    return out


def _is_p2_pair(dspec, espec) -> bool:
    d_ok = isinstance(dspec, Quadratic) or (isinstance(dspec, PPower) and dspec.p == 2.0)
    e_ok = isinstance(espec, QuadraticFrobenius) or (
        isinstance(espec, PPowerNorm) and espec.p == 2.0
    )
    return d_ok and e_ok


def excess(
    traj: Trajectory,
    center_node: tuple[int, ...] | int,
    center_step: int,
    radius_cells: int,
) -> float:
    """Mean-square oscillation of (v_t, rescaled Dv, D^2 v) over a discrete
    parabolic cylinder of radius radius_cells * h around (node, step).

    The cylinder is the discrete ball of physical radius r = radius_cells*h
    times the step window of ceil(r^2 / (2 tau)) steps each side.  Raises
    OutOfDomain if the continuum cylinder clips the boundary or time range.
    Quadratic (p = 2) models only.
    """
    if not _is_p2_pair(traj.dspec, traj.espec):
        raise ModelMismatch("excess is defined for p = 2 models")
    if radius_cells < 1:
        raise ValueError("radius_cells must be >= 1")
    grid = traj.grid
    center = (center_node,) if isinstance(center_node, (int, np.integer)) else tuple(center_node)
    if len(center) != grid.dim:
        raise ValueError(f"center_node must have {grid.dim} indices")
    for a, i in enumerate(center):
        if not 0 <= i < grid.shape[a]:
            raise ValueError(f"center node index {i} outside axis {a}")

    h = max(grid.spacing)
    r = radius_cells * h
    pos = grid.node_positions()
    center_flat = int(np.ravel_multi_index(center, grid.shape))
    center_pos = pos[center_flat]
    for a in range(grid.dim):
        if center_pos[a] - r <= 0.0 or center_pos[a] + r >= grid.lengths[a]:
            raise OutOfDomain("spatial ball clips the domain boundary")
    half_steps = math.ceil(r * r / (2.0 * traj.tau))
    k_lo, k_hi = center_step - half_steps, center_step + half_steps
    if k_lo < 1 or k_hi > traj.N:
        raise OutOfDomain("time window clips the trajectory range")

    ball = np.flatnonzero(np.linalg.norm(pos - center_pos, axis=1) <= r + 1e-12 * h)
    offsets = pos[ball] - center_pos  # (n_ball, dim)

    vt_samples, dv_samples, d2v_samples = [], [], []
    for k in range(k_lo, k_hi + 1):
        delta = (traj.fields[k].values - traj.fields[k - 1].values) / traj.tau
        vt_samples.append(delta[:, ball])
        dv = _node_gradient(grid, traj.fields[k].values).reshape(traj.m, grid.dim, -1)
        dv_samples.append(dv[:, :, ball])
        d2v = _node_hessian(grid, traj.fields[k].values).reshape(
            traj.m, grid.dim, grid.dim, -1
        )
        d2v_samples.append(d2v[:, :, :, ball])
    vt = np.concatenate(vt_samples, axis=-1)  # (m, samples)
    dv = np.concatenate(dv_samples, axis=-1)  # (m, dim, samples)
    d2v = np.concatenate(d2v_samples, axis=-1)  # (m, dim, dim, samples)
    offs = np.concatenate([offsets.T] * (k_hi - k_lo + 1), axis=-1)  # (dim, samples)

    vt_mean = vt.mean(axis=-1, keepdims=True)
    dv_mean = dv.mean(axis=-1, keepdims=True)
    d2v_mean = d2v.mean(axis=-1)  # (m, dim, dim)

    term1 = float(np.mean(np.sum((vt - vt_mean) ** 2, axis=0)))
    correction = np.einsum("iab,bs->ias", d2v_mean, offs)
    term2 = float(np.mean(np.sum(((dv - dv_mean - correction) / r) ** 2, axis=(0, 1))))
    term3 = float(np.mean(np.sum((d2v - d2v_mean[..., None]) ** 2, axis=(0, 1, 2))))
    return term1 + term2 + term3


@dataclass(frozen=True)
class RegularityReport:
    d2v_l2: float  # squared L^2 norm of D^2 v on the shrunk interior x (0,T]
    dvt_l2_local: float  # squared cutoff-weighted L^2 norm of D v_t
    energy_rhs: float  # int (|v_t|^2 + |Dv|^2)
    cutoff_rhs: float  # int (|eta||eta_t| + |D eta|^2) |v_t|^2
    ratio_d2v: float
    ratio_dvt: float


def _bump(s: np.ndarray) -> np.ndarray:
    inside = np.abs(s) < 1.0
    return np.where(inside, (1.0 - s * s) ** 2, 0.0)


def _bump_prime(s: np.ndarray) -> np.ndarray:
    inside = np.abs(s) < 1.0
    return np.where(inside, -4.0 * s * (1.0 - s * s), 0.0)


def regularity_norms(traj: Trajectory, inner_margin_cells: int) -> RegularityReport:
    """Discrete versions of the interior second-derivative bound and the
    local velocity-gradient bound, reported as ratios against their
    right-hand sides (no thresholds: the continuum constants are
    existential).

    The cutoff is a tensor product of C^2 bumps (1 - s^2)^2 rescaled to the
    margin-shrunk box in space and to (0, T) in time.  Quadratic (p = 2)
    models only.
    """
    if not _is_p2_pair(traj.dspec, traj.espec):
        raise ModelMismatch("regularity_norms is defined for p = 2 models")
    if inner_margin_cells < 1:
        raise ValueError("inner_margin_cells must be >= 1")
    grid = traj.grid
    margin = inner_margin_cells
    for a, n in enumerate(grid.shape):
        if n <= 2 * margin:
            raise OutOfDomain(f"margin {margin} leaves no interior along axis {a}")

    w = grid.weight
    tau = traj.tau
    T = traj.T

    # shrunk-interior node mask
    mask = np.ones(grid.shape, dtype=bool)
    for a in range(grid.dim):
        idx = np.arange(grid.shape[a])
        keep = (idx >= margin) & (idx < grid.shape[a] - margin)
        mask = mask & np.expand_dims(keep, tuple(b for b in range(grid.dim) if b != a))
    mask_flat = mask.reshape(-1)

    # spatial bump on the shrunk box, at nodes and cell centers
    pos_nodes = grid.node_positions()
    centers = [
        (np.arange(n + 1) + 0.5) * h for n, h in zip(grid.shape, grid.spacing)
    ]
    mesh_c = np.meshgrid(*centers, indexing="ij")
    pos_cells = np.stack([mc.ravel() for mc in mesh_c], axis=-1)

    def space_parts(points):
        vals = np.ones(len(points))
        grads = np.zeros((grid.dim, len(points)))
        per_axis = []
        for a in range(grid.dim):
            half = grid.lengths[a] / 2.0 - margin * grid.spacing[a]
            s = (points[:, a] - grid.lengths[a] / 2.0) / half
            per_axis.append((_bump(s), _bump_prime(s) / half))
        for a in range(grid.dim):
            vals = vals * per_axis[a][0]
        for a in range(grid.dim):
            ga = per_axis[a][1]
            for b in range(grid.dim):
                if b != a:
                    ga = ga * per_axis[b][0]
            grads[a] = ga
        return vals, grads

    eta_nodes, deta_nodes = space_parts(pos_nodes)
    eta_cells, _ = space_parts(pos_cells)

    def time_parts(t):
        s = (2.0 * t - T) / T
        return _bump(np.array([s]))[0], _bump_prime(np.array([s]))[0] * 2.0 / T

    d2v_sq = 0.0
    dvt_sq = 0.0
    energy_rhs = 0.0
    cutoff_rhs = 0.0
    for k in range(1, traj.N + 1):
        t_k = k * tau
        chi, chi_t = time_parts(t_k)
        vals = traj.fields[k].values
        delta = (vals - traj.fields[k - 1].values) / tau

        d2v = _node_hessian(grid, vals).reshape(traj.m, grid.dim, grid.dim, -1)
        d2v_sq += tau * w * float(np.sum(d2v[..., mask_flat] ** 2))

        ddelta = gradient_values(grid, delta)
        eta_c = eta_cells * chi
        dvt_sq += tau * w * float(np.sum(eta_c**2 * np.sum(ddelta**2, axis=(0, 1))))

        dv = gradient_values(grid, vals)
        energy_rhs += tau * w * float(np.sum(delta**2) + np.sum(dv**2))

        eta_n = eta_nodes * chi
        eta_t_n = eta_nodes * chi_t
        deta_sq = chi**2 * np.sum(deta_nodes**2, axis=0)
        weight_n = np.abs(eta_n) * np.abs(eta_t_n) + deta_sq
        cutoff_rhs += tau * w * float(np.sum(weight_n * np.sum(delta**2, axis=0)))

    def ratio(num, den):
        return num / den if den > 0 else (0.0 if num == 0.0 else np.inf)

    return RegularityReport(
        d2v_l2=d2v_sq,
        dvt_l2_local=dvt_sq,
        energy_rhs=energy_rhs,
        cutoff_rhs=cutoff_rhs,
        ratio_d2v=ratio(d2v_sq, energy_rhs),
        ratio_dvt=ratio(dvt_sq, cutoff_rhs),
    )
