"""Scalar-only validation of the scheme's limit behavior: refinement
convergence of the piecewise-constant interpolants along a doubling chain
of step counts, and the per-step comparison principle.

Both are the testable shadows of the scalar well-posedness theory: the
interpolant sequence is Cauchy in the sup norm at matched times, and
ordered initial data stay ordered under the scheme (the scalar step
operator is monotone)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadOrder, NotScalar
from .grids import VectorField
from .models import DissipationSpec, EnergySpec
from .scheme import StepConfig, Trajectory, default_residual_tol, evolve

__all__ = [
    "RefinementReport",
    "ComparisonReport",
    "refinement_study",
    "comparison_check",
]


@dataclass(frozen=True)
class RefinementReport:
    N_list: tuple[int, ...]
    pairwise_sup_distances: tuple[float, ...]  # dist(v_N, v_2N) per doubling
    contraction_ratios: tuple[float, ...]
    passed: bool  # distances nonincreasing along the chain


@dataclass(frozen=True)
class ComparisonReport:
    passed: bool
    max_violation: float  # largest nodewise (v_low - v_high) over all steps
    slack: float


def _matched_distance(coarse: Trajectory, fine: Trajectory, times_of: int) -> float:
    """Sup distance of the piecewise-constant interpolants at the step times
    of the smallest N; both step counts are multiples of it, so the matched
    indices are exact integers."""
    dist = 0.0
    for j in range(times_of + 1):
        vc = coarse.fields[j * (coarse.N // times_of)]
        vf = fine.fields[j * (fine.N // times_of)]
        dist = max(dist, float(np.abs(vc.values - vf.values).max(initial=0.0)))
    return dist


def refinement_study(
    g: VectorField,
    dspec: DissipationSpec,
    espec: EnergySpec,
    T: float,
    N_list,
    cfg: StepConfig | None = None,
) -> RefinementReport:
    """Evolve for each N in a doubling chain and compare consecutive
    interpolants at the coarsest chain's step times."""
    if g.m != 1:
        raise NotScalar("refinement_study applies to m = 1 only")
    N_list = tuple(int(n) for n in N_list)
    if len(N_list) < 3:
        raise ValueError("N_list must contain at least 3 entries")
    if any(b != 2 * a for a, b in zip(N_list, N_list[1:])):
        raise ValueError(f"N_list must be a doubling chain, got {N_list}")

    trajectories = [evolve(g, dspec, espec, T, N, cfg) for N in N_list]
    base = N_list[0]
    distances = tuple(
        _matched_distance(trajectories[i], trajectories[i + 1], base)
        for i in range(len(N_list) - 1)
    )
    ratios = tuple(
        (d2 / d1 if d1 > 0 else 0.0) for d1, d2 in zip(distances, distances[1:])
    )
    fuzz = 1e-14 * max(1.0, max(distances, default=0.0))
    passed = all(d2 <= d1 + fuzz for d1, d2 in zip(distances, distances[1:]))
    return RefinementReport(N_list, distances, ratios, passed)


def comparison_check(
    g_low: VectorField,
    g_high: VectorField,
    dspec: DissipationSpec,
    espec: EnergySpec,
    T: float,
    N: int,
    cfg: StepConfig | None = None,
) -> ComparisonReport:
    """Evolve an ordered pair and verify v_low <= v_high nodewise throughout,
    with the usual solver slack 10 * residual_tol."""
    if g_low.m != 1 or g_high.m != 1:
        raise NotScalar("comparison_check applies to m = 1 only")
    if g_low.grid != g_high.grid:
        raise ValueError("comparison inputs must share one grid")
    if np.any(g_low.values > g_high.values):
        raise BadOrder("g_low must not exceed g_high at any node")

    cfg = cfg or StepConfig()
    if cfg.residual_tol is None:
        tol = max(
            default_residual_tol(espec, g_low), default_residual_tol(espec, g_high)
        )
        cfg = StepConfig(
            tau=cfg.tau,
            residual_tol=tol,
            max_iter=cfg.max_iter,
            eps_schedule=cfg.eps_schedule,
        )
    low = evolve(g_low, dspec, espec, T, N, cfg)
    high = evolve(g_high, dspec, espec, T, N, cfg)
    violation = max(
        float((fl.values - fh.values).max(initial=-np.inf))
        for fl, fh in zip(low.fields, high.fields)
    )
    slack = 10.0 * low.residual_tol
    return ComparisonReport(
        passed=bool(violation <= slack),
        max_violation=violation,
        slack=slack,
    )
