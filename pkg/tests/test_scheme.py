"""Implicit time scheme: per-step oracles, trajectories, interpolants and
the discrete energy structure."""

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from dnflow.errors import NonConvergence, OutOfRange
from dnflow.grids import Grid, VectorField
from dnflow.groundstate import FlowConfig, direct_rayleigh_minimize
from dnflow.models import PPower, PPowerNorm, Quadratic, QuadraticFrobenius, psi_grad
from dnflow.scheme import (
    StepConfig,
    default_residual_tol,
    energy,
    evolve,
    interpolants,
    step,
    weak_residual,
)

from conftest import lam_h_1d, sine_eigenvector, smooth_random_field


P2 = (PPower(2.0, 0.0, m=1), PPowerNorm(2.0, 0.0, m=1, n=1))


def heat_step_oracle(grid, vals, tau):
    """Independent direct solve of (I + tau * L) v = v_prev with the sparse
    Dirichlet Laplacian assembled from scratch."""
    n = grid.interior_counts[0]
    h = grid.spacing[0]
    L = sp.diags(
        [np.full(n - 1, -1.0), np.full(n, 2.0), np.full(n - 1, -1.0)],
        [-1, 0, 1],
    ) / h**2
    A = sp.identity(n) + tau * L
    return spsolve(A.tocsc(), vals)


def test_step_zero_datum():
    grid = Grid((1.0,), (15,))
    z = VectorField.zeros(grid, 1)
    v1, st = step(z, *P2, StepConfig(tau=0.1, residual_tol=1e-10))
    assert not np.any(v1.values)
    assert st.iterations <= 1


def test_step_p2_eigenvector_matches_direct_solve():
    grid = Grid((1.0,), (127,))
    e = sine_eigenvector(grid)
    tau = 1.0 / 32
    tol = default_residual_tol(P2[1], e)
    v1, st = step(e, *P2, StepConfig(tau=tau, residual_tol=tol))
    lam = lam_h_1d(127)
    np.testing.assert_allclose(v1.values, e.values / (1 + tau * lam), atol=1e-8)
    oracle = heat_step_oracle(grid, e.values[0], tau)
    np.testing.assert_allclose(v1.values[0], oracle, atol=1e-8)
    assert st.residual <= tol


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_step_ground_state_contraction(p):
    # one-step shadow of the separable solution: v_next = u_h / (1 + tau Y_h)
    grid = Grid((1.0,), (63,))
    gs = direct_rayleigh_minimize(grid, p, 1, seed=2, cfg=FlowConfig(rq_tol=1e-13))
    u = gs.profile
    upsilon = gs.lambda_estimate ** (1.0 / (p - 1.0))
    tau = 0.05
    eps = 1e-8 if p < 2 else 0.0
    dspec = PPower(p, eps, m=1)
    espec = PPowerNorm(p, eps, m=1, n=1)
    tol = default_residual_tol(espec, u)
    v1, _ = step(u, dspec, espec, StepConfig(tau=tau, residual_tol=tol))
    c = 1.0 / (1.0 + tau * upsilon)
    assert np.abs(v1.values - c * u.values).max() <= 10 * max(tol, 1e-7)


def test_step_nonconvergence_raises():
    grid = Grid((1.0,), (63,))
    g = sine_eigenvector(grid)
    with pytest.raises(NonConvergence):
        step(g, *P2, StepConfig(tau=0.1, residual_tol=1e-14, max_iter=1))


def test_evolve_zero_datum():
    grid = Grid((1.0,), (15,))
    traj = evolve(VectorField.zeros(grid, 2), PPower(3.0, m=2), PPowerNorm(3.0, m=2, n=1), 1.0, 8)
    assert all(not np.any(f.values) for f in traj.fields)


def test_evolve_p2_eigenvector_closed_form():
    grid = Grid((1.0,), (127,))
    g = sine_eigenvector(grid)
    traj = evolve(g, *P2, T=1.0, N=32)
    lam = lam_h_1d(127)
    c = 1.0 / (1.0 + traj.tau * lam)
    worst = max(
        np.abs(traj.fields[k].values - g.values * c**k).max() for k in range(33)
    )
    assert worst <= 1e-7


@pytest.mark.parametrize("p", [3.0, 1.5])
def test_evolve_ground_state_geometric_decay(p):
    grid = Grid((1.0,), (63,))
    gs = direct_rayleigh_minimize(grid, p, 1, seed=2, cfg=FlowConfig(rq_tol=1e-13))
    upsilon = gs.upsilon
    tau = 1.0 / (10 * upsilon)
    eps = 1e-8 if p < 2 else 0.0
    dspec, espec = PPower(p, eps, m=1), PPowerNorm(p, eps, m=1, n=1)
    traj = evolve(gs.profile, dspec, espec, T=10 * tau, N=10)
    c = 1.0 / (1.0 + tau * upsilon)
    worst = max(
        np.abs(traj.fields[k].values - gs.profile.values * c**k).max()
        for k in range(11)
    )
    assert worst <= max(100 * traj.residual_tol, 1e-6)


def test_trajectory_stats_respect_tolerance(rng):
    grid = Grid((1.0, 1.0), (9, 9))
    g = smooth_random_field(grid, 2, rng)
    traj = evolve(g, PPower(3.0, m=2), PPowerNorm(3.0, m=2, n=2), T=0.2, N=8)
    assert len(traj.fields) == 9
    assert all(s.residual <= traj.residual_tol for s in traj.stats)


def test_per_step_energy_inequality(rng):
    grid = Grid((1.0,), (31,))
    g = smooth_random_field(grid, 1, rng)
    dspec, espec = PPower(3.0), PPowerNorm(3.0)
    traj = evolve(g, dspec, espec, T=0.5, N=16)
    w = grid.weight
    for k in range(1, traj.N + 1):
        delta = (traj.fields[k].values - traj.fields[k - 1].values) / traj.tau
        rate = w * float(np.sum(psi_grad(dspec, delta) * delta))
        lhs = traj.tau * rate + energy(espec, traj.fields[k])
        assert lhs <= energy(espec, traj.fields[k - 1]) + 10 * traj.residual_tol


def test_energy_nonincreasing(rng):
    grid = Grid((1.0, 1.0), (9, 9))
    g = smooth_random_field(grid, 1, rng)
    dspec, espec = PPower(4.0), PPowerNorm(4.0, n=2)
    traj = evolve(g, dspec, espec, T=0.2, N=12)
    E = [energy(espec, f) for f in traj.fields]
    for a, b in zip(E, E[1:]):
        assert b <= a + 10 * traj.residual_tol


def test_fixed_point_zero_datum():
    grid = Grid((1.0,), (31,))
    traj = evolve(VectorField.zeros(grid, 1), *P2, T=1.0, N=8)
    assert max(f.sup_norm() for f in traj.fields) == 0.0


def test_quadratic_anisotropic_psi_runs(rng):
    grid = Grid((1.0,), (15,))
    A = np.array([[2.0, 0.4], [0.4, 1.0]])
    g = smooth_random_field(grid, 2, rng)
    traj = evolve(g, Quadratic(A), QuadraticFrobenius(1.5, m=2, n=1), T=0.2, N=4)
    assert all(s.residual <= traj.residual_tol for s in traj.stats)


def test_interpolants_endpoints_and_midpoints(rng):
    grid = Grid((1.0,), (15,))
    g = smooth_random_field(grid, 1, rng)
    traj = evolve(g, *P2, T=1.0, N=4)
    vc, vl = interpolants(traj, 0.0)
    np.testing.assert_array_equal(vc.values, g.values)
    np.testing.assert_array_equal(vl.values, g.values)
    for k in range(1, 5):
        vc, vl = interpolants(traj, k * traj.tau)
        np.testing.assert_allclose(vc.values, traj.fields[k].values, atol=1e-14)
        np.testing.assert_allclose(vl.values, traj.fields[k].values, atol=1e-12)
    t_mid = 2 * traj.tau + traj.tau / 2
    vc, vl = interpolants(traj, t_mid)
    np.testing.assert_array_equal(vc.values, traj.fields[3].values)
    np.testing.assert_allclose(
        vl.values, (traj.fields[2].values + traj.fields[3].values) / 2.0, atol=1e-14
    )
    with pytest.raises(OutOfRange):
        interpolants(traj, -0.1)
    with pytest.raises(OutOfRange):
        interpolants(traj, 1.1)


def test_weak_residual_closed_form_pair():
    grid = Grid((1.0,), (63,))
    e = sine_eigenvector(grid)
    tau = 0.05
    lam = lam_h_1d(63)
    v1 = e * (1.0 / (1.0 + tau * lam))
    assert weak_residual(v1, e, *P2, tau) <= 1e-10


def test_weak_residual_positive_for_nonstationary():
    grid = Grid((1.0,), (31,))
    g = sine_eigenvector(grid)
    assert weak_residual(g, g, *P2, 0.1) > 1e-3


def test_weak_residual_of_accepted_step(rng):
    grid = Grid((1.0,), (31,))
    g = smooth_random_field(grid, 1, rng)
    dspec, espec = PPower(3.0), PPowerNorm(3.0)
    tau = 0.05
    tol = default_residual_tol(espec, g)
    v1, _ = step(g, dspec, espec, StepConfig(tau=tau, residual_tol=tol))
    assert weak_residual(v1, g, dspec, espec, tau) <= tol


def test_comparison_ordering_preserved_1d(rng):
    # m = 1 scheme monotonicity: ordered starts stay ordered
    grid = Grid((1.0,), (31,))
    x = grid.axis_coords(0)
    hat = np.minimum(x, 1 - x) * 2.0
    g_low = smooth_random_field(grid, 1, rng, amplitude=0.5)
    g_high = VectorField(grid, g_low.values + 0.7 * hat[None, :])
    for p in (2.0, 3.0):
        dspec, espec = PPower(p), PPowerNorm(p)
        tol = max(default_residual_tol(espec, g_low), default_residual_tol(espec, g_high))
        cfg = StepConfig(residual_tol=tol)
        lo = evolve(g_low, dspec, espec, T=0.5, N=8, cfg=cfg)
        hi = evolve(g_high, dspec, espec, T=0.5, N=8, cfg=cfg)
        for fl, fh in zip(lo.fields, hi.fields):
            assert (fl.values - fh.values).max() <= 10 * tol
