"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from dnflow.grids import Grid, VectorField


def tridiagonal_ground_pair(n: int, length: float = 1.0):
    """Smallest Dirichlet eigenpair of the 1D second-difference operator,
    computed by an independent dense tridiagonal eigensolver."""
    h = length / (n + 1)
    d = np.full(n, 2.0 / h**2)
    e = np.full(n - 1, -1.0 / h**2)
    vals, vecs = eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
    vec = vecs[:, 0]
    if vec.sum() < 0:
        vec = -vec
    return float(vals[0]), vec


def lam_h_1d(n: int, length: float = 1.0) -> float:
    """Closed-form smallest discrete Dirichlet eigenvalue on n interior nodes."""
    h = length / (n + 1)
    return 2.0 / h**2 * (1.0 - np.cos(np.pi * h / length))


def sine_eigenvector(grid: Grid) -> VectorField:
    """Discrete product-of-sines eigenvector of the (5-point) Laplacian."""
    pos = grid.node_positions()
    vals = np.ones(grid.n_nodes)
    for a in range(grid.dim):
        vals = vals * np.sin(np.pi * pos[:, a] / grid.lengths[a])
    return VectorField(grid, vals[None, :])


def smooth_random_field(grid: Grid, m: int, rng, modes: int = 6, amplitude: float = 1.0):
    """Deterministic smooth random data: decaying random sine series."""
    pos = grid.node_positions()
    vals = np.zeros((m, grid.n_nodes))
    for c in range(m):
        for _ in range(modes):
            ks = rng.integers(1, 5, size=grid.dim)
            coeff = rng.standard_normal() / float(np.prod(ks))
            term = np.ones(grid.n_nodes)
            for a in range(grid.dim):
                term = term * np.sin(ks[a] * np.pi * pos[:, a] / grid.lengths[a])
            vals[c] += coeff * term
    return VectorField(grid, amplitude * vals)


@pytest.fixture
def grid_1d_small():
    return Grid((1.0,), (15,))


@pytest.fixture
def grid_2d_small():
    return Grid((1.0, 1.0), (9, 9))


@pytest.fixture
def rng():
    return np.random.default_rng(20240809)
