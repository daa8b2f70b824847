"""Uniform tensor-product grids and the discrete W^{1,p} calculus.

A `Grid` discretizes a 1D interval or 2D box with homogeneous Dirichlet
boundary: interior nodes at i*h per axis, zero values implied on the padded
boundary layer.  `gradient` takes per-cell forward differences against that
zero padding and `divergence_adjoint` is its exact negative adjoint, so the
discrete integration-by-parts identity

    sum_cells grad(u) . q * w  ==  - sum_nodes u . divergence_adjoint(q) * w

holds to rounding for every pair (w = prod of spacings).  Both quadratures
use the single weight w per node/per cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ZeroField

__all__ = [
    "Grid",
    "VectorField",
    "CellGradient",
    "gradient",
    "divergence_adjoint",
    "gradient_values",
    "divergence_values",
    "lp_norm",
    "w1p_seminorm",
    "rayleigh_quotient",
    "save_snapshot",
    "load_snapshot",
]


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid on a box, interior nodes only.

    Axis a has ``interior_counts[a]`` interior nodes at spacing
    ``h_a = lengths[a] / (interior_counts[a] + 1)`` and
    ``interior_counts[a] + 1`` cells between consecutive boundary-padded
    nodes.  Only dimensions 1 and 2 are supported.
    """

    lengths: tuple[float, ...]
    interior_counts: tuple[int, ...]

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.lengths)
        counts = tuple(int(n) for n in self.interior_counts)
        if len(lengths) not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {len(lengths)}")
        if len(counts) != len(lengths):
            raise ValueError("lengths and interior_counts must have equal length")
        if any(x <= 0 or not math.isfinite(x) for x in lengths):
            raise ValueError("lengths must be positive and finite")
        if any(n < 1 for n in counts):
            raise ValueError("interior_counts must be >= 1")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "interior_counts", counts)

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / (n + 1) for L, n in zip(self.lengths, self.interior_counts))

    @property
    def shape(self) -> tuple[int, ...]:
        """Interior node counts per axis."""
        return self.interior_counts

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.interior_counts)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.interior_counts))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_shape))

    @property
    def weight(self) -> float:
        """Quadrature weight per node and per cell (product of spacings)."""
        return float(np.prod(self.spacing))

    def axis_coords(self, axis: int) -> np.ndarray:
        """Interior node coordinates along one axis."""
        h = self.spacing[axis]
        return h * np.arange(1, self.interior_counts[axis] + 1)

    def node_positions(self) -> np.ndarray:
        """All interior node positions, shape (n_nodes, dim), lexicographic."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def _as_value_array(values, expected_shape) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != expected_shape:
        raise ValueError(f"expected value array of shape {expected_shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class VectorField:
    """m-component nodal values on a grid's interior (zero on the boundary).

    Storage is component-major: ``values[c, j]`` is component c at the j-th
    interior node in lexicographic order.
    """

    grid: Grid
    values: np.ndarray  # (m, n_nodes), read-only

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.grid.n_nodes:
            raise ValueError(
                f"values must have shape (m, {self.grid.n_nodes}), got {arr.shape}"
            )
        object.__setattr__(self, "values", _as_value_array(arr, arr.shape))

    @classmethod
    def zeros(cls, grid: Grid, m: int = 1) -> "VectorField":
        return cls(grid, np.zeros((m, grid.n_nodes)))

    @classmethod
    def from_function(cls, grid: Grid, func, m: int = 1) -> "VectorField":
        """Sample ``func(positions) -> (m, n_nodes)`` (or (n_nodes,) for m=1)."""
        out = np.asarray(func(grid.node_positions()), dtype=float)
        if out.ndim == 1:
            out = out[None, :]
        if out.shape[0] != m:
            raise ValueError(f"function returned {out.shape[0]} components, expected {m}")
        return cls(grid, out)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def reshaped(self) -> np.ndarray:
        """Values as (m, n1[, n2])."""
        return self.values.reshape((self.m, *self.grid.shape))

    def with_values(self, values) -> "VectorField":
        return VectorField(self.grid, values)

    def sup_norm(self) -> float:
        """Largest nodal Euclidean magnitude over m components."""
        return float(np.sqrt(np.sum(self.values**2, axis=0)).max(initial=0.0))

    def __add__(self, other: "VectorField") -> "VectorField":
        self._check_compatible(other)
        return VectorField(self.grid, self.values + other.values)

    def __sub__(self, other: "VectorField") -> "VectorField":
        self._check_compatible(other)
        return VectorField(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "VectorField":
        return VectorField(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, -self.values)

    def _check_compatible(self, other: "VectorField"):
        if other.grid != self.grid or other.m != self.m:
            raise ValueError("fields live on different grids or component counts")


@dataclass(frozen=True)
class CellGradient:
    """Per-cell gradient matrices, ``values[c, a, j]`` = d(component c)/d(x_a)."""

    grid: Grid
    values: np.ndarray  # (m, dim, n_cells), read-only

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 3 or arr.shape[1] != self.grid.dim or arr.shape[2] != self.grid.n_cells:
            raise ValueError(
                f"values must have shape (m, {self.grid.dim}, {self.grid.n_cells}), got {arr.shape}"
            )
        object.__setattr__(self, "values", _as_value_array(arr, arr.shape))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def reshaped(self) -> np.ndarray:
        """Values as (m, dim, c1[, c2])."""
        return self.values.reshape((self.m, self.grid.dim, *self.grid.cell_shape))


def gradient_values(grid: Grid, vals: np.ndarray) -> np.ndarray:
    """Forward-difference cell gradient of raw nodal values (m, n_nodes).

    Returns (m, dim, n_cells).  Linear in the input; boundary nodes enter as
    zeros.
    """
    m = vals.shape[0]
    h = grid.spacing
    if grid.dim == 1:
        (n1,) = grid.shape
        padded = np.zeros((m, n1 + 2))
        padded[:, 1:-1] = vals
        g0 = (padded[:, 1:] - padded[:, :-1]) / h[0]
        return g0[:, None, :]
    n1, n2 = grid.shape
    padded = np.zeros((m, n1 + 2, n2 + 2))
    padded[:, 1:-1, 1:-1] = vals.reshape(m, n1, n2)
    g0 = (padded[:, 1:, :-1] - padded[:, :-1, :-1]) / h[0]
    g1 = (padded[:, :-1, 1:] - padded[:, :-1, :-1]) / h[1]
    return np.stack([g0.reshape(m, -1), g1.reshape(m, -1)], axis=1)


def divergence_values(grid: Grid, flux: np.ndarray) -> np.ndarray:
    """Discrete divergence of raw cell fluxes (m, dim, n_cells) -> (m, n_nodes).

    Exact negative adjoint of `gradient_values` in the weighted inner
    products: backward differences of each axis flux at interior nodes.
    """
    m = flux.shape[0]
    h = grid.spacing
    if grid.dim == 1:
        q0 = flux[:, 0, :]
        return (q0[:, 1:] - q0[:, :-1]) / h[0]
    n1, n2 = grid.shape
    q0 = flux[:, 0, :].reshape(m, n1 + 1, n2 + 1)
    q1 = flux[:, 1, :].reshape(m, n1 + 1, n2 + 1)
    d0 = (q0[:, 1:, 1:] - q0[:, :-1, 1:]) / h[0]
    d1 = (q1[:, 1:, 1:] - q1[:, 1:, :-1]) / h[1]
    return (d0 + d1).reshape(m, -1)


def gradient(field: VectorField) -> CellGradient:
    """Per-cell forward-difference gradient of a field (zero boundary padding)."""
    return CellGradient(field.grid, gradient_values(field.grid, field.values))


def divergence_adjoint(flux: CellGradient) -> VectorField:
    """The field d with sum_cells grad(u).q * w == -sum_nodes u.d * w for all u."""
    return VectorField(flux.grid, divergence_values(flux.grid, flux.values))


def lp_norm(field: VectorField, p: float) -> float:
    """(w * sum_nodes |u|^p)^(1/p), |.| Euclidean over components."""
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    mags = np.sqrt(np.sum(field.values**2, axis=0))
    return float((field.grid.weight * np.sum(mags**p)) ** (1.0 / p))


def w1p_seminorm(field: VectorField, p: float) -> float:
    """(w * sum_cells |grad u|^p)^(1/p), |.| Frobenius on m x dim matrices."""
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    g = gradient_values(field.grid, field.values)
    mags = np.sqrt(np.sum(g**2, axis=(0, 1)))
    return float((field.grid.weight * np.sum(mags**p)) ** (1.0 / p))


def rayleigh_quotient(field: VectorField, p: float) -> float:
    """w1p_seminorm(u, p)^p / lp_norm(u, p)^p; raises ZeroField on u == 0."""
    denom = lp_norm(field, p) ** p
    if denom == 0.0:
        raise ZeroField("p-Rayleigh quotient of the zero field is undefined")
    return w1p_seminorm(field, p) ** p / denom


# --- field snapshot files -------------------------------------------------
#
# Plain-text CSV: one header line
#   # grid dim=<d> lengths=<l1[,l2]> interior=<n1[,n2]> m=<m>
# then one row per interior node in lexicographic order, m columns of
# decimal values at 17 significant digits.


def save_snapshot(field: VectorField, path) -> None:
    grid = field.grid
    lengths = ",".join("%.17g" % x for x in grid.lengths)
    interior = ",".join(str(n) for n in grid.interior_counts)
    lines = [f"# grid dim={grid.dim} lengths={lengths} interior={interior} m={field.m}"]
    for j in range(grid.n_nodes):
        lines.append(",".join("%.17g" % v for v in field.values[:, j]))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_snapshot(path) -> VectorField:
    with open(path) as f:
        header = f.readline().strip()
        rows = [line.strip() for line in f if line.strip()]
    if not header.startswith("# grid "):
        raise ValueError(f"not a field snapshot file: {path}")
    meta = dict(tok.split("=", 1) for tok in header[len("# grid "):].split())
    dim = int(meta["dim"])
    lengths = tuple(float(x) for x in meta["lengths"].split(","))
    interior = tuple(int(x) for x in meta["interior"].split(","))
    m = int(meta["m"])
    if len(lengths) != dim or len(interior) != dim:
        raise ValueError(f"inconsistent snapshot header: {header!r}")
    grid = Grid(lengths, interior)
    data = np.array([[float(x) for x in row.split(",")] for row in rows])
    if data.shape != (grid.n_nodes, m):
        raise ValueError(
            f"snapshot body has shape {data.shape}, expected ({grid.n_nodes}, {m})"
        )
    return VectorField(grid, data.T)
