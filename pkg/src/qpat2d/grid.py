"""Uniform-grid fields, cell/node transfers and CSV grid I/O.

Fields live on the nodes of a uniform square-spaced grid over a rectangular
domain; material coefficients live on the cells (pixels) between nodes.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .exceptions import GridMismatchError


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid with square cells.

    ``nx, ny`` count nodes per axis, so there are ``(nx-1) x (ny-1)`` cells.
    Node ``(i, j)`` sits at ``(i*h, j*h)`` and has flat index ``j*nx + i``
    (bottom row first). Cell ``(i, j)`` has corners at nodes ``(i..i+1,
    j..j+1)`` and flat index ``j*(nx-1) + i``.
    """

    nx: int
    ny: int
    lx: float = 5.0
    ly: float = 5.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")
        hx = self.lx / (self.nx - 1)
        hy = self.ly / (self.ny - 1)
        if not (hx > 0 and hy > 0):
            raise ValueError("grid extents must be positive")
        if abs(hx - hy) > 1e-12 * hx:
            raise ValueError(f"cells must be square: hx={hx!r}, hy={hy!r}")

    @property
    def h(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def cells_x(self) -> int:
        return self.nx - 1

    @property
    def cells_y(self) -> int:
        return self.ny - 1

    @property
    def n_cells(self) -> int:
        return self.cells_x * self.cells_y

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) coordinates of all nodes, flat order."""
        x = np.arange(self.nx) * self.h
        y = np.arange(self.ny) * self.h
        xx, yy = np.meshgrid(x, y)
        return xx.ravel(), yy.ravel()

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) coordinates of all cell centers, flat order."""
        x = (np.arange(self.cells_x) + 0.5) * self.h
        y = (np.arange(self.cells_y) + 0.5) * self.h
        xx, yy = np.meshgrid(x, y)
        return xx.ravel(), yy.ravel()

    def boundary_mask(self) -> np.ndarray:
        """Boolean flat array marking the outermost node ring."""
        m = np.zeros((self.ny, self.nx), dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m.ravel()

    def boundary_indices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask())

    def interior_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask())


@dataclass
class ScalarField:
    """Nodal values (fluence, energy data, edge indicators) on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.n_nodes:
            raise ValueError(
                f"expected {self.grid.n_nodes} nodal values, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("nodal values must be finite")

    def as_matrix(self) -> np.ndarray:
        """(ny, nx) view, row j = nodes at height j*h."""
        return self.values.reshape(self.grid.ny, self.grid.nx)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class CoefficientField:
    """Cell-wise constant coefficient with box bounds [lower, upper]."""

    grid: Grid
    values: np.ndarray
    lower: float = 0.01
    upper: float = 3.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.n_cells:
            raise ValueError(
                f"expected {self.grid.n_cells} cell values, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cell values must be finite")
        if not self.lower < self.upper:
            raise ValueError("need lower < upper")

    def as_matrix(self) -> np.ndarray:
        """(cells_y, cells_x) view."""
        return self.values.reshape(self.grid.cells_y, self.grid.cells_x)

    def copy(self) -> "CoefficientField":
        return replace(self, values=self.values.copy())


def constant_scalar(grid: Grid, value: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.n_nodes, float(value)))


def constant_coefficient(grid: Grid, value: float, lower: float = 0.01,
                         upper: float = 3.0) -> CoefficientField:
    return CoefficientField(grid, np.full(grid.n_cells, float(value)), lower, upper)


def check_same_grid(*objs) -> Grid:
    grids = {o.grid for o in objs}
    if len(grids) != 1:
        raise GridMismatchError(f"objects live on different grids: {grids}")
    return objs[0].grid


# ---------------------------------------------------------------------------
# cell <-> node transfers
# ---------------------------------------------------------------------------

def cell_average(f: ScalarField) -> np.ndarray:
    """Midpoint value per cell: mean of the four corner nodes."""
    v = f.as_matrix()
    return 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:]).ravel()


def node_average(grid: Grid, cell_values: np.ndarray) -> np.ndarray:
    """Nodal value as arithmetic mean of the adjacent cells (1, 2 or 4)."""
    c = np.asarray(cell_values, dtype=float).reshape(grid.cells_y, grid.cells_x)
    s = np.zeros((grid.ny, grid.nx))
    cnt = np.zeros((grid.ny, grid.nx))
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        s[dy:dy + grid.cells_y, dx:dx + grid.cells_x] += c
        cnt[dy:dy + grid.cells_y, dx:dx + grid.cells_x] += 1.0
    return (s / cnt).ravel()


def cell_corner_indices(grid: Grid) -> np.ndarray:
    """(4, n_cells) global node indices per cell: SW, SE, NE, NW."""
    ci = np.arange(grid.cells_x)
    cj = np.arange(grid.cells_y)
    ii, jj = np.meshgrid(ci, cj)
    sw = (jj * grid.nx + ii).ravel()
    return np.stack([sw, sw + 1, sw + grid.nx + 1, sw + grid.nx])


@functools.lru_cache(maxsize=32)
def node_to_cell_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse (n_cells, n_nodes) corner-averaging operator."""
    corners = cell_corner_indices(grid)
    rows = np.tile(np.arange(grid.n_cells), 4)
    cols = corners.ravel()
    data = np.full(cols.size, 0.25)
    return sp.coo_matrix((data, (rows, cols)),
                         shape=(grid.n_cells, grid.n_nodes)).tocsr()


@functools.lru_cache(maxsize=32)
def cell_to_node_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse (n_nodes, n_cells) adjacent-cell averaging operator."""
    corners = cell_corner_indices(grid)
    rows = corners.ravel()
    cols = np.tile(np.arange(grid.n_cells), 4)
    data = np.ones(rows.size)
    m = sp.coo_matrix((data, (rows, cols)),
                      shape=(grid.n_nodes, grid.n_cells)).tocsr()
    counts = np.asarray(m.sum(axis=1)).ravel()
    return sp.diags(1.0 / counts) @ m


def field_integral(f: ScalarField) -> float:
    """Domain integral by cell-midpoint quadrature."""
    return f.grid.h ** 2 * float(np.sum(cell_average(f)))


def field_mean(f: ScalarField) -> float:
    """Spatial mean (integral divided by the domain area)."""
    return field_integral(f) / (f.grid.lx * f.grid.ly)


# ---------------------------------------------------------------------------
# CSV grid format
# ---------------------------------------------------------------------------
#
# First line: "nx,ny,lx,ly" where nx,ny count the values per axis in this
# file (nodes for scalar fields, cells for coefficient fields) and lx,ly are
# the physical extents. Then ny rows of nx comma-separated values, bottom row
# first. Floats are written with 17 significant digits so round-trips are
# bit-exact.

def _write_grid_csv(path, n1: int, n2: int, lx: float, ly: float,
                    matrix: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(f"{n1},{n2},{lx:.17g},{ly:.17g}\n")
        for row in matrix:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _read_grid_csv(path) -> tuple[int, int, float, float, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 4:
            raise ValueError(f"malformed grid CSV header in {path}")
        n1, n2 = int(header[0]), int(header[1])
        lx, ly = float(header[2]), float(header[3])
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (n2, n1):
        raise ValueError(
            f"grid CSV {path}: header promises {n2}x{n1} values, got {data.shape}")
    return n1, n2, lx, ly, data


def save_scalar_csv(f: ScalarField, path) -> None:
    _write_grid_csv(path, f.grid.nx, f.grid.ny, f.grid.lx, f.grid.ly, f.as_matrix())


def load_scalar_csv(path) -> ScalarField:
    nx, ny, lx, ly, data = _read_grid_csv(path)
    return ScalarField(Grid(nx, ny, lx, ly), data.ravel())


def save_coefficient_csv(c: CoefficientField, path) -> None:
    _write_grid_csv(path, c.grid.cells_x, c.grid.cells_y, c.grid.lx, c.grid.ly,
                    c.as_matrix())


def load_coefficient_csv(path, lower: float = 0.01, upper: float = 3.0) -> CoefficientField:
    cx, cy, lx, ly, data = _read_grid_csv(path)
    return CoefficientField(Grid(cx + 1, cy + 1, lx, ly), data.ravel(), lower, upper)
