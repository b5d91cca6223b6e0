"""Bilinear finite elements for the diffusion-absorption operator.

Discretizes ``x -> -div(D grad x) + mu x`` on the uniform grid with one
coefficient value per cell and bilinear (Q1) nodal basis functions. On a
square cell of side h the element matrices are available in closed form,
so assembly is a handful of vectorized scatter-adds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import SolverError
from .grid import (CoefficientField, Grid, ScalarField, cell_corner_indices,
                   cell_to_node_matrix, check_same_grid)

# Element matrices for corner order (SW, SE, NE, NW). The stiffness matrix of
# a square Q1 element is h-independent in 2D; the mass matrix scales with h^2.
STIFFNESS_LOCAL = np.array([
    [4.0, -1.0, -2.0, -1.0],
    [-1.0, 4.0, -1.0, -2.0],
    [-2.0, -1.0, 4.0, -1.0],
    [-1.0, -2.0, -1.0, 4.0],
]) / 6.0

MASS_LOCAL = np.array([
    [4.0, 2.0, 1.0, 2.0],
    [2.0, 4.0, 2.0, 1.0],
    [1.0, 2.0, 4.0, 2.0],
    [2.0, 1.0, 2.0, 4.0],
]) / 36.0


def _assemble_cellwise(grid: Grid, cell_scale: np.ndarray,
                       local: np.ndarray) -> sp.csr_matrix:
    """Sum of per-cell ``cell_scale[e] * local`` scattered to global dofs."""
    corners = cell_corner_indices(grid)
    rows, cols, data = [], [], []
    for a in range(4):
        for b in range(4):
            if local[a, b] == 0.0:
                continue
            rows.append(corners[a])
            cols.append(corners[b])
            data.append(local[a, b] * cell_scale)
    n = grid.n_nodes
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()


def stiffness_matrix(grid: Grid, d_cells: np.ndarray) -> sp.csr_matrix:
    """Assembly of -div(d grad .) with natural (Neumann) boundary."""
    return _assemble_cellwise(grid, np.asarray(d_cells, dtype=float).ravel(),
                              STIFFNESS_LOCAL)


def mass_matrix(grid: Grid, mu_cells: np.ndarray | float = 1.0) -> sp.csr_matrix:
    """Assembly of pointwise multiplication by cellwise mu (exact quadrature)."""
    mu = np.asarray(mu_cells, dtype=float)
    if mu.ndim == 0:
        mu = np.full(grid.n_cells, float(mu))
    return _assemble_cellwise(grid, mu.ravel() * grid.h ** 2, MASS_LOCAL)


def dirichlet_eliminate(grid: Grid, a: sp.csr_matrix) -> sp.csc_matrix:
    """Symmetric Dirichlet elimination: identity rows/columns on the boundary."""
    bnd = grid.boundary_mask()
    coo = a.tocoo()
    keep = ~bnd[coo.row] & ~bnd[coo.col]
    rows = np.concatenate([coo.row[keep], np.flatnonzero(bnd)])
    cols = np.concatenate([coo.col[keep], np.flatnonzero(bnd)])
    data = np.concatenate([coo.data[keep], np.ones(int(bnd.sum()))])
    return sp.coo_matrix((data, (rows, cols)), shape=a.shape).tocsc()


@dataclass
class SparseOperator:
    """Assembled sparse operator with its boundary-condition tag."""

    matrix: sp.spmatrix
    bc: str  # "neumann" | "dirichlet0"
    symmetric: bool = True

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def assemble_operator(mu: CoefficientField, d: CoefficientField,
                      bc: str = "neumann") -> SparseOperator:
    """Assemble -div(D grad .) + mu with linear elements.

    ``bc="neumann"`` leaves the natural boundary rows untouched;
    ``bc="dirichlet0"`` replaces boundary rows and columns by the identity.
    """
    grid = check_same_grid(mu, d)
    if np.any(mu.values < 0):
        raise ValueError("absorption coefficient must be nonnegative")
    if np.any(d.values <= 0):
        raise ValueError("diffusion coefficient must be strictly positive")
    a = stiffness_matrix(grid, d.values) + mass_matrix(grid, mu.values)
    if bc == "neumann":
        return SparseOperator(a, "neumann")
    if bc == "dirichlet0":
        return SparseOperator(dirichlet_eliminate(grid, a), "dirichlet0")
    raise ValueError(f"unknown boundary-condition tag {bc!r}")


def solve_sparse(op: SparseOperator | sp.spmatrix, rhs: np.ndarray,
                 tol: float = 1e-10) -> np.ndarray:
    """Direct sparse solve with residual check and a CG fallback.

    Raises SolverError with the achieved residual when neither the
    factorization nor diagonally preconditioned CG meets ``tol``.
    """
    a = op.matrix if isinstance(op, SparseOperator) else op
    rhs = np.asarray(rhs, dtype=float).ravel()
    if a.shape[0] != a.shape[1]:
        raise ValueError("operator must be square")
    if rhs.size != a.shape[0]:
        raise ValueError(f"rhs size {rhs.size} does not match operator {a.shape}")
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)

    acsc = a.tocsc()
    x = None
    try:
        x = spla.splu(acsc).solve(rhs)
    except RuntimeError:
        pass
    if x is not None:
        res = np.linalg.norm(a @ x - rhs) / rhs_norm
        if res <= tol:
            return x
    # fallback: diagonally preconditioned CG
    diag = acsc.diagonal()
    if np.any(diag == 0):
        raise SolverError("singular system: zero diagonal entry", residual=np.inf)
    m = spla.LinearOperator(a.shape, matvec=lambda v: v / diag)
    x, _ = spla.cg(acsc, rhs, rtol=tol, maxiter=20 * rhs.size, M=m,
                   x0=x if x is not None else None)
    res = np.linalg.norm(a @ x - rhs) / rhs_norm
    if res > tol:
        raise SolverError("linear solve did not reach tolerance", residual=res)
    return x


class DirichletSystem:
    """Factorized forward operator for repeated Dirichlet solves.

    Holds the natural assembly A, its Dirichlet-eliminated variant A0 and one
    LU factorization of A0; all forward, linearization and adjoint solves of a
    Gauss-Newton step share it.
    """

    def __init__(self, mu: CoefficientField, d: CoefficientField):
        self.grid = check_same_grid(mu, d)
        if np.any(mu.values < 0) or np.any(d.values <= 0):
            raise ValueError("need mu >= 0 and D > 0")
        self.mu = mu
        self.d = d
        self.neumann = stiffness_matrix(self.grid, d.values) + mass_matrix(
            self.grid, mu.values)
        self.dirichlet0 = dirichlet_eliminate(self.grid, self.neumann)
        self._lu = None
        self._bnd = self.grid.boundary_mask()

    @property
    def lu(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.dirichlet0)
            except RuntimeError as exc:  # pragma: no cover - assembly bug guard
                raise SolverError(f"singular Dirichlet system: {exc}") from exc
        return self._lu

    def solve_zero_bc(self, load: np.ndarray) -> np.ndarray:
        """Solve A0 y = load with the load zeroed on boundary nodes."""
        f = np.array(load, dtype=float)
        f[self._bnd] = 0.0
        return self.lu.solve(f)

    def solve_boundary_value(self, g: ScalarField, tol: float = 1e-10) -> ScalarField:
        """Solve the PDE with Dirichlet data g (only boundary values of g used)."""
        gvals = g.values
        if not np.all(np.isfinite(gvals[self._bnd])):
            raise ValueError("boundary data must be finite")
        lift = np.zeros(self.grid.n_nodes)
        lift[self._bnd] = gvals[self._bnd]
        rhs = -(self.neumann @ lift)
        rhs[self._bnd] = gvals[self._bnd]
        u = self.lu.solve(rhs)
        res = np.linalg.norm(self.dirichlet0 @ u - rhs)
        scale = max(np.linalg.norm(rhs), 1e-300)
        if res / scale > tol:
            raise SolverError("forward solve missed tolerance", residual=res / scale)
        return ScalarField(self.grid, u)


def solve_dirichlet(mu: CoefficientField, d: CoefficientField,
                    g: ScalarField, tol: float = 1e-10) -> ScalarField:
    """Fluence for illumination g: the discrete solution with u = g on the boundary."""
    check_same_grid(mu, d, g)
    return DirichletSystem(mu, d).solve_boundary_value(g, tol=tol)


def absorbed_energy(mu: CoefficientField, u: ScalarField) -> ScalarField:
    """Deposited energy map mu*u with mu averaged from cells to nodes."""
    grid = check_same_grid(mu, u)
    mu_nodes = cell_to_node_matrix(grid) @ mu.values
    return ScalarField(grid, mu_nodes * u.values)


# ---------------------------------------------------------------------------
# coupling assemblies used by the linearized (Gauss-Newton) systems
# ---------------------------------------------------------------------------

def _coupling(grid: Grid, u: np.ndarray, local: np.ndarray,
              scale: float) -> sp.csr_matrix:
    """(n_nodes, n_cells) matrix with column e = scale * local_e @ u restricted to cell e."""
    corners = cell_corner_indices(grid)
    u4 = u[corners]                     # (4, n_cells)
    vals = scale * (local @ u4)         # (4, n_cells)
    rows = corners.ravel()
    cols = np.tile(np.arange(grid.n_cells), 4)
    return sp.coo_matrix((vals.ravel(), (rows, cols)),
                         shape=(grid.n_nodes, grid.n_cells)).tocsr()


def mass_coupling(grid: Grid, u: np.ndarray) -> sp.csr_matrix:
    """Columns are the element-mass actions M_e u: maps cell values c to the
    load vector of the weak form of ``c * u``."""
    return _coupling(grid, u, MASS_LOCAL, grid.h ** 2)


def grad_coupling(grid: Grid, u: np.ndarray) -> sp.csr_matrix:
    """Columns are the element-stiffness actions K_e u: maps cell values c to
    the load vector of the weak form of ``-div(c grad u)``."""
    return _coupling(grid, u, STIFFNESS_LOCAL, 1.0)
