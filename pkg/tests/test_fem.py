import numpy as np
import pytest

from qpat2d.exceptions import SolverError
from qpat2d.fem import (DirichletSystem, SparseOperator, absorbed_energy,
                        assemble_operator, dirichlet_eliminate, mass_matrix,
                        solve_dirichlet, solve_sparse, stiffness_matrix)
from qpat2d.grid import (CoefficientField, Grid, ScalarField, cell_average,
                         constant_coefficient, constant_scalar)


def fields(grid, mu_val, d_val):
    return (constant_coefficient(grid, mu_val, lower=0.0),
            constant_coefficient(grid, d_val))


def test_pure_laplacian_interior_row_sums_vanish():
    g = Grid(3, 3, 2.0, 2.0)
    mu, d = fields(g, 0.0, 1.0)
    op = assemble_operator(mu, d, bc="neumann")
    rows = np.asarray(op.matrix.sum(axis=1)).ravel()
    assert np.allclose(rows, 0.0, atol=1e-13)  # includes boundary: no mass


def test_assembly_is_linear_in_its_parts():
    rng = np.random.default_rng(1)
    g = Grid(6, 6)
    mu = CoefficientField(g, rng.uniform(0.1, 2.0, g.n_cells))
    d = CoefficientField(g, rng.uniform(0.5, 2.0, g.n_cells))
    combined = assemble_operator(mu, d).matrix
    separate = stiffness_matrix(g, d.values) + mass_matrix(g, mu.values)
    assert np.allclose((combined - separate).toarray(), 0.0, atol=1e-14)


def test_dirichlet_operator_positive_definite_dense_oracle():
    rng = np.random.default_rng(7)
    g = Grid(16, 16)
    mu = CoefficientField(g, rng.choice([0.1, 0.7, 2.0], g.n_cells))
    d = CoefficientField(g, rng.choice([0.5, 1.0, 2.5], g.n_cells))
    op = assemble_operator(mu, d, bc="dirichlet0")
    dense = op.matrix.toarray()
    assert np.allclose(dense, dense.T, atol=1e-14)
    eigs = np.linalg.eigvalsh(dense)
    assert eigs.min() > 0


def test_self_adjointness_dirichlet():
    rng = np.random.default_rng(3)
    g = Grid(14, 14)
    mu = CoefficientField(g, rng.uniform(0.0, 2.0, g.n_cells), lower=0.0)
    d = CoefficientField(g, rng.uniform(0.3, 2.0, g.n_cells))
    a = assemble_operator(mu, d, bc="dirichlet0").matrix
    for _ in range(5):
        x = rng.normal(size=g.n_nodes)
        y = rng.normal(size=g.n_nodes)
        lx_y = float((a @ x) @ y)
        x_ly = float(x @ (a @ y))
        assert abs(lx_y - x_ly) <= 1e-12 * max(abs(lx_y), 1.0)


def test_assembly_rejects_bad_coefficients():
    g = Grid(5, 5)
    mu, d = fields(g, 0.5, 1.0)
    with pytest.raises(ValueError):
        assemble_operator(mu, CoefficientField(g, np.zeros(g.n_cells), lower=0.0))
    bad_mu = CoefficientField(g, np.full(g.n_cells, -0.5), lower=-1.0)
    with pytest.raises(ValueError):
        assemble_operator(bad_mu, d)


def test_constant_boundary_harmonic_solution():
    g = Grid(21, 21)
    mu, d = fields(g, 0.0, 1.0)
    u = solve_dirichlet(mu, d, constant_scalar(g, 1.0))
    assert np.allclose(u.values, 1.0, atol=1e-12)


def cosh_error(nx, mu_val=4.0, d_val=1.0):
    """Max relative nodal error against the 1D two-point boundary solution."""
    ny = 7
    lx = 5.0
    h = lx / (nx - 1)
    g = Grid(nx, ny, lx, (ny - 1) * h)
    k = np.sqrt(mu_val / d_val)
    xx, _ = g.node_coords()
    exact = np.cosh(k * (xx - lx / 2)) / np.cosh(k * lx / 2)
    mu = constant_coefficient(g, mu_val)
    d = constant_coefficient(g, d_val)
    u = solve_dirichlet(mu, d, ScalarField(g, exact))
    return np.max(np.abs(u.values - exact) / np.abs(exact))


def test_quasi_1d_cosh_oracle_second_order():
    e1 = cosh_error(100)
    e2 = cosh_error(200)
    assert e1 < 1e-3
    # at least second order: doubling the resolution gains a factor >= ~4
    assert e1 / e2 > 3.5


def test_phantom_fluence_bounded_by_illumination(phantom_a):
    grid = phantom_a.grid(60)
    from qpat2d.phantom import rasterize
    mu, d = rasterize(phantom_a, grid)
    u = solve_dirichlet(mu, d, constant_scalar(grid, 1.0))
    assert u.values.min() > 0.0
    assert u.values.max() <= 1.0 + 1e-10


def test_discrete_maximum_principle_random_boundary():
    rng = np.random.default_rng(11)
    g = Grid(18, 18)
    # moderate mu*h^2/D keeps the discrete system an M-matrix
    mu = CoefficientField(g, rng.uniform(0.0, 2.0, g.n_cells), lower=0.0)
    d = CoefficientField(g, rng.uniform(0.5, 2.0, g.n_cells))
    gvals = np.zeros(g.n_nodes)
    bnd = g.boundary_indices()
    gvals[bnd] = rng.uniform(0.0, 2.0, bnd.size)
    u = solve_dirichlet(mu, d, ScalarField(g, gvals))
    assert u.values.min() >= -1e-10
    assert u.values.max() <= gvals[bnd].max() + 1e-10


def test_monotonicity_in_absorption_dense_oracle():
    rng = np.random.default_rng(5)
    g = Grid(8, 8)
    mu_vals = rng.uniform(0.1, 1.5, g.n_cells)
    d = CoefficientField(g, rng.uniform(0.5, 2.0, g.n_cells))
    gb = constant_scalar(g, 1.0)
    u0 = solve_dirichlet(CoefficientField(g, mu_vals, lower=0.0), d, gb)
    for cell in rng.choice(g.n_cells, size=6, replace=False):
        bumped = mu_vals.copy()
        bumped[cell] += 0.5
        u1 = solve_dirichlet(CoefficientField(g, bumped, lower=0.0), d, gb)
        assert np.all(u1.values <= u0.values + 1e-11)


def test_grid_convergence_ratio():
    def solve_at(cells):
        g = Grid(cells + 1, cells + 1)
        cx, cy = g.cell_centers()
        mu = CoefficientField(g, 0.5 + 0.3 * np.sin(1.3 * cx) * np.cos(0.9 * cy))
        d = CoefficientField(g, 1.0 + 0.4 * np.cos(0.7 * cx + 0.5 * cy))
        xx, yy = g.node_coords()
        gb = ScalarField(g, 1.0 + 0.2 * np.sin(0.8 * xx) * np.cos(1.1 * yy))
        return solve_dirichlet(mu, d, gb)

    u1, u2, u3 = (solve_at(c) for c in (25, 50, 100))
    coarse = lambda u, step: u.as_matrix()[::step, ::step]
    d12 = np.linalg.norm(coarse(u1, 1) - coarse(u2, 2))
    d23 = np.linalg.norm(coarse(u2, 2) - coarse(u3, 4))
    assert 3.5 < d12 / d23 < 4.5


def test_absorbed_energy_pointwise_product():
    g = Grid(6, 6)
    mu = constant_coefficient(g, 2.0)
    u = constant_scalar(g, 0.5)
    assert np.allclose(absorbed_energy(mu, u).values, 1.0)
    zero = constant_coefficient(g, 0.0, lower=0.0)
    assert np.allclose(absorbed_energy(zero, u).values, 0.0)


def test_absorbed_energy_laplacian_ratio_identity(phantom_a):
    """Inside each region laplacian(E)/E equals absorption/diffusion."""
    from qpat2d.phantom import rasterize, region_labels
    from scipy import ndimage
    grid = phantom_a.grid(200)
    mu, d = rasterize(phantom_a, grid)
    u = solve_dirichlet(mu, d, constant_scalar(grid, 1.0))
    e = absorbed_energy(mu, u)
    ce = cell_average(e).reshape(grid.cells_y, grid.cells_x)
    lap = (ce[2:, 1:-1] + ce[:-2, 1:-1] + ce[1:-1, 2:] + ce[1:-1, :-2]
           - 4 * ce[1:-1, 1:-1]) / grid.h ** 2
    ratio = lap / ce[1:-1, 1:-1]
    labels = region_labels(phantom_a, grid).reshape(grid.cells_y, grid.cells_x)
    mu2, d2 = mu.as_matrix(), d.as_matrix()
    plus = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)
    for lbl in np.unique(labels):
        mask = ndimage.binary_erosion(labels == lbl, plus, iterations=4)[1:-1, 1:-1]
        expected = (mu2[labels == lbl][0] / d2[labels == lbl][0])
        med = np.median(ratio[mask])
        assert med == pytest.approx(expected, rel=2e-3)


def test_solve_sparse_identity_and_dense_oracle():
    rng = np.random.default_rng(9)
    import scipy.sparse as sp
    ident = SparseOperator(sp.identity(12, format="csr"), "neumann")
    rhs = rng.normal(size=12)
    assert np.allclose(solve_sparse(ident, rhs), rhs)

    g = Grid(4, 4)
    mu = CoefficientField(g, rng.uniform(0.2, 1.0, g.n_cells))
    d = CoefficientField(g, rng.uniform(0.5, 1.5, g.n_cells))
    op = assemble_operator(mu, d)
    rhs = rng.normal(size=g.n_nodes)
    x = solve_sparse(op, rhs)
    oracle = np.linalg.solve(op.matrix.toarray(), rhs)
    assert np.allclose(x, oracle, atol=1e-8)


def test_solve_sparse_dirichlet_rows_pass_boundary_through():
    rng = np.random.default_rng(13)
    g = Grid(6, 6)
    mu = CoefficientField(g, rng.uniform(0.1, 1.0, g.n_cells))
    d = CoefficientField(g, rng.uniform(0.5, 1.5, g.n_cells))
    op = assemble_operator(mu, d, bc="dirichlet0")
    rhs = rng.normal(size=g.n_nodes)
    x = solve_sparse(op, rhs)
    bnd = g.boundary_indices()
    assert np.array_equal(x[bnd], rhs[bnd])


def test_solve_sparse_validates_shapes():
    import scipy.sparse as sp
    with pytest.raises(ValueError):
        solve_sparse(SparseOperator(sp.identity(4, format="csr"), "neumann"),
                     np.ones(5))


def test_solve_sparse_reports_singular_system():
    import scipy.sparse as sp
    singular = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SolverError):
        solve_sparse(SparseOperator(singular, "neumann"), np.array([1.0, 1.0]))
