import numpy as np
import pytest

from qpat2d.exceptions import GridMismatchError
from qpat2d.grid import (CoefficientField, Grid, ScalarField, cell_average,
                         cell_to_node_matrix, check_same_grid, constant_scalar,
                         field_mean, load_coefficient_csv, load_scalar_csv,
                         node_average, node_to_cell_matrix,
                         save_coefficient_csv, save_scalar_csv)


def test_grid_basic_properties():
    g = Grid(11, 6, 5.0, 2.5)
    assert g.h == pytest.approx(0.5)
    assert g.n_nodes == 66
    assert g.n_cells == 50
    bnd = g.boundary_mask().reshape(6, 11)
    assert bnd[0].all() and bnd[-1].all()
    assert bnd[:, 0].all() and bnd[:, -1].all()
    assert not bnd[1:-1, 1:-1].any()
    assert bnd.sum() == 2 * 11 + 2 * 6 - 4


def test_grid_rejects_bad_shapes():
    with pytest.raises(ValueError):
        Grid(2, 5)
    with pytest.raises(ValueError):
        Grid(5, 5, 5.0, 3.0)  # non-square cells


def test_field_size_validation():
    g = Grid(5, 5)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros(7))
    with pytest.raises(ValueError):
        CoefficientField(g, np.zeros(5))
    with pytest.raises(ValueError):
        ScalarField(g, np.full(25, np.nan))


def test_grid_mismatch_detected():
    f1 = constant_scalar(Grid(5, 5), 1.0)
    f2 = constant_scalar(Grid(7, 7), 1.0)
    with pytest.raises(GridMismatchError):
        check_same_grid(f1, f2)


def test_cell_average_of_bilinear_is_midpoint_value():
    g = Grid(9, 9, 4.0, 4.0)
    xx, yy = g.node_coords()
    f = ScalarField(g, 2.0 * xx + 3.0 * yy)
    cx, cy = g.cell_centers()
    assert np.allclose(cell_average(f), 2.0 * cx + 3.0 * cy, atol=1e-13)


def test_node_average_weights():
    g = Grid(3, 3, 2.0, 2.0)
    cells = np.array([1.0, 2.0, 3.0, 4.0])  # SW, SE, NW, NE cells
    nodes = node_average(g, cells).reshape(3, 3)
    assert nodes[0, 0] == 1.0               # corner node: single cell
    assert nodes[0, 1] == pytest.approx(1.5)  # edge node: two cells
    assert nodes[1, 1] == pytest.approx(2.5)  # center node: all four


def test_transfer_matrices_match_direct_functions():
    rng = np.random.default_rng(0)
    g = Grid(7, 5, 3.0, 2.0)
    f = ScalarField(g, rng.normal(size=g.n_nodes))
    c = rng.normal(size=g.n_cells)
    assert np.allclose(node_to_cell_matrix(g) @ f.values, cell_average(f))
    assert np.allclose(cell_to_node_matrix(g) @ c, node_average(g, c))
    # both operators reproduce constants
    assert np.allclose(node_to_cell_matrix(g) @ np.ones(g.n_nodes), 1.0)
    assert np.allclose(cell_to_node_matrix(g) @ np.ones(g.n_cells), 1.0)


def test_field_mean_constant():
    g = Grid(12, 12)
    assert field_mean(constant_scalar(g, 3.25)) == pytest.approx(3.25)


@pytest.mark.parametrize("seed", [0, 1])
def test_scalar_csv_roundtrip_bit_exact(tmp_path, seed):
    rng = np.random.default_rng(seed)
    g = Grid(17, 9, 5.0, 2.5)
    f = ScalarField(g, rng.normal(size=g.n_nodes) * np.pi)
    path = tmp_path / "field.csv"
    save_scalar_csv(f, path)
    back = load_scalar_csv(path)
    assert back.grid == g
    assert np.array_equal(back.values, f.values)


def test_coefficient_csv_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    g = Grid(9, 13, 2.0, 3.0)
    c = CoefficientField(g, rng.uniform(0.01, 3.0, g.n_cells))
    path = tmp_path / "coeff.csv"
    save_coefficient_csv(c, path)
    back = load_coefficient_csv(path)
    assert back.grid == g
    assert np.array_equal(back.values, c.values)


def test_csv_header_and_row_order(tmp_path):
    g = Grid(3, 3, 5.0, 5.0)
    vals = np.arange(9.0)
    save_scalar_csv(ScalarField(g, vals), tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().strip().splitlines()
    assert lines[0] == "3,3,5,5"
    assert lines[1] == "0,1,2"       # bottom row (y = 0) first
    assert lines[3] == "6,7,8"
