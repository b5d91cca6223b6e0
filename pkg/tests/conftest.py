"""Shared fixtures: simulated data sets are expensive, build them once."""

import numpy as np
import pytest

from qpat2d.fem import absorbed_energy, solve_dirichlet
from qpat2d.grid import constant_scalar
from qpat2d.phantom import downsample_average, example_scene, rasterize


def simulate_clean(spec, fine_cells, factor):
    """Forward-solve on the fine grid and block-average down."""
    fine = spec.grid(fine_cells)
    mu_f, d_f = rasterize(spec, fine)
    u_f = solve_dirichlet(mu_f, d_f, constant_scalar(fine, 1.0))
    return downsample_average(absorbed_energy(mu_f, u_f), factor)


@pytest.fixture(scope="session")
def phantom_a():
    return example_scene("a")


@pytest.fixture(scope="session")
def phantom_b():
    return example_scene("b")


@pytest.fixture(scope="session")
def data_a_200(phantom_a):
    """Clean measurement data for scene A on the 200x200-cell grid."""
    return simulate_clean(phantom_a, 400, 2)


@pytest.fixture(scope="session")
def data_a_100(phantom_a):
    """Clean scene-A data on the 100x100-cell grid (factor-2 protocol)."""
    return simulate_clean(phantom_a, 200, 2)


@pytest.fixture(scope="session")
def truth_a_200(phantom_a):
    return rasterize(phantom_a, phantom_a.grid(200))


@pytest.fixture(scope="session")
def truth_a_100(phantom_a):
    return rasterize(phantom_a, phantom_a.grid(100))
