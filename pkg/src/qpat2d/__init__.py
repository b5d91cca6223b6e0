"""2D quantitative photoacoustic tomography toolkit.

Simulates diffusive light transport, generates noisy absorbed-energy data and
reconstructs piecewise-constant absorption and diffusion coefficients, either
by the analytic jump-based procedure (clean data) or by minimizing an
edge-indicator (phase-field) regularized least-squares functional.
"""

from .grid import (CoefficientField, Grid, ScalarField, constant_coefficient,
                   constant_scalar)
from .fem import absorbed_energy, assemble_operator, solve_dirichlet, solve_sparse

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "ScalarField",
    "CoefficientField",
    "constant_scalar",
    "constant_coefficient",
    "assemble_operator",
    "solve_dirichlet",
    "absorbed_energy",
    "solve_sparse",
    "__version__",
]
