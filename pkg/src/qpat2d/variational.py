"""Phase-field regularized Gauss-Newton reconstruction.

Minimizes, over box-bounded cellwise coefficients (mu, D) and nodal edge
indicators (v_mu, v_D) in [0, 1],

    F(mu, D, v_mu, v_D) =
        1/2 ||E(mu, D) - data||^2
      + alpha_mu/2 int (v_mu^2 + zeta_mu) |grad mu|^2
      + alpha_D/2  int (v_D^2  + zeta_D)  |grad D|^2
      + beta_mu int (eps |grad v_mu|^2 + (1 - v_mu)^2 / (4 eps))
      + beta_D  int (eps |grad v_D|^2  + (1 - v_D)^2  / (4 eps))

by alternating (i) projected Gauss-Newton steps in the coefficients, obtained
from one coupled sparse system over five nodal unknowns (the two steps plus
three auxiliary PDE solutions), and (ii) exact minimization over the edge
indicators, two independent elliptic solves.

Discrete conventions: integrals use cell-midpoint quadrature except the
|grad v|^2 term, which is integrated exactly over the bilinear interpolant
(midpoint quadrature leaves the indicator solve singular along its
checkerboard mode). The Gauss-Newton data term pairs residuals with the
consistent mass matrix; every cell/node conversion enters the linearized
system together with its transpose, so the discrete adjoint identity is
exact.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import SolverDivergence, SolverError
from .grid import (CoefficientField, Grid, ScalarField, cell_average,
                   cell_to_node_matrix, check_same_grid, constant_scalar,
                   node_to_cell_matrix)
from .fem import (DirichletSystem, absorbed_energy, grad_coupling,
                  mass_coupling, mass_matrix, stiffness_matrix)
from .edges import EdgeMask, dilate_mask


@dataclass
class Hyperparams:
    """Weights, floors and stopping rules of the functional and its solver."""

    alpha_mu: float
    alpha_d: float
    beta_mu: float
    beta_d: float
    zeta_mu: float = 1e-6
    zeta_d: float = 1e-4
    epsilon: float = 0.01
    lower: float = 0.01
    upper: float = 3.0
    outer_tol: float = 1e-4
    inner_tol: float = 1e-2
    max_outer: int = 40
    max_inner: int = 12
    log_params: bool = False

    def __post_init__(self):
        positives = dict(alpha_mu=self.alpha_mu, alpha_d=self.alpha_d,
                         beta_mu=self.beta_mu, beta_d=self.beta_d,
                         zeta_mu=self.zeta_mu, zeta_d=self.zeta_d,
                         epsilon=self.epsilon, outer_tol=self.outer_tol,
                         inner_tol=self.inner_tol)
        for name, v in positives.items():
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if not 0 < self.lower < self.upper:
            raise ValueError("need 0 < lower < upper")


@dataclass
class FunctionalBreakdown:
    discrepancy: float
    smooth_mu: float
    smooth_d: float
    length_mu: float
    length_d: float

    @property
    def total(self) -> float:
        return (self.discrepancy + self.smooth_mu + self.smooth_d
                + self.length_mu + self.length_d)

    def as_dict(self) -> dict:
        return {"discrepancy": self.discrepancy, "smooth_mu": self.smooth_mu,
                "smooth_d": self.smooth_d, "length_mu": self.length_mu,
                "length_d": self.length_d, "total": self.total}


@dataclass
class ATState:
    """Current iterate: coefficients, edge indicators and cached forward data."""

    mu: CoefficientField
    d: CoefficientField
    v_mu: ScalarField
    v_d: ScalarField
    u: ScalarField
    energy: ScalarField
    breakdown: FunctionalBreakdown | None = None
    system: DirichletSystem | None = field(default=None, repr=False)


def forward_state(mu: CoefficientField, d: CoefficientField,
                  v_mu: ScalarField, v_d: ScalarField,
                  g: ScalarField) -> ATState:
    """Solve the forward problem and bundle an iterate."""
    system = DirichletSystem(mu, d)
    u = system.solve_boundary_value(g)
    return ATState(mu, d, v_mu, v_d, u, absorbed_energy(mu, u), system=system)


def project_box(c: CoefficientField, lower: float, upper: float) -> CoefficientField:
    """Clamp cell values into [lower, upper]."""
    if not lower < upper:
        raise ValueError("need lower < upper")
    return CoefficientField(c.grid, np.clip(c.values, lower, upper), lower, upper)


def cell_grad_sq(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Squared gradient magnitude per cell of a cellwise field.

    Face differences divided by the spacing; each cell averages the squares
    over its existing faces per axis, so boundary cells use the one-sided
    face only.
    """
    v = np.asarray(values, dtype=float).reshape(grid.cells_y, grid.cells_x)
    h = grid.h
    out = np.zeros_like(v)
    for axis in (0, 1):
        d = np.diff(v, axis=axis) / h
        s = np.zeros_like(v)
        n = np.zeros_like(v)
        if axis == 0:
            s[1:, :] += d ** 2
            n[1:, :] += 1.0
            s[:-1, :] += d ** 2
            n[:-1, :] += 1.0
        else:
            s[:, 1:] += d ** 2
            n[:, 1:] += 1.0
            s[:, :-1] += d ** 2
            n[:, :-1] += 1.0
        out += s / np.maximum(n, 1.0)
    return out.ravel()


def _coeff_base(values: np.ndarray, hp: Hyperparams) -> np.ndarray:
    """The field the smoothness terms act on: the coefficient or its log."""
    return np.log(values) if hp.log_params else values


def eval_functional(state: ATState, hp: Hyperparams,
                    e_delta: ScalarField) -> FunctionalBreakdown:
    """The five functional terms on the current iterate."""
    grid = check_same_grid(state.mu, state.energy, e_delta)
    h2 = grid.h ** 2
    diff = ScalarField(grid, state.energy.values - e_delta.values)
    disc = 0.5 * h2 * float(np.sum(cell_average(diff) ** 2))

    k1 = _unit_stiffness(grid)
    terms = []
    for coeff, v, alpha, beta, zeta in (
            (state.mu, state.v_mu, hp.alpha_mu, hp.beta_mu, hp.zeta_mu),
            (state.d, state.v_d, hp.alpha_d, hp.beta_d, hp.zeta_d)):
        ge = cell_grad_sq(_coeff_base(coeff.values, hp), grid)
        qv = cell_average(v)
        smooth = 0.5 * alpha * h2 * float(np.sum((qv ** 2 + zeta) * ge))
        length = beta * (hp.epsilon * float(v.values @ (k1 @ v.values))
                         + h2 / (4.0 * hp.epsilon) * float(np.sum((1.0 - qv) ** 2)))
        terms += [smooth, length]
    return FunctionalBreakdown(disc, terms[0], terms[2], terms[1], terms[3])


@functools.lru_cache(maxsize=16)
def _unit_stiffness(grid: Grid) -> sp.csr_matrix:
    return stiffness_matrix(grid, np.ones(grid.n_cells))


@functools.lru_cache(maxsize=16)
def _unit_mass(grid: Grid) -> sp.csr_matrix:
    return mass_matrix(grid, 1.0)


@functools.lru_cache(maxsize=16)
def _interior_diag(grid: Grid) -> sp.dia_matrix:
    return sp.diags((~grid.boundary_mask()).astype(float))


# ---------------------------------------------------------------------------
# measurement-operator linearization
# ---------------------------------------------------------------------------

def apply_derivative(mu: CoefficientField, d: CoefficientField, u: ScalarField,
                     s_mu: CoefficientField, s_d: CoefficientField,
                     system: DirichletSystem | None = None) -> ScalarField:
    """Directional derivative of the energy map for cellwise perturbations.

    Linearizes around (mu, d) with fluence u: the perturbation changes the
    data directly through mu and indirectly through the fluence, which takes
    two zero-boundary solves with the frozen operator.
    """
    grid = check_same_grid(mu, d, u, s_mu, s_d)
    system = system or DirichletSystem(mu, d)
    gm = mass_coupling(grid, u.values)
    gk = grad_coupling(grid, u.values)
    y1 = system.solve_zero_bc(-(gm @ s_mu.values))
    y2 = system.solve_zero_bc(-(gk @ s_d.values))
    p = cell_to_node_matrix(grid)
    de = (p @ s_mu.values) * u.values + (p @ mu.values) * (y1 + y2)
    return ScalarField(grid, de)


def apply_adjoint(mu: CoefficientField, d: CoefficientField, u: ScalarField,
                  t: ScalarField,
                  system: DirichletSystem | None = None
                  ) -> tuple[CoefficientField, CoefficientField]:
    """Adjoint of the linearized energy map applied to a nodal field.

    Adjoint with respect to the mass-matrix inner product on nodal data and
    the plain cell quadrature (h^2 per cell) on coefficients; it costs one
    zero-boundary solve.
    """
    grid = check_same_grid(mu, d, u, t)
    system = system or DirichletSystem(mu, d)
    m = _unit_mass(grid)
    p = cell_to_node_matrix(grid)
    mt = m @ t.values
    w = system.solve_zero_bc((p @ mu.values) * mt)
    gm = mass_coupling(grid, u.values)
    gk = grad_coupling(grid, u.values)
    h2 = grid.h ** 2
    a_mu = (p.T @ (u.values * mt) - gm.T @ w) / h2
    a_d = -(gk.T @ w) / h2
    bounds = dict(lower=mu.lower, upper=mu.upper)
    return (CoefficientField(grid, a_mu, **bounds),
            CoefficientField(grid, a_d, **bounds))


# ---------------------------------------------------------------------------
# the coupled Gauss-Newton system
# ---------------------------------------------------------------------------

def _sigma_cells(v: ScalarField, zeta: float) -> np.ndarray:
    """Cell coefficient of the weighted-stiffness blocks: (midpoint v)^2 + zeta."""
    return cell_average(v) ** 2 + zeta


@functools.lru_cache(maxsize=16)
def _interleave_permutation(n: int, nfields: int = 5) -> sp.csr_matrix:
    """Permutation gathering the fields of each node into one super-node."""
    fields = np.arange(nfields).repeat(n)
    nodes = np.tile(np.arange(n), nfields)
    perm = nodes * nfields + fields
    size = nfields * n
    return sp.csr_matrix((np.ones(size), (perm, np.arange(size))),
                         shape=(size, size))


def _solve_block_system(sys5: sp.spmatrix, rhs: np.ndarray, n: int,
                        hp: Hyperparams) -> tuple[np.ndarray, float]:
    """Factorize and solve the five-field system.

    The raw block arrangement defeats the factorization: its block scales
    differ by several orders of magnitude, so partial pivoting wanders across
    blocks and the fill explodes. Interleaving the five unknowns per node,
    scaling symmetrically by the diagonal and factorizing in symmetric mode
    with (almost) diagonal pivoting keeps the fill near what the grid
    structure demands; one step of iterative refinement restores full
    accuracy.
    """
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0.0
    pmat = _interleave_permutation(n)
    sys_i = (pmat @ sys5 @ pmat.T).tocsc()
    scale = 1.0 / np.sqrt(np.maximum(np.abs(sys_i.diagonal()), 1e-300))
    smat = sp.diags(scale)
    try:
        lu = spla.splu((smat @ sys_i @ smat).tocsc(),
                       permc_spec="MMD_AT_PLUS_A",
                       options=dict(SymmetricMode=True, DiagPivotThresh=1e-3))
    except RuntimeError as exc:
        raise SolverError(
            "singular Gauss-Newton block system; check that the gradient "
            f"floors keep the step blocks elliptic (zeta_mu={hp.zeta_mu}, "
            f"zeta_d={hp.zeta_d}, alpha_mu={hp.alpha_mu}, alpha_d={hp.alpha_d})"
        ) from exc

    def solve(b):
        return pmat.T @ (scale * lu.solve(scale * (pmat @ b)))

    sol = solve(rhs)
    for _ in range(2):  # iterative refinement against the unscaled system
        resid = rhs - sys5 @ sol
        residual = float(np.linalg.norm(resid) / rhs_norm)
        if residual <= 1e-10:
            break
        sol = sol + solve(resid)
    residual = float(np.linalg.norm(rhs - sys5 @ sol) / rhs_norm)
    if residual > 1e-8:
        raise SolverError("Gauss-Newton block solve missed tolerance",
                          residual=residual)
    return sol, residual


def gauss_newton_step(state: ATState, hp: Hyperparams, e_delta: ScalarField
                      ) -> tuple[ScalarField, ScalarField, dict]:
    """One linearized step: assemble and solve the five-block system.

    Unknowns are the two nodal steps (natural boundary rows, coupled to the
    data through three auxiliary fields with zero-Dirichlet rows). The block
    system is the exact normal-equation form of the quadratic model

        1/2 ||E + E'(s) - data||^2_M
        + alpha_mu/2 <K_mu (base_mu + s_mu), base_mu + s_mu> + (same for D)

    where base is the nodal interpolant of the coefficient (or its log) and
    K the stiffness weighted by (v^2 + zeta).
    """
    grid = check_same_grid(state.mu, e_delta)
    system = state.system or DirichletSystem(state.mu, state.d)
    n = grid.n_nodes
    h2 = grid.h ** 2

    p = cell_to_node_matrix(grid)
    q = node_to_cell_matrix(grid)
    m = _unit_mass(grid)
    ibz = _interior_diag(grid)
    a0 = system.dirichlet0

    uvals = state.u.values
    gm = mass_coupling(grid, uvals)
    gk = grad_coupling(grid, uvals)
    if hp.log_params:
        c_mu = gm @ sp.diags(state.mu.values) @ q
        c_d = gk @ sp.diags(state.d.values) @ q
        t_mu = sp.diags(uvals) @ (p @ sp.diags(state.mu.values) @ q)
    else:
        c_mu = gm @ q
        c_d = gk @ q
        t_mu = sp.diags(uvals) @ (p @ q)
    pm = sp.diags(p @ state.mu.values)

    k_mu = hp.alpha_mu * stiffness_matrix(grid, _sigma_cells(state.v_mu, hp.zeta_mu))
    k_d = hp.alpha_d * stiffness_matrix(grid, _sigma_cells(state.v_d, hp.zeta_d))

    mt = m @ t_mu
    mpm = m @ pm
    tmt = t_mu.T @ mt
    tmpm = t_mu.T @ mpm
    pmmt = ibz @ (pm @ mt)
    pmmpm = ibz @ (pm @ mpm)

    blocks = [
        [tmt + k_mu, None, tmpm, tmpm, -c_mu.T],
        [None, k_d, None, None, -c_d.T],
        [ibz @ c_mu, None, a0, None, None],
        [None, ibz @ c_d, None, a0, None],
        [-pmmt, None, -pmmpm, -pmmpm, a0],
    ]
    sys5 = sp.bmat(blocks, format="csc")

    r = state.energy.values - e_delta.values
    mr = m @ r
    w_r = system.solve_zero_bc(pm @ mr)
    base_mu = p @ _coeff_base(state.mu.values, hp)
    base_d = p @ _coeff_base(state.d.values, hp)
    r_mu = -(t_mu.T @ mr) + c_mu.T @ w_r - k_mu @ base_mu
    r_d = c_d.T @ w_r - k_d @ base_d
    rhs = np.concatenate([r_mu, r_d, np.zeros(3 * n)])

    sol, residual = _solve_block_system(sys5, rhs, n, hp)
    s_mu = ScalarField(grid, sol[:n])
    s_d = ScalarField(grid, sol[n:2 * n])
    info = {"block_residual": residual,
            "step_norm_mu": float(np.linalg.norm(sol[:n])),
            "step_norm_d": float(np.linalg.norm(sol[n:2 * n]))}
    return s_mu, s_d, info


def update_v(mu: CoefficientField, d: CoefficientField, hp: Hyperparams
             ) -> tuple[ScalarField, ScalarField]:
    """Exact minimizers of the functional over the edge indicators.

    Each indicator solves one natural-boundary elliptic problem whose
    reaction term grows with the local squared coefficient gradient; the
    solution is clamped into [0, 1] afterwards.
    """
    grid = check_same_grid(mu, d)
    q = node_to_cell_matrix(grid)
    k1 = _unit_stiffness(grid)
    h2 = grid.h ** 2
    qtq = (q.T @ q).tocsr()
    out = []
    for coeff, alpha, beta, zeta in ((mu, hp.alpha_mu, hp.beta_mu, hp.zeta_mu),
                                     (d, hp.alpha_d, hp.beta_d, hp.zeta_d)):
        ge = cell_grad_sq(_coeff_base(coeff.values, hp), grid)
        a = (alpha * h2 * (q.T @ sp.diags(ge) @ q)
             + 2.0 * beta * hp.epsilon * k1
             + beta / (2.0 * hp.epsilon) * h2 * qtq)
        b = beta / (2.0 * hp.epsilon) * h2 * (q.T @ np.ones(grid.n_cells))
        try:
            v = spla.splu(a.tocsc()).solve(b)
        except RuntimeError as exc:
            raise SolverError(f"indicator solve failed: {exc}") from exc
        out.append(ScalarField(grid, np.clip(v, 0.0, 1.0)))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# outer minimization
# ---------------------------------------------------------------------------

def initial_indicator(grid: Grid, edges: EdgeMask | None) -> ScalarField:
    """1 - indicator of the (1-node dilated) detected edge set."""
    if edges is None:
        return constant_scalar(grid, 1.0)
    if edges.grid != grid:
        raise ValueError("edge mask grid does not match data grid")
    fat = dilate_mask(edges, iterations=1)
    return ScalarField(grid, 1.0 - fat.flags.astype(float))


def _updated_coefficient(c: CoefficientField, s: ScalarField, t: float,
                         hp: Hyperparams) -> CoefficientField:
    """Apply a damped nodal step to a cellwise coefficient and project."""
    q = node_to_cell_matrix(c.grid)
    ds = t * (q @ s.values)
    if hp.log_params:
        new = np.exp(np.clip(np.log(c.values) + ds,
                             math.log(hp.lower), math.log(hp.upper)))
    else:
        new = np.clip(c.values + ds, hp.lower, hp.upper)
    return CoefficientField(c.grid, new, hp.lower, hp.upper)


def _relative_change(before: float, after: float) -> float:
    if before == 0.0:
        return 0.0 if after == 0.0 else math.inf
    return abs(before - after) / abs(before)


def minimize(e_delta: ScalarField, hp: Hyperparams,
             initial_edges: EdgeMask | None = None,
             g: ScalarField | None = None,
             backtracking: bool = True,
             max_backtracks: int = 10) -> tuple[ATState, list[dict]]:
    """Alternating minimization driver.

    Starts from unit coefficients and indicators that vanish on the detected
    edges. The inner loop takes (optionally backtracked) Gauss-Newton steps
    until the functional change falls below ``inner_tol``; the outer loop
    alternates with indicator updates until the change over a full sweep
    falls below ``outer_tol``. With backtracking enabled a step that still
    increases the functional after ``max_backtracks`` halvings is rejected,
    which keeps the accepted sequence non-increasing; without it (the plain
    update rule) steps are always applied.

    Returns the final iterate and one record per accepted step with the
    functional breakdown, step norms and solver residuals. Raises
    SolverDivergence when the functional exceeds ten times its initial value.
    """
    grid = e_delta.grid
    if g is None:
        g = constant_scalar(grid, 1.0)
    start = float(np.clip(1.0, hp.lower, hp.upper))
    mu = CoefficientField(grid, np.full(grid.n_cells, start), hp.lower, hp.upper)
    d = mu.copy()
    v0 = initial_indicator(grid, initial_edges)
    state = forward_state(mu, d, v0, v0.copy(), g)
    state.breakdown = eval_functional(state, hp, e_delta)
    f_init = state.breakdown.total
    records: list[dict] = [{
        "outer": 0, "inner": 0, "phase": "init", "backtracks": 0,
        "step_norm_mu": 0.0, "step_norm_d": 0.0, "block_residual": 0.0,
        **state.breakdown.as_dict()}]

    for outer in range(1, hp.max_outer + 1):
        f_outer_start = state.breakdown.total
        for inner in range(1, hp.max_inner + 1):
            f_before = state.breakdown.total
            s_mu, s_d, info = gauss_newton_step(state, hp, e_delta)
            t = 1.0
            accepted = False
            trial = None
            backtracks = 0
            while True:
                mu_try = _updated_coefficient(state.mu, s_mu, t, hp)
                d_try = _updated_coefficient(state.d, s_d, t, hp)
                trial = forward_state(mu_try, d_try, state.v_mu, state.v_d, g)
                trial.breakdown = eval_functional(trial, hp, e_delta)
                if not backtracking or trial.breakdown.total <= f_before:
                    accepted = True
                    break
                if backtracks >= max_backtracks:
                    break
                t *= 0.5
                backtracks += 1
            if not accepted:
                records.append({"outer": outer, "inner": inner,
                                "phase": "gn-rejected", "backtracks": backtracks,
                                **state.breakdown.as_dict(), **info})
                break
            state = trial
            records.append({"outer": outer, "inner": inner, "phase": "gn",
                            "backtracks": backtracks,
                            **state.breakdown.as_dict(), **info})
            if state.breakdown.total > 10.0 * max(f_init, 1e-300):
                raise SolverDivergence(
                    f"functional grew to {state.breakdown.total:.3e} from "
                    f"{f_init:.3e}", log=records)
            if _relative_change(f_before, state.breakdown.total) < hp.inner_tol:
                break

        v_mu_new, v_d_new = update_v(state.mu, state.d, hp)
        cand = ATState(state.mu, state.d, v_mu_new, v_d_new, state.u,
                       state.energy, system=state.system)
        cand.breakdown = eval_functional(cand, hp, e_delta)
        # the solve minimizes the indicator quadratic exactly; the guard only
        # protects against clamping pathologies
        if cand.breakdown.total <= state.breakdown.total:
            state = cand
        records.append({"outer": outer, "inner": 0, "phase": "v",
                        "backtracks": 0, "step_norm_mu": 0.0,
                        "step_norm_d": 0.0, "block_residual": 0.0,
                        **state.breakdown.as_dict()})
        if _relative_change(f_outer_start, state.breakdown.total) < hp.outer_tol:
            break
    return state, records
