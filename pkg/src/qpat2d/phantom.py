"""Piecewise-constant test scenes, data generation, down-sampling and noise.

A phantom is a constant background plus a list of shapes painted in order
(the last shape containing a cell center wins). Data generation follows the
protocol: simulate on a fine grid, block-average down to the measurement
grid, then add Gaussian noise scaled by the mean signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .exceptions import ConfigError
from .grid import (CoefficientField, Grid, ScalarField, cell_average,
                   field_mean, node_average)


@dataclass
class Circle:
    cx: float
    cy: float
    r: float
    mu: float
    d: float
    kind: str = "circle"

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.r ** 2

    def bounds(self) -> tuple[float, float, float, float]:
        return (self.cx - self.r, self.cy - self.r, self.cx + self.r, self.cy + self.r)


@dataclass
class Rectangle:
    x0: float
    y0: float
    x1: float
    y1: float
    mu: float
    d: float
    kind: str = "rectangle"

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


Shape = Circle | Rectangle


@dataclass
class PhantomSpec:
    """Scene description: background values plus ordered inclusion shapes."""

    mu0: float
    d0: float
    shapes: list[Shape] = field(default_factory=list)
    lower: float = 0.01
    upper: float = 3.0
    lx: float = 5.0
    ly: float = 5.0

    def __post_init__(self):
        values = [self.mu0, self.d0]
        for s in self.shapes:
            values += [s.mu, s.d]
            x0, y0, x1, y1 = s.bounds()
            if x0 < 0 or y0 < 0 or x1 > self.lx or y1 > self.ly:
                raise ConfigError(f"shape {s} extends outside the domain")
        for v in values:
            if not (self.lower <= v <= self.upper):
                raise ConfigError(
                    f"coefficient value {v} outside bounds [{self.lower}, {self.upper}]")

    def grid(self, cells: int) -> Grid:
        return Grid(cells + 1, cells + 1, self.lx, self.ly)


def rasterize(spec: PhantomSpec, grid: Grid) -> tuple[CoefficientField, CoefficientField]:
    """Cell value = value of the last shape containing the cell center."""
    x, y = grid.cell_centers()
    mu = np.full(grid.n_cells, spec.mu0)
    d = np.full(grid.n_cells, spec.d0)
    for s in spec.shapes:
        inside = s.contains(x, y)
        mu[inside] = s.mu
        d[inside] = s.d
    mk = CoefficientField(grid, mu, spec.lower, spec.upper)
    dk = CoefficientField(grid, d, spec.lower, spec.upper)
    return mk, dk


def region_labels(spec: PhantomSpec, grid: Grid) -> np.ndarray:
    """Ground-truth label per cell: 0 background, i for shape i (last wins)."""
    x, y = grid.cell_centers()
    lab = np.zeros(grid.n_cells, dtype=int)
    for i, s in enumerate(spec.shapes, start=1):
        lab[s.contains(x, y)] = i
    return lab


def true_jump_nodes(mu: CoefficientField, d: CoefficientField) -> np.ndarray:
    """Nodes adjacent to cells that disagree in mu or D (flat bool array)."""
    grid = mu.grid
    mm, dm = mu.as_matrix(), d.as_matrix()
    flags = np.zeros((grid.ny, grid.nx), dtype=bool)
    for arr in (mm, dm):
        jx = arr[:, 1:] != arr[:, :-1]          # vertical faces between cells
        jy = arr[1:, :] != arr[:-1, :]          # horizontal faces
        flags[:-1, 1:-1] |= jx
        flags[1:, 1:-1] |= jx
        flags[1:-1, :-1] |= jy
        flags[1:-1, 1:] |= jy
    return flags.ravel()


def downsample_average(f: ScalarField, factor: int) -> ScalarField:
    """Coarsen a nodal field by block-averaging its cell-centered data.

    The field is averaged to cells, cells are merged in factor x factor
    blocks, and the block means are averaged back to the nodes of the coarse
    grid. The cell-quadrature mean of the field survives both conversions
    exactly. ``factor=1`` returns an identical copy.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return f.copy()
    grid = f.grid
    if grid.cells_x % factor or grid.cells_y % factor:
        raise ValueError(
            f"cell counts {grid.cells_x}x{grid.cells_y} not divisible by {factor}")
    c = cell_average(f).reshape(grid.cells_y, grid.cells_x)
    cyc, cxc = grid.cells_y // factor, grid.cells_x // factor
    blocks = c.reshape(cyc, factor, cxc, factor).mean(axis=(1, 3))
    coarse = Grid(cxc + 1, cyc + 1, grid.lx, grid.ly)
    return ScalarField(coarse, node_average(coarse, blocks.ravel()))


@dataclass
class NoisySample:
    """Clean data, its noisy counterpart and the noise parameters."""

    clean: ScalarField
    noisy: ScalarField
    delta: float
    seed: int

    def __post_init__(self):
        if self.clean.grid != self.noisy.grid:
            raise ValueError("clean and noisy data must share a grid")


def add_noise(e: ScalarField, delta: float, seed: int = 0) -> NoisySample:
    """Add i.i.d. Gaussian noise with std = delta * spatial mean of e."""
    if delta < 0:
        raise ValueError("noise level must be nonnegative")
    if delta == 0:
        return NoisySample(e.copy(), e.copy(), 0.0, seed)
    std = delta * field_mean(e)
    rng = np.random.default_rng(seed)
    noisy = e.values + rng.normal(0.0, std, size=e.values.size)
    return NoisySample(e.copy(), ScalarField(e.grid, noisy), delta, seed)


# ---------------------------------------------------------------------------
# YAML phantom files
# ---------------------------------------------------------------------------
#
# background: {mu: 0.5, d: 2.0}
# bounds: {lower: 0.01, upper: 3.0}        # optional
# domain: {lx: 5.0, ly: 5.0}               # optional
# shapes:
#   - {kind: circle, cx: 1.6, cy: 3.4, r: 0.9, mu: 1.2, d: 2.0}
#   - {kind: rectangle, x0: 0.8, y0: 0.8, x1: 2.2, y1: 2.0, mu: 0.3, d: 1.4}

def phantom_from_dict(cfg: dict) -> PhantomSpec:
    try:
        background = cfg["background"]
        shapes_cfg = cfg.get("shapes", [])
        bounds = cfg.get("bounds", {})
        domain = cfg.get("domain", {})
        shapes: list[Shape] = []
        for s in shapes_cfg:
            kind = s.get("kind")
            if kind == "circle":
                shapes.append(Circle(s["cx"], s["cy"], s["r"], s["mu"], s["d"]))
            elif kind == "rectangle":
                shapes.append(Rectangle(s["x0"], s["y0"], s["x1"], s["y1"],
                                        s["mu"], s["d"]))
            else:
                raise ConfigError(f"unknown shape kind {kind!r}")
        return PhantomSpec(
            mu0=float(background["mu"]), d0=float(background["d"]),
            shapes=shapes,
            lower=float(bounds.get("lower", 0.01)),
            upper=float(bounds.get("upper", 3.0)),
            lx=float(domain.get("lx", 5.0)), ly=float(domain.get("ly", 5.0)))
    except KeyError as exc:
        raise ConfigError(f"phantom config missing key {exc}") from exc


def load_phantom(path) -> PhantomSpec:
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path} does not contain a phantom mapping")
    return phantom_from_dict(cfg)


def example_scene(name: str) -> PhantomSpec:
    """Built-in illustrative scenes.

    Scene "a" holds three circles: one with an absorption contrast only, one
    with a diffusion contrast only (invisible in the data itself, visible in
    its derivatives) and one with both. Scene "b" is the rectangle analogue.
    The values are this toolkit's own choices within the [0.01, 3] box.
    """
    if name == "a":
        return PhantomSpec(mu0=0.5, d0=2.0, shapes=[
            Circle(1.6, 3.4, 0.9, 1.2, 2.0),
            Circle(3.4, 3.3, 0.8, 0.5, 1.0),
            Circle(2.6, 1.4, 1.0, 1.5, 2.5),
        ])
    if name == "b":
        return PhantomSpec(mu0=0.5, d0=2.0, shapes=[
            Rectangle(0.7, 0.7, 2.1, 1.9, 1.2, 2.0),
            Rectangle(2.9, 2.7, 4.3, 4.2, 0.5, 1.0),
            Rectangle(0.9, 2.8, 2.0, 4.3, 1.4, 1.4),
        ])
    raise ConfigError(f"unknown example scene {name!r}")
