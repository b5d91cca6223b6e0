"""Staged Gaussian-derivative edge detection on noisy energy maps.

Coefficient jumps leave three kinds of traces in the data: jumps of the
absorption show up in the data itself, jumps of the diffusion only in its
first or second derivatives. Each stage therefore convolves the data with a
truncated Gaussian (or its gradient / Laplacian), takes a logarithm to
equalize the multiplicative contrast, and thresholds the gradient magnitude
of the result. Later stages exclude an eroded neighborhood of everything
found earlier so the same interface is not detected twice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import EdgeDetectionError
from .grid import Grid, ScalarField

LOG_FLOOR = 1e-300  # guards log() of smoothed data and |Laplacian| responses


@dataclass
class Kernel:
    """Square filter window sampled from a continuous Gaussian formula.

    The half-width is 2*ceil(sigma) pixels, so the window side is
    4*ceil(sigma)+1. Scales are in pixel units: smoothing taps sum to one,
    gradient taps are antisymmetric with unit first moment (a linear ramp of
    slope one per pixel filters to exactly one), Laplacian taps sum to zero.
    """

    window: np.ndarray
    sigma: float
    kind: str  # smooth | gradient-x | gradient-y | laplacian

    @property
    def radius(self) -> int:
        return self.window.shape[0] // 2


def make_kernel(sigma: float, kind: str) -> Kernel:
    if sigma <= 0:
        raise ValueError("kernel scale must be positive")
    rho = 2 * math.ceil(sigma)
    t = np.arange(-rho, rho + 1, dtype=float)
    tx, ty = np.meshgrid(t, t)
    g = np.exp(-(tx ** 2 + ty ** 2) / (2.0 * sigma ** 2))
    if kind == "smooth":
        w = g / g.sum()
    elif kind in ("gradient-x", "gradient-y"):
        axis = tx if kind == "gradient-x" else ty
        w = -axis / sigma ** 2 * g
        w = 0.5 * (w - w[::-1, ::-1])           # enforce exact antisymmetry
        moment = -np.sum(axis * w)              # response to a unit ramp
        w = w / moment
    elif kind == "laplacian":
        w = ((tx ** 2 + ty ** 2) / sigma ** 2 - 2.0) / sigma ** 2 * g
        w = w - w.mean()                        # zero response to constants
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return Kernel(w, sigma, kind)


@dataclass
class EdgeParams:
    """Scales and thresholds per stage plus the gradient floor of stage 1."""

    sigma: tuple[float, ...] = (0.5, 0.5, 0.5)
    xi: tuple[float, ...] = (0.1, 0.1, 0.1)
    gamma: float = 1e-4
    stages: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        self.stages = tuple(sorted(set(int(s) for s in self.stages)))
        if any(s not in (0, 1, 2) for s in self.stages):
            raise ValueError("stages must be within {0, 1, 2}")
        for s in self.stages:
            if s >= len(self.sigma) or s >= len(self.xi):
                raise ValueError(f"stage {s} active but sigma/xi not provided")
            if self.sigma[s] <= 0 or self.xi[s] <= 0:
                raise ValueError("active stages need positive sigma and xi")
        if 1 in self.stages and not self.gamma > 0:
            raise ValueError("stage 1 needs a positive gradient floor gamma")


@dataclass
class EdgeMask:
    """Detected jump set: nodal flags plus the stage that produced each flag."""

    grid: Grid
    flags: np.ndarray
    provenance: np.ndarray = field(default=None)  # -1 none, else stage index

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool).ravel()
        if self.flags.size != self.grid.n_nodes:
            raise ValueError("flag count does not match grid")
        if self.provenance is None:
            self.provenance = np.where(self.flags, 0, -1).astype(np.int8)
        self.provenance = np.asarray(self.provenance, dtype=np.int8).ravel()

    def as_matrix(self) -> np.ndarray:
        return self.flags.reshape(self.grid.ny, self.grid.nx)

    def count(self) -> int:
        return int(self.flags.sum())

    def to_field(self) -> ScalarField:
        return ScalarField(self.grid, self.flags.astype(float))


def empty_mask(grid: Grid) -> EdgeMask:
    return EdgeMask(grid, np.zeros(grid.n_nodes, dtype=bool))


def dilate_mask(mask: EdgeMask, iterations: int = 1) -> EdgeMask:
    flags = ndimage.binary_dilation(mask.as_matrix(), structure=np.ones((3, 3)),
                                    iterations=iterations)
    return EdgeMask(mask.grid, flags.ravel(), mask.provenance.copy())


def convolve_masked(f: ScalarField, kernel: Kernel,
                    valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Convolve where the whole window fits inside the valid region.

    Returns the filtered image and the eroded validity mask; values outside
    the returned mask are unspecified. Raises when the kernel does not fit
    into the grid at all.
    """
    grid = f.grid
    side = kernel.window.shape[0]
    if side > grid.nx or side > grid.ny:
        raise EdgeDetectionError(
            f"kernel window {side}x{side} larger than grid {grid.nx}x{grid.ny}")
    valid = np.asarray(valid, dtype=bool).reshape(grid.ny, grid.nx)
    out_valid = ndimage.binary_erosion(valid, structure=np.ones((side, side)),
                                       border_value=0)
    data = np.where(valid, f.as_matrix(), 0.0)
    out = ndimage.convolve(data, kernel.window, mode="constant", cval=0.0)
    return out, out_valid


def _masked_gradient_magnitude(f: np.ndarray,
                               valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """|grad f| per pixel: central differences inside the valid region,
    one-sided at its borders; pixels without any valid neighbor drop out."""
    mag2 = np.zeros_like(f)
    ok = valid.copy()
    for axis in (0, 1):
        fwd_ok = np.zeros_like(valid)
        bwd_ok = np.zeros_like(valid)
        fwd = np.zeros_like(f)
        bwd = np.zeros_like(f)
        sl_from = [slice(None)] * 2
        sl_to = [slice(None)] * 2
        sl_from[axis] = slice(1, None)
        sl_to[axis] = slice(None, -1)
        fwd_ok[tuple(sl_to)] = valid[tuple(sl_from)]
        fwd[tuple(sl_to)] = f[tuple(sl_from)] - f[tuple(sl_to)]
        bwd_ok[tuple(sl_from)] = valid[tuple(sl_to)]
        bwd[tuple(sl_from)] = f[tuple(sl_from)] - f[tuple(sl_to)]
        both = fwd_ok & bwd_ok
        one = fwd_ok ^ bwd_ok
        diff = np.zeros_like(f)
        diff[both] = 0.5 * (fwd[both] + bwd[both])
        diff[one & fwd_ok] = fwd[one & fwd_ok]
        diff[one & bwd_ok] = bwd[one & bwd_ok]
        ok &= fwd_ok | bwd_ok
        mag2 += diff ** 2
    return np.sqrt(mag2), ok


def detect_stage(e: ScalarField, stage: int, sigma: float, xi: float,
                 valid: np.ndarray, gamma: float = 1e-4) -> EdgeMask:
    """Run a single detection stage on the given validity region.

    Stage 0 thresholds the log of the smoothed data, stage 1 the log of the
    floored squared gradient magnitude, stage 2 the log of the absolute
    Laplacian response.
    """
    grid = e.grid
    if stage == 0:
        sm, v = convolve_masked(e, make_kernel(sigma, "smooth"), valid)
        f = np.log(np.maximum(sm, LOG_FLOOR))
    elif stage == 1:
        if not gamma > 0:
            raise ValueError("stage 1 requires a positive gamma floor")
        gx, v = convolve_masked(e, make_kernel(sigma, "gradient-x"), valid)
        gy, _ = convolve_masked(e, make_kernel(sigma, "gradient-y"), valid)
        f = np.log(np.maximum(gx ** 2 + gy ** 2, gamma))
    elif stage == 2:
        lp, v = convolve_masked(e, make_kernel(sigma, "laplacian"), valid)
        f = np.log(np.maximum(np.abs(lp), LOG_FLOOR))
    else:
        raise ValueError(f"unknown stage {stage}")
    mag, vg = _masked_gradient_magnitude(f, v)
    flags = vg & (mag >= xi)
    prov = np.where(flags, stage, -1).astype(np.int8)
    return EdgeMask(grid, flags.ravel(), prov.ravel())


def detect_edges(e_delta: ScalarField, params: EdgeParams) -> EdgeMask:
    """Union of the active stages, each restricted to what is left over.

    Stage k works on the grid minus everything already detected, eroded by
    its own window, so windows never straddle known jumps or the domain
    boundary. Raises when an active stage has no valid pixels left.
    """
    grid = e_delta.grid
    flags = np.zeros((grid.ny, grid.nx), dtype=bool)
    prov = np.full((grid.ny, grid.nx), -1, dtype=np.int8)
    # The outermost nodal ring holds the prescribed illumination values and
    # the cell-averaging imprint of the down-sampler; detection works on the
    # open interior.
    valid = np.ones((grid.ny, grid.nx), dtype=bool)
    valid[0, :] = valid[-1, :] = False
    valid[:, 0] = valid[:, -1] = False
    for stage in params.stages:
        region = valid & ~flags
        side = 4 * math.ceil(params.sigma[stage]) + 1
        eroded = ndimage.binary_erosion(region, structure=np.ones((side, side)),
                                        border_value=0)
        if not eroded.any():
            raise EdgeDetectionError(
                f"stage {stage}: no valid pixels remain after erosion")
        found = detect_stage(e_delta, stage, params.sigma[stage],
                             params.xi[stage], region, gamma=params.gamma)
        new = found.as_matrix() & ~flags
        prov[new] = stage
        flags |= new
    return EdgeMask(grid, flags.ravel(), prov.ravel())
