"""Region-wise recovery of absorption and diffusion from clean energy data.

With piecewise-constant coefficients and a complete jump set, the energy map
determines both coefficients: the boundary values fix the absorption of every
region touching the boundary, interface ratios of the energy propagate the
absorption across regions, and the ratio of the discrete Laplacian to the
data fixes absorption/diffusion inside each region.

Point-wise limits at interfaces are realized as medians of short linear
extrapolations: the data transition band is skipped by sampling at depths of
two to four cells and extrapolating the log-energy back to the interface.
This module targets clean or nearly clean data; under real noise the
variational solver is the robust path.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import RecoveryError
from .grid import Grid, ScalarField, cell_average
from .edges import EdgeMask

_PLUS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# Linear extrapolation of log-energy samples back to the interface. The
# measurement data smears every jump over roughly two cells (fine-grid
# averaging plus down-sampling), so sampling starts at depth 3; depth-j cell
# centers sit at (j - 0.5)h from the face. Weights solve the least-squares
# linear fit evaluated at distance zero.
_DEPTHS3 = (3, 4, 5)
_W3 = np.array([25.0, 4.0, -17.0]) / 12.0
_DEPTHS2 = (3, 4)
_W2 = np.array([3.5, -2.5])

NEAR_ZERO_RATIO = 1e-8  # |laplacian/data| below this means absorption ~ 0


@dataclass
class Partition:
    """Cell labeling 1..M with region adjacency and boundary contact info."""

    grid: Grid
    labels: np.ndarray
    n_regions: int = 0
    interfaces: dict = field(default_factory=dict)   # (m,n) m<n -> face arrays
    boundary_contact: np.ndarray = field(default=None)  # per region, #cells

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=int).ravel()
        if lab.size != self.grid.n_cells:
            raise ValueError("label count does not match grid cells")
        uniq = np.unique(lab)
        remap = {int(v): i + 1 for i, v in enumerate(uniq)}
        self.labels = np.vectorize(remap.get)(lab) if uniq.size else lab
        self.n_regions = len(uniq)
        self._build_topology()

    def _build_topology(self):
        g = self.grid
        lab2 = self.labels.reshape(g.cells_y, g.cells_x)
        self.interfaces = {}
        # vertical faces between (r, c) and (r, c+1), horizontal between
        # (r, c) and (r+1, c); record row/col of the lower-index cell
        for axis, (la, lb) in (("x", (lab2[:, :-1], lab2[:, 1:])),
                               ("y", (lab2[:-1, :], lab2[1:, :]))):
            rr, cc = np.nonzero(la != lb)
            for r, c in zip(rr, cc):
                p, q = (int(la[r, c]), int(lb[r, c]))
                key = (min(p, q), max(p, q))
                self.interfaces.setdefault(key, []).append((axis, int(r), int(c), p))
        contact = np.zeros(self.n_regions + 1, dtype=int)
        ring = np.zeros_like(lab2, dtype=bool)
        ring[0, :] = ring[-1, :] = True
        ring[:, 0] = ring[:, -1] = True
        for lbl, cnt in zip(*np.unique(lab2[ring], return_counts=True)):
            contact[int(lbl)] = int(cnt)
        self.boundary_contact = contact

    def region_mask(self, label: int) -> np.ndarray:
        return (self.labels == label).reshape(self.grid.cells_y, self.grid.cells_x)

    def boundary_regions(self) -> list[int]:
        return [m for m in range(1, self.n_regions + 1) if self.boundary_contact[m] > 0]

    def neighbors(self, label: int) -> list[int]:
        out = set()
        for p, q in self.interfaces:
            if p == label:
                out.add(q)
            elif q == label:
                out.add(p)
        return sorted(out)


def segment(edges: EdgeMask) -> Partition:
    """Connected components (4-connectivity) of the non-edge cells.

    A cell counts as an edge cell when any of its corner nodes is flagged;
    afterwards edge cells are merged into the nearest region so the labeling
    covers the whole grid.
    """
    grid = edges.grid
    nf = edges.as_matrix()
    edge_cells = nf[:-1, :-1] | nf[:-1, 1:] | nf[1:, :-1] | nf[1:, 1:]
    free = ~edge_cells
    if not free.any():
        raise RecoveryError("edge mask covers every cell; nothing to segment")
    lab, n = ndimage.label(free, structure=_PLUS)
    if edge_cells.any():
        _, (ir, ic) = ndimage.distance_transform_edt(lab == 0, return_indices=True)
        lab = lab[ir, ic]
    return Partition(grid, lab.ravel())


def partition_from_labels(grid: Grid, labels: np.ndarray) -> Partition:
    """Partition from a precomputed label image (e.g. a rasterized scene)."""
    return Partition(grid, np.asarray(labels, dtype=int).ravel())


@dataclass
class RegionValues:
    """Recovered per-region coefficients with sampling diagnostics."""

    mu: np.ndarray
    d: np.ndarray
    diagnostics: dict


def _extrapolate_to_face(loge: np.ndarray, lab2: np.ndarray, rows: np.ndarray,
                         cols: np.ndarray, dr: int, dc: int,
                         label: int | np.ndarray,
                         interior_dist: np.ndarray | None = None) -> np.ndarray:
    """Linear extrapolation of log-energy toward a face, per sample column.

    (rows, cols) index the depth-1 cells next to the face; (dr, dc) steps away
    from it. Uses depths (3,4,5) when all lie inside the region, falls back to
    (3,4), else NaN. When ``interior_dist`` (euclidean distance to the nearest
    cell of another region) is given, walks that hug the interface -
    staircased diagonal boundaries - are rejected: the deepest sample must be
    about as far from the region boundary as its walk depth.
    """
    ny, nx = lab2.shape
    depth_vals = []
    depth_ok = []
    for j in _DEPTHS3:
        r = rows + (j - 1) * dr
        c = cols + (j - 1) * dc
        inside = (r >= 0) & (r < ny) & (c >= 0) & (c < nx)
        rs, cs = np.clip(r, 0, ny - 1), np.clip(c, 0, nx - 1)
        ok = inside & (lab2[rs, cs] == label)
        if interior_dist is not None:
            ok &= interior_dist[rs, cs] >= (j - 1.6)
        depth_ok.append(ok)
        depth_vals.append(np.where(ok, loge[rs, cs], np.nan))
    ok3 = depth_ok[0] & depth_ok[1] & depth_ok[2]
    ok2 = depth_ok[0] & depth_ok[1]
    v = np.full(rows.shape, np.nan)
    v[ok2] = _W2[0] * depth_vals[0][ok2] + _W2[1] * depth_vals[1][ok2]
    v[ok3] = (_W3[0] * depth_vals[0][ok3] + _W3[1] * depth_vals[1][ok3]
              + _W3[2] * depth_vals[2][ok3])
    return v


def _distance_to_other_regions(lab2: np.ndarray) -> np.ndarray:
    """Per cell: euclidean distance (in cells) to the nearest foreign cell."""
    dist = np.zeros(lab2.shape)
    for lbl in np.unique(lab2):
        mask = lab2 == lbl
        dist[mask] = ndimage.distance_transform_edt(mask)[mask]
    return dist


def _boundary_value_samples(loge: np.ndarray, lab2: np.ndarray, g,
                            grid: Grid,
                            interior_dist: np.ndarray | None = None
                            ) -> dict[int, list[float]]:
    """Per-region log(E/g) samples extrapolated to the domain boundary."""
    ny, nx = lab2.shape
    gv = None if np.isscalar(g) else g.as_matrix()
    samples: dict[int, list[float]] = {}
    sides = (
        (np.zeros(nx, int), np.arange(nx), 1, 0, "bottom"),
        (np.full(nx, ny - 1), np.arange(nx), -1, 0, "top"),
        (np.arange(ny), np.zeros(ny, int), 0, 1, "left"),
        (np.arange(ny), np.full(ny, nx - 1), 0, -1, "right"),
    )
    for rows, cols, dr, dc, side in sides:
        labels_here = lab2[rows, cols]
        vals = _extrapolate_to_face(loge, lab2, rows, cols, dr, dc, labels_here,
                                    interior_dist=interior_dist)
        if gv is None:
            gface = np.full(rows.shape, float(g))
        else:
            # boundary nodes bracketing each boundary cell face
            if side == "bottom":
                gface = 0.5 * (gv[0, cols] + gv[0, cols + 1])
            elif side == "top":
                gface = 0.5 * (gv[-1, cols] + gv[-1, cols + 1])
            elif side == "left":
                gface = 0.5 * (gv[rows, 0] + gv[rows + 1, 0])
            else:
                gface = 0.5 * (gv[rows, -1] + gv[rows + 1, -1])
        if np.any(gface <= 0):
            raise RecoveryError(f"illumination must be positive on the {side} side")
        for lbl, v, gf in zip(labels_here, vals, gface):
            if np.isfinite(v):
                samples.setdefault(int(lbl), []).append(float(v - np.log(gf)))
    return samples


def _interface_log_ratios(loge: np.ndarray, lab2: np.ndarray, part: Partition,
                          interior_dist: np.ndarray
                          ) -> dict[tuple[int, int], np.ndarray]:
    """Median-ready log(E_p) - log(E_q) samples per adjacent region pair."""
    out = {}
    for (p, q), faces in part.interfaces.items():
        rows_a, cols_a, rows_b, cols_b, drs, dcs = [], [], [], [], [], []
        for axis, r, c, first in faces:
            if axis == "x":
                rows_a.append(r); cols_a.append(c)
                rows_b.append(r); cols_b.append(c + 1)
                drs.append(0); dcs.append(1)
            else:
                rows_a.append(r); cols_a.append(c)
                rows_b.append(r + 1); cols_b.append(c)
                drs.append(1); dcs.append(0)
        diffs = []
        for dr, dc in ((0, 1), (1, 0)):
            sel = [(d1, d2) == (dr, dc) for d1, d2 in zip(drs, dcs)]
            if not any(sel):
                continue
            idx = np.flatnonzero(sel)
            ra = np.asarray(rows_a)[idx]; ca = np.asarray(cols_a)[idx]
            rb = np.asarray(rows_b)[idx]; cb = np.asarray(cols_b)[idx]
            la = lab2[ra, ca]
            lb = lab2[rb, cb]
            va = _extrapolate_to_face(loge, lab2, ra, ca, -dr, -dc, la,
                                      interior_dist)
            vb = _extrapolate_to_face(loge, lab2, rb, cb, dr, dc, lb,
                                      interior_dist)
            ok = np.isfinite(va) & np.isfinite(vb)
            signed = np.where(la == p, va - vb, vb - va)  # orient as p minus q
            diffs.append(signed[ok])
        if diffs:
            comb = np.concatenate(diffs)
            if comb.size:
                out[(p, q)] = comb
    return out


def recover_mu(e: ScalarField, part: Partition, g=1.0,
               order: str = "bfs") -> tuple[np.ndarray, dict]:
    """Absorption per region from boundary values and interface ratios.

    The region with the longest boundary contact anchors the values; the rest
    follow by breadth-first (or depth-first) propagation of the interface
    ratios of the extrapolated energy.
    """
    grid = e.grid
    if not np.isscalar(g) and g.grid != grid:
        raise RecoveryError("illumination grid does not match data grid")
    ce = cell_average(e).reshape(grid.cells_y, grid.cells_x)
    if np.any(ce <= 0):
        raise RecoveryError("energy data must be positive for log sampling")
    loge = np.log(ce)
    lab2 = part.labels.reshape(grid.cells_y, grid.cells_x)

    bregions = part.boundary_regions()
    if not bregions:
        raise RecoveryError("no region touches the domain boundary")
    anchor = max(bregions, key=lambda m: part.boundary_contact[m])
    interior_dist = _distance_to_other_regions(lab2)
    bsamples = _boundary_value_samples(loge, lab2, g, grid, interior_dist)
    if anchor not in bsamples or not bsamples[anchor]:
        raise RecoveryError("anchor region yielded no boundary samples")
    ratios = _interface_log_ratios(loge, lab2, part, interior_dist)

    logmu = np.full(part.n_regions + 1, np.nan)
    logmu[anchor] = float(np.median(bsamples[anchor]))
    frontier = deque([anchor])
    consistency = []
    while frontier:
        m = frontier.popleft() if order == "bfs" else frontier.pop()
        for n in part.neighbors(m):
            key = (min(m, n), max(m, n))
            if key not in ratios:
                continue
            med = float(np.median(ratios[key]))
            diff = med if key == (m, n) else -med   # log E_m - log E_n
            implied = logmu[m] - diff               # mu_m / mu_n = E_m / E_n
            if np.isnan(logmu[n]):
                logmu[n] = implied
                frontier.append(n)
            else:
                consistency.append(abs(logmu[n] - implied))
    if np.any(np.isnan(logmu[1:])):
        missing = [m for m in range(1, part.n_regions + 1) if np.isnan(logmu[m])]
        raise RecoveryError(f"regions {missing} unreachable from anchor {anchor}")

    mu = np.exp(logmu[1:])
    if np.any(mu <= 0):
        raise RecoveryError("nonpositive absorption ratio encountered")
    diag = {
        "anchor": anchor,
        "boundary_sample_counts": {m: len(v) for m, v in bsamples.items()},
        "interface_sample_counts": {f"{p}-{q}": int(v.size)
                                    for (p, q), v in ratios.items()},
        "interface_ratio_iqr": {f"{p}-{q}": float(np.subtract(*np.percentile(v, [75, 25])))
                                for (p, q), v in ratios.items()},
        "cycle_consistency_max": float(max(consistency)) if consistency else 0.0,
    }
    return mu, diag


def recover_d(e: ScalarField, part: Partition,
              mu: np.ndarray) -> tuple[np.ndarray, dict]:
    """Diffusion per region from the Laplacian-to-data ratio of the energy.

    Samples the five-point Laplacian over cells at least three cells away
    from any interface; the per-region median of laplacian/data equals
    mu/D inside the region.
    """
    grid = e.grid
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.size != part.n_regions:
        raise RecoveryError("need one absorption value per region")
    ce = cell_average(e).reshape(grid.cells_y, grid.cells_x)
    h2 = grid.h ** 2
    lap = np.full_like(ce, np.nan)
    lap[1:-1, 1:-1] = (ce[2:, 1:-1] + ce[:-2, 1:-1] + ce[1:-1, 2:]
                       + ce[1:-1, :-2] - 4.0 * ce[1:-1, 1:-1]) / h2

    d = np.zeros(part.n_regions)
    counts = {}
    spreads = {}
    degenerate = []
    for m in range(1, part.n_regions + 1):
        mask = part.region_mask(m)
        core = ndimage.binary_erosion(mask, structure=_PLUS, iterations=3,
                                      border_value=0)
        core[:1, :] = core[-1:, :] = False
        core[:, :1] = core[:, -1:] = False
        ratios = lap[core] / ce[core]
        ratios = ratios[np.isfinite(ratios)]
        if ratios.size == 0:
            raise RecoveryError(
                f"region {m} too thin to sample the interior Laplacian")
        med = float(np.median(ratios))
        counts[m] = int(ratios.size)
        spreads[m] = float(np.subtract(*np.percentile(ratios, [75, 25])))
        if abs(med) < NEAR_ZERO_RATIO:
            degenerate.append(m)
            d[m - 1] = np.inf
        else:
            d[m - 1] = mu[m - 1] / med
    diag = {"laplacian_sample_counts": counts,
            "laplacian_ratio_iqr": spreads,
            "near_zero_ratio_regions": degenerate}
    return d, diag


def recover(e: ScalarField, part: Partition, g=1.0,
            order: str = "bfs") -> RegionValues:
    """Full analytic recovery: absorption first, then diffusion."""
    mu, dmu = recover_mu(e, part, g=g, order=order)
    d, dd = recover_d(e, part, mu)
    return RegionValues(mu, d, {**dmu, **dd})


def paint_regions(part: Partition, values: np.ndarray) -> np.ndarray:
    """Cell image with values[label-1] per cell."""
    vals = np.asarray(values, dtype=float).ravel()
    return vals[part.labels - 1]
