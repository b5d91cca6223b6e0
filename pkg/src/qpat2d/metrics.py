"""Quality metrics for reconstructions and detected edge sets."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .grid import CoefficientField


def relative_l2(est: np.ndarray, true: np.ndarray) -> float:
    """||est - true||_2 / ||true||_2 over cells."""
    est = np.asarray(est, dtype=float).ravel()
    true = np.asarray(true, dtype=float).ravel()
    return float(np.linalg.norm(est - true) / np.linalg.norm(true))


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap 2|A n B| / (|A| + |B|) of two boolean masks."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / denom)


def inclusion_dice(mu_est: CoefficientField, mu_true: CoefficientField) -> float:
    """Dice of the thresholded absorption inclusions.

    The threshold sits midway between the true background (the most common
    value) and the smallest true inclusion value above it.
    """
    tv = mu_true.values
    vals, counts = np.unique(tv, return_counts=True)
    background = vals[np.argmax(counts)]
    above = vals[vals > background]
    if above.size == 0:
        return 1.0
    thr = 0.5 * (background + above.min())
    return dice(mu_est.values >= thr, tv >= thr)


def mask_recall_precision(detected: np.ndarray, truth: np.ndarray,
                          tol_px: float = 2.0) -> tuple[float, float]:
    """Fraction of truth pixels near a detection, and vice versa."""
    detected = np.asarray(detected, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if not truth.any() or not detected.any():
        return (1.0 if not truth.any() else 0.0,
                1.0 if not detected.any() else 0.0)
    dist_det = ndimage.distance_transform_edt(~detected)
    dist_tru = ndimage.distance_transform_edt(~truth)
    recall = float((dist_det[truth] <= tol_px).mean())
    precision = float((dist_tru[detected] <= tol_px).mean())
    return recall, precision


def diagonal_profiles(*cell_images: np.ndarray) -> dict[str, np.ndarray]:
    """Values of each (cells_y, cells_x) image along both image diagonals."""
    shapes = {img.shape for img in cell_images}
    if len(shapes) != 1:
        raise ValueError("profile images must share a shape")
    ny, nx = shapes.pop()
    k = min(nx, ny)
    rows = np.linspace(0, ny - 1, k).round().astype(int)
    cols = np.linspace(0, nx - 1, k).round().astype(int)
    out = {"index": np.arange(k)}
    for i, img in enumerate(cell_images):
        out[f"diag_{i}"] = img[rows, cols]
        out[f"antidiag_{i}"] = img[rows[::-1], cols]
    return out
