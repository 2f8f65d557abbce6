"""Scoring helpers: noise whiteness, mask overlap, template classification.

Nothing here is learned.  Structural consistency between two images is the
IoU of their binarized foregrounds, and class membership is the best
normalized cross-correlation against rendered class templates over a grid
of centers and sizes.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .dataset import SHAPES, TEXTURES, render_shape
from .errors import ParameterError, ShapeError

Array = np.ndarray

MASK_THRESHOLD = 0.5
CENTER_FRACTIONS = (0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65)
RADIUS_FRACTIONS = (0.18, 0.22, 0.26, 0.30)


def lag1_autocorr(eps: Array) -> float:
    """Mean absolute one-pixel circular autocorrelation over both axes.

    White noise scores near zero; smooth fields score near one.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 2:
        eps = eps[:, :, None]
    if eps.ndim != 3:
        raise ShapeError(f"expected S x S x C map, got shape {eps.shape}")
    centered = eps - eps.mean()
    denom = float(np.sum(centered * centered))
    if denom == 0.0:
        return 0.0
    total = 0.0
    for axis in (0, 1):
        shifted = np.roll(centered, 1, axis=axis)
        total += abs(float(np.sum(centered * shifted)) / denom)
    return total / 2.0


def mask_iou(a: Array, b: Array, threshold: float = MASK_THRESHOLD) -> float:
    """Overlap of the two images' foregrounds binarized at `threshold`.

    Foreground is strictly above the threshold.  An empty union counts as
    perfect agreement (1.0).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shapes {a.shape} and {b.shape} differ")
    fa = a > threshold
    fb = b > threshold
    union = int(np.count_nonzero(fa | fb))
    if union == 0:
        return 1.0
    return float(np.count_nonzero(fa & fb)) / union


@lru_cache(maxsize=None)
def _template_bank(size: int, cls: str) -> Array:
    """Centered, unit-norm class templates flattened to rows."""
    if cls in SHAPES:
        combos = [(cls, "solid")]
    elif cls in TEXTURES:
        combos = [(shape, cls) for shape in SHAPES]
    else:
        raise ParameterError(
            f"unknown class {cls!r}; expected one of {SHAPES + TEXTURES}"
        )
    rows = []
    for shape, texture in combos:
        for fx in CENTER_FRACTIONS:
            for fy in CENTER_FRACTIONS:
                for fr in RADIUS_FRACTIONS:
                    t = render_shape(
                        size, shape, texture, fx * size, fy * size, fr * size
                    )
                    v = t.astype(np.float64).ravel()
                    v -= v.mean()
                    norm = float(np.sqrt(np.sum(v * v)))
                    if norm > 0.0:
                        rows.append(v / norm)
    return np.stack(rows)


def edit_score(image: Array, cls: str) -> float:
    """Best normalized cross-correlation of the image with `cls` templates.

    1.0 means some template matches exactly up to brightness and contrast;
    a constant image scores 0 against everything.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ShapeError(f"expected a square image, got shape {image.shape}")
    bank = _template_bank(image.shape[0], cls)
    v = image.ravel() - image.mean()
    norm = float(np.sqrt(np.sum(v * v)))
    if norm == 0.0:
        return 0.0
    return float(np.max(bank @ (v / norm)))


def classify_shape(image: Array) -> str:
    """Shape label with the highest template score; ties keep listing order."""
    best = SHAPES[0]
    best_score = -math.inf
    for cls in SHAPES:
        score = edit_score(image, cls)
        if score > best_score:
            best = cls
            best_score = score
    return best


def relative_l2(a: Array, b: Array) -> float:
    """||a - b|| / ||b|| in float64; zero reference with zero error is 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shapes {a.shape} and {b.shape} differ")
    ref = float(np.sqrt(np.sum(b * b)))
    err = float(np.sqrt(np.sum((a - b) ** 2)))
    if ref == 0.0:
        return 0.0 if err == 0.0 else math.inf
    return err / ref


def median(values) -> float:
    values = list(values)
    if not values:
        raise ParameterError("median of an empty sequence")
    return float(np.median(np.asarray(values, dtype=np.float64)))
