"""Synthetic grayscale shape images with captions.

Each sample is a single antialiased shape (disc or axis-aligned square) on
a dark background, filled either solidly or with horizontal stripes, plus
the caption naming its texture and shape.  Geometry is stored with the
sample so downstream scoring can build ideal target masks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ParameterError
from .rng import SeededRng

Array = np.ndarray

BACKGROUND = 0.1
FOREGROUND = 0.9
STRIPE_LOW = 0.35
STRIPE_PERIOD = 4
SUPERSAMPLE = 4

SHAPES = ("disc", "square")
TEXTURES = ("solid", "striped")

# A square drawn at size r covers the same area as the disc of radius r
# (half side r * sqrt(pi) / 2), so the classes differ in geometry alone
# and not in how many pixels they light up.
SQUARE_HALF_SIDE = float(np.sqrt(np.pi) / 2.0)


@dataclass(frozen=True)
class ShapeSample:
    image: Array        # (S, S) float32 in [0, 1]
    caption: str
    shape: str
    texture: str
    cx: float
    cy: float
    radius: float


def _subpixel_grid(size: int) -> Tuple[Array, Array]:
    ss = SUPERSAMPLE
    coords = (np.arange(size * ss, dtype=np.float64) + 0.5) / ss
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    return ys, xs


def shape_coverage(size: int, shape: str, cx: float, cy: float, r: float) -> Array:
    """Per-pixel fill fraction of the shape, supersampled, in [0, 1]."""
    if shape not in SHAPES:
        raise ParameterError(f"shape {shape!r} not one of {SHAPES}")
    if r <= 0:
        raise ParameterError(f"radius must be positive, got {r}")
    ys, xs = _subpixel_grid(size)
    if shape == "disc":
        inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    else:
        half = r * SQUARE_HALF_SIDE
        inside = (np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= half)
    ss = SUPERSAMPLE
    blocks = inside.reshape(size, ss, size, ss)
    return blocks.mean(axis=(1, 3)).astype(np.float32)


def ideal_mask(size: int, shape: str, cx: float, cy: float, r: float) -> Array:
    """Boolean mask of pixels at least half covered by the shape."""
    return shape_coverage(size, shape, cx, cy, r) > 0.5


def render_shape(
    size: int, shape: str, texture: str, cx: float, cy: float, r: float
) -> Array:
    """Draw the shape over the background with the requested fill."""
    if texture not in TEXTURES:
        raise ParameterError(f"texture {texture!r} not one of {TEXTURES}")
    coverage = shape_coverage(size, shape, cx, cy, r).astype(np.float64)
    if texture == "solid":
        fill = np.full((size, size), FOREGROUND, dtype=np.float64)
    else:
        rows = (np.arange(size) % STRIPE_PERIOD) < (STRIPE_PERIOD // 2)
        fill = np.where(rows, FOREGROUND, STRIPE_LOW)[:, None] * np.ones(
            (1, size)
        )
    image = BACKGROUND + coverage * (fill - BACKGROUND)
    return image.astype(np.float32)


def make_sample(
    size: int, shape: str, texture: str, cx: float, cy: float, r: float
) -> ShapeSample:
    return ShapeSample(
        image=render_shape(size, shape, texture, cx, cy, r),
        caption=f"a {texture} {shape}",
        shape=shape,
        texture=texture,
        cx=float(cx),
        cy=float(cy),
        radius=float(r),
    )


def random_sample(
    size: int,
    rng: SeededRng,
    shapes: Sequence[str] = SHAPES,
    textures: Sequence[str] = TEXTURES,
) -> ShapeSample:
    """One sample with randomized geometry; draw order is fixed."""
    shape = shapes[rng.integer(0, len(shapes))]
    texture = textures[rng.integer(0, len(textures))]
    cx = size * (0.5 + 0.15 * (2.0 * rng.uniform() - 1.0))
    cy = size * (0.5 + 0.15 * (2.0 * rng.uniform() - 1.0))
    r = size * (0.20 + 0.10 * rng.uniform())
    return make_sample(size, shape, texture, cx, cy, r)


def gen_dataset(
    count: int,
    size: int,
    rng: SeededRng,
    shapes: Sequence[str] = SHAPES,
    textures: Sequence[str] = TEXTURES,
) -> List[ShapeSample]:
    """Independent samples; sample i only depends on (seed, i)."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    if size < 8:
        raise ParameterError(f"size must be >= 8, got {size}")
    return [
        random_sample(size, rng.spawn("sample", i), shapes, textures)
        for i in range(count)
    ]
