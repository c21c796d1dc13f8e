"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_double_array(x, name="array"):
    """Coerce to a float64 ndarray, rejecting non-numeric input."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.dtype != np.float64:
        raise ValueError(f"{name}: expected real-valued input, got dtype {arr.dtype}")
    return arr


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name}: contains NaN or Inf")
    return arr


def check_positive(arr, name="array"):
    if np.any(arr <= 0):
        raise ValueError(f"{name}: requires strictly positive values")
    return arr


def check_shape(arr, shape, name="array"):
    if tuple(arr.shape) != tuple(shape):
        raise ValueError(f"{name}: expected shape {tuple(shape)}, got {tuple(arr.shape)}")
    return arr


def check_even_grid(h, w):
    if h < 4 or w < 4 or h % 2 or w % 2:
        raise ValueError(f"grid extents must be even and >= 4, got {h}x{w}")


def check_spacing_match(a, b, rtol=1e-12):
    ax, ay = a
    bx, by = b
    if abs(ax - bx) > rtol * max(abs(ax), abs(bx)) or abs(ay - by) > rtol * max(abs(ay), abs(by)):
        raise ValueError(f"grid spacing mismatch: {a} vs {b}")


def broadcastable(shape_a, shape_b):
    """Trailing-dimension broadcast compatibility check."""
    for da, db in zip(reversed(shape_a), reversed(shape_b)):
        if da != db and da != 1 and db != 1:
            return False
    return True
