"""Small input-validation helpers used by the estimators and core ops."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, ValidationError


def as_float_array(x, dtype=np.float32) -> np.ndarray:
    """Coerce to a C-contiguous array of the given float dtype."""
    return np.ascontiguousarray(np.asarray(x, dtype=dtype))


def check_finite(x: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.isfinite(x).all():
        raise ValidationError(f"{name} contains NaN or Inf values")
    return x


def check_2d(x, name: str = "X") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def check_labels(y, n_samples: int) -> np.ndarray:
    """Validate integer labels 0..N-1 with every class present."""
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ShapeError(f"labels must have shape ({n_samples},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        yi = y.astype(np.int64)
        if not np.array_equal(yi, y):
            raise ValidationError("labels must be integers")
        y = yi
    if y.min() < 0:
        raise ValidationError("labels must be non-negative")
    n_classes = int(y.max()) + 1
    present = np.unique(y)
    missing = sorted(set(range(n_classes)) - set(present.tolist()))
    if missing:
        raise ValidationError(f"classes absent from labels: {missing}")
    return y.astype(np.int64)


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} differ in shape: {a.shape} vs {b.shape}")
