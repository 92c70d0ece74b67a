"""Input validation helpers shared by the estimators and the functional API."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import ConfigError


def check_points(X, *, name="points", allow_empty=True) -> np.ndarray:
    """Return ``X`` as a C-contiguous float64 array of shape (n, 3).

    Rejects NaN/inf. Accepts a :class:`~depthdet.pointcloud_io.PointCloud`.
    """
    X = getattr(X, "points", X)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1 and X.size == 0:
        X = X.reshape(0, 3)
    X = check_array(
        X,
        dtype=np.float64,
        order="C",
        ensure_all_finite=True,
        ensure_min_samples=0 if allow_empty else 1,
        input_name=name,
    )
    if X.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {X.shape}")
    return X


def check_pixels(y, n=None, *, name="pixels") -> np.ndarray:
    y = check_array(
        np.asarray(y, dtype=np.float64),
        dtype=np.float64,
        order="C",
        ensure_all_finite=True,
        ensure_min_samples=0,
        input_name=name,
    )
    if y.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"{name} has {y.shape[0]} rows, expected {n}")
    return y


def check_positive(value, name, *, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind) or not value > 0:
        raise ConfigError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return value


def check_interval(value, name, low, high, *, closed=(True, True)):
    """Check ``low <= value <= high`` with open/closed ends as given."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ConfigError(f"{name} must be a real number, got {value!r}")
    lo_ok = value >= low if closed[0] else value > low
    hi_ok = value <= high if closed[1] else value < high
    if not (lo_ok and hi_ok):
        lb = "[" if closed[0] else "("
        rb = "]" if closed[1] else ")"
        raise ConfigError(f"{name} must lie in {lb}{low}, {high}{rb}, got {value!r}")
    return float(value)


def check_rgb(color, name="color") -> tuple[int, int, int]:
    try:
        r, g, b = (int(c) for c in color)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an (r, g, b) triple, got {color!r}") from None
    if not all(0 <= c <= 255 for c in (r, g, b)):
        raise ConfigError(f"{name} components must be in 0..255, got {color!r}")
    return r, g, b
