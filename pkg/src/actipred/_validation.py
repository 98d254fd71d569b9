"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


class DataValidationError(ValueError):
    """Raised when an input record or array violates a documented contract."""


def as_bit_array(values, name: str, ndim: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a uint8 array of zeros and ones.

    Raises :class:`DataValidationError` if any entry is outside {0, 1} or if
    the dimensionality does not match ``ndim``.
    """
    arr = np.asarray(values)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if not np.issubdtype(arr.dtype, np.number):
        raise DataValidationError(f"{name} must be numeric 0/1 values")
    if arr.size and not np.isin(arr, (0, 1)).all():
        bad = arr[~np.isin(arr, (0, 1))].flat[0]
        raise DataValidationError(f"{name} must contain only 0/1, found {bad!r}")
    if ndim is not None and arr.ndim != ndim:
        raise DataValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr.astype(np.uint8, copy=False)


def check_history_matrix(X, n_features: int, name: str = "X") -> np.ndarray:
    """Validate a stack of flattened history windows (n_samples, n_features)."""
    X = as_bit_array(X, name)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise DataValidationError(
            f"{name} must have shape (n_samples, {n_features}), got {X.shape}"
        )
    return X


def check_targets(y, n_channels: int, name: str = "y") -> np.ndarray:
    """Validate a stack of future-state vectors (n_samples, n_channels)."""
    y = as_bit_array(y, name)
    if y.ndim == 1:
        y = y.reshape(-1, 1) if n_channels == 1 else y.reshape(1, -1)
    if y.ndim != 2 or y.shape[1] != n_channels:
        raise DataValidationError(
            f"{name} must have shape (n_samples, {n_channels}), got {y.shape}"
        )
    return y


def check_equal_length(a, b, what: str) -> None:
    if len(a) != len(b):
        raise DataValidationError(f"{what}: length mismatch ({len(a)} vs {len(b)})")
