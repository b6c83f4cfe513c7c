"""Input validation helpers used at public API boundaries."""

from __future__ import annotations

import numpy as np


def as_float_matrix(values, name: str = "values") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting empties and non-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_binary_matrix(values, name: str = "values") -> np.ndarray:
    """Coerce to a 2-D uint8 array of zeros and ones."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must contain only 0s and 1s")
        arr = arr.astype(np.uint8)
    elif arr.size and arr.max() > 1:
        raise ValueError(f"{name} must contain only 0s and 1s")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} have mismatched shapes {a.shape} vs {b.shape}")


def check_aligned_frames(features: np.ndarray, targets: np.ndarray) -> None:
    if features.shape[0] != targets.shape[0]:
        raise ValueError(
            "feature and target frame counts differ: "
            f"{features.shape[0]} vs {targets.shape[0]}"
        )


def check_probability_vector(p, name: str = "distribution", tol: float = 1e-6) -> np.ndarray:
    """Validate a probability vector, renormalizing away rounding slack."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    total = arr.sum()
    if abs(total - 1.0) > max(tol, 1e-2):
        raise ValueError(f"{name} sums to {total}, expected 1")
    return arr / total


def check_label(value: str, name: str) -> str:
    """Reject identifiers that would corrupt the text file formats."""
    if not isinstance(value, str):
        raise ValueError(f"{name} must be a string, got {type(value).__name__}")
    if any(ch in value for ch in ",\n\r"):
        raise ValueError(f"{name} may not contain commas or newlines: {value!r}")
    return value
