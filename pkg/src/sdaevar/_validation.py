"""Input validation helpers shared by the numerical modules."""

import numpy as np


def as_matrix(a, name="A", allow_empty=False):
    """Return ``a`` as a finite 2-D float64 array.

    1-D input is promoted to a column. Raises ``ValueError`` on NaN/Inf or on
    an empty dimension (unless ``allow_empty``).
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not allow_empty and min(arr.shape) < 1:
        raise ValueError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_square(a, name="A"):
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_rows(a, b, a_name="A", b_name="B"):
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"{b_name} has {b.shape[0]} rows but {a_name} has {a.shape[0]}"
        )


def as_vector(v, name="v", size=None):
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if size is not None and arr.size != size:
        raise ValueError(f"{name} must have length {size}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_positive(value, name):
    if not (np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be positive, got {value!r}")
    return float(value)
