"""Input validation helpers used by the estimator classes and core modules."""

from __future__ import annotations

import os

import numpy as np

from .errors import DomainError, ShapeError, ValidationError


def check_matrix(a, name: str = "array", ndim: int = 2, dtype=np.float32) -> np.ndarray:
    """Coerce *a* to a finite ndarray of the given rank.

    Raises ValidationError on non-finite entries and ShapeError on rank mismatch.
    """
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-d array, got {arr.ndim}-d")
    if arr.size == 0:
        raise ShapeError(f"{name}: must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def check_vector(v, name: str = "vector", dtype=np.float64) -> np.ndarray:
    """Coerce *v* to a finite 1-d ndarray."""
    return check_matrix(v, name=name, ndim=1, dtype=dtype)


def check_nonzero_vector(v, name: str = "vector") -> np.ndarray:
    """Like :func:`check_vector`, additionally rejecting the zero vector."""
    arr = check_vector(v, name=name)
    if not np.any(arr):
        raise DomainError(f"{name}: zero vector has no direction")
    return arr


def check_positive(x: float, name: str) -> float:
    if not (x > 0):
        raise DomainError(f"{name} must be > 0, got {x!r}")
    return float(x)


def check_fraction(x: float, name: str, *, include_one: bool = False) -> float:
    hi_ok = x <= 1 if include_one else x < 1
    if not (0 <= x and hi_ok):
        bound = "[0, 1]" if include_one else "[0, 1)"
        raise DomainError(f"{name} must lie in {bound}, got {x!r}")
    return float(x)


def check_one_of(value: str, options: tuple[str, ...], name: str) -> str:
    if value not in options:
        raise ValidationError(f"{name} must be one of {options}, got {value!r}")
    return value


def worker_count() -> int:
    """Worker cap for parallel sections, from the WEALY_THREADS env var.

    Defaults to 1 (serial) so results are reproducible unless the user
    explicitly opts in to parallelism.
    """
    raw = os.environ.get("WEALY_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
