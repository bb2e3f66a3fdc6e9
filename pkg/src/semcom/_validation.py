"""Input validation helpers shared across modules."""

from __future__ import annotations

import numpy as np

from .errors import DimMismatch, NotNormalized

SIMPLEX_ATOL = 1e-9


def as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    """Accept a Generator, a seed, or None (fresh entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def as_float_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise DimMismatch(f"{name} must be 2-dimensional, got shape {arr.shape}")
    return arr


def check_shape(arr: np.ndarray, shape: tuple[int, ...], name: str = "array") -> None:
    if arr.shape != shape:
        raise DimMismatch(f"{name} has shape {arr.shape}, expected {shape}")


def check_probability_vector(p, name: str = "p", atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate nonnegativity and unit sum; returns the vector as float64."""
    vec = np.asarray(p, dtype=float)
    if vec.ndim != 1:
        raise DimMismatch(f"{name} must be a vector, got shape {vec.shape}")
    if np.any(vec < 0):
        raise NotNormalized(f"{name} has negative entries")
    total = float(vec.sum())
    if abs(total - 1.0) > atol:
        raise NotNormalized(f"{name} sums to {total!r}, expected 1 within {atol}")
    return vec


def freeze(arr: np.ndarray) -> np.ndarray:
    """Return a read-only float64 copy; shared objects stay immutable."""
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out
