"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


class DataValidationError(ValueError):
    """Input data violates a documented contract (bad file, bad value, bad shape)."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values."""


def check_finite(name: str, value) -> None:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{name} contains non-finite values")


def check_ratio(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or not 0.0 <= value <= 1.0:
        raise DataValidationError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def as_state_ids(x, n_states: int = 256) -> np.ndarray:
    """Coerce to a 1-D integer array of state ids, checking range."""
    ids = np.atleast_1d(np.asarray(x))
    if ids.ndim != 1:
        raise DataValidationError(f"state ids must be 1-D, got shape {ids.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        cast = ids.astype(np.int64)
        if not np.array_equal(cast, ids):
            raise DataValidationError("state ids must be integers")
        ids = cast
    if ids.size and (ids.min() < 0 or ids.max() >= n_states):
        raise DataValidationError(f"state ids must lie in [0, {n_states - 1}]")
    return ids.astype(np.int64)


def as_bit_matrix(x, n_bits: int = 8) -> np.ndarray:
    """Coerce to an (n, n_bits) array of 0/1 values."""
    bits = np.asarray(x)
    if bits.ndim == 1:
        bits = bits[np.newaxis, :]
    if bits.ndim != 2 or bits.shape[1] != n_bits:
        raise DataValidationError(f"expected (n, {n_bits}) bit array, got shape {bits.shape}")
    if not np.isin(bits, (0, 1)).all():
        raise DataValidationError("bit values must be 0 or 1")
    return bits.astype(np.uint8)
