"""Input validation helpers shared by the estimators and the functional API."""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_rate",
    "check_probability_vector",
    "check_stim_matrix",
    "check_outcomes",
]


def check_rate(value: float, name: str, *, allow_zero: bool = True) -> float:
    """Validate an error rate in [0, 0.5) and return it as a float."""
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    lo_ok = value >= 0.0 if allow_zero else value > 0.0
    if not (lo_ok and value < 0.5):
        bound = "[0, 0.5)" if allow_zero else "(0, 0.5)"
        raise ValueError(f"{name} must lie in {bound}, got {value!r}")
    return value


def check_probability_vector(x, name: str = "x", *, open_interval: bool = False) -> np.ndarray:
    """Coerce to a float array of probabilities, checking the domain."""
    arr = np.asarray(x, dtype=float)
    if open_interval:
        bad = (arr <= 0.0) | (arr >= 1.0)
    else:
        bad = (arr < 0.0) | (arr > 1.0)
    if np.any(bad) or not np.all(np.isfinite(arr)):
        interval = "(0, 1)" if open_interval else "[0, 1]"
        raise ValueError(f"{name} entries must lie in {interval}")
    return arr


def check_stim_matrix(X, *, n_neurons: int | None = None) -> np.ndarray:
    """Validate a (tests x neurons) binary stimulation matrix.

    Every row must stimulate at least one neuron; entries must be 0/1.
    """
    arr = np.asarray(X)
    if arr.ndim != 2:
        raise ValueError(f"stimulation matrix must be 2-D, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("stimulation matrix entries must be 0 or 1")
    arr = arr.astype(np.int8, copy=False)
    if n_neurons is not None and arr.shape[1] != n_neurons:
        raise ValueError(f"expected {n_neurons} columns, got {arr.shape[1]}")
    if arr.shape[0] and not arr.any(axis=1).all():
        empty = int(np.flatnonzero(~arr.any(axis=1))[0])
        raise ValueError(f"test {empty} stimulates no neuron")
    return arr


def check_outcomes(y, n_tests: int) -> np.ndarray:
    """Validate binary outcomes of shape (tests,) or (tests, outputs)."""
    arr = np.asarray(y)
    if arr.ndim not in (1, 2):
        raise ValueError(f"outcomes must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[0] != n_tests:
        raise ValueError(f"expected {n_tests} outcome rows, got {arr.shape[0]}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("outcomes must be 0 or 1")
    return arr.astype(np.int8, copy=False)
