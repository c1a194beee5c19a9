"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


class ProxidistError(Exception):
    """Base class for package errors. ``stage`` names the pipeline step."""

    stage = "estimation"


class InputError(ProxidistError, ValueError):
    stage = "ingestion"


class ConfigError(ProxidistError, ValueError):
    stage = "config"


class NumericalError(ProxidistError, ArithmeticError):
    stage = "estimation"


class IllConditionedError(NumericalError):
    """Raised when a square bridge system is too ill-conditioned to invert."""

    def __init__(self, message, kappa_min=None, condition_number=None):
        super().__init__(message)
        self.kappa_min = kappa_min
        self.condition_number = condition_number


def as_2d(values, name="array", allow_nan=False):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"{name} must be 1- or 2-dimensional, got shape {arr.shape}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def as_1d(values, name="array", allow_nan=False):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise InputError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def check_treatment(a, name="a"):
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 1:
        raise InputError(f"{name} must be 1-dimensional")
    bad = ~np.isin(arr, (0.0, 1.0))
    if np.any(bad):
        raise InputError(f"non-binary treatment: {name} contains {arr[bad][0]!r}")
    return arr.astype(np.int8)


def check_grid(grid, name="grid"):
    g = as_1d(grid, name)
    if g.size == 0:
        raise InputError(f"{name} is empty")
    if np.any(np.diff(g) <= 0):
        raise InputError(f"{name} must be strictly increasing")
    return g


def check_consistent_length(*arrays):
    lengths = {len(x) for x in arrays if x is not None}
    if len(lengths) > 1:
        raise InputError(f"inconsistent row counts: {sorted(lengths)}")


def check_weights(weights, n):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = as_1d(weights, "weights")
    if w.size != n or np.any(w < 0):
        raise InputError("weights must be nonnegative with one entry per row")
    return w / w.sum()


def check_spd(matrix, name):
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError(f"{name} must be a square matrix")
    if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.abs(m).max())):
        raise InputError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise InputError(f"{name} is not positive definite") from exc
    return m


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
