"""Input validation helpers shared by the estimators and the functional API."""

from __future__ import annotations

import numbers

import numpy as np


class ConfigurationError(ValueError):
    """Raised when parameters are mutually inconsistent."""


def check_bits(x, *, length=None, ndim=None, name="bits"):
    """Return ``x`` as a uint8 array of zeros and ones.

    ``length`` constrains the size of the last axis; ``ndim`` the number of
    axes (1 for a single vector, 2 for a batch).
    """
    arr = np.asarray(x)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    elif not np.issubdtype(arr.dtype, np.integer):
        if arr.size and not np.all(np.isin(arr, (0, 1))):
            raise ValueError(f"{name} must contain only 0 and 1")
        arr = arr.astype(np.uint8)
    else:
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise ValueError(f"{name} must contain only 0 and 1")
        arr = arr.astype(np.uint8, copy=False)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimension(s), got {arr.ndim}")
    if length is not None and (arr.ndim == 0 or arr.shape[-1] != length):
        got = arr.shape[-1] if arr.ndim else 0
        raise ValueError(f"{name} has length {got}, expected {length}")
    return arr


def check_count(value, name, *, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_probability(p, name="p"):
    p = float(p)
    if not 0.0 <= p <= 1.0 or np.isnan(p):
        raise ValueError(f"{name} must lie in [0, 1], got {p}")
    return p


def check_rate(rate):
    rate = float(rate)
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    return rate


def check_seed(seed):
    """Normalise a seed to a non-negative 64-bit integer."""
    if seed is None:
        return 0
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must lie in [0, 2**64)")
    return int(seed)
