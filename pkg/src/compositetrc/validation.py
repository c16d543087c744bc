"""Input checks shared by estimators, metrics and the CLI."""
from __future__ import annotations

import numpy as np

from .data import Dataset
from .exceptions import ConfigError, DataValidationError


def check_dataset(data, min_obs=1, name="data"):
    """Require a non-empty :class:`Dataset`."""
    if not isinstance(data, Dataset):
        raise DataValidationError(f"{name} must be a Dataset, got {type(data).__name__}")
    if data.n_obs < min_obs:
        raise DataValidationError(f"{name} has {data.n_obs} observations, need at least {min_obs}")
    return data


def check_vector(x, name, n=None, positive=False):
    """1-d finite float array, optionally of length ``n`` and strictly positive."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataValidationError(f"{name} must be 1-d, got shape {x.shape}")
    if n is not None and x.size != n:
        raise DataValidationError(f"{name} has length {x.size}, expected {n}")
    if not np.all(np.isfinite(x)):
        raise DataValidationError(f"{name} contains non-finite values")
    if positive and np.any(x <= 0):
        raise DataValidationError(f"{name} must be strictly positive")
    return x


def check_positive(value, name):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not v > 0 or not np.isfinite(v):
        raise ConfigError(f"{name} must be positive and finite, got {value!r}")
    return v
