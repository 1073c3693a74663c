"""Small input-validation helpers shared across modules."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigError, NumericError


def check_scalar(value, name, kind=numbers.Real, low=None, high=None, low_open=False, high_open=False):
    """Validate a scalar hyperparameter and return it unchanged."""
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"{name} must be {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    if isinstance(value, float) and not np.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value}")
    if low is not None and (value < low or (low_open and value == low)):
        raise ConfigError(f"{name} must be {'>' if low_open else '>='} {low}, got {value}")
    if high is not None and (value > high or (high_open and value == high)):
        raise ConfigError(f"{name} must be {'<' if high_open else '<='} {high}, got {value}")
    return value


def check_array(x, name, ndim=None, dtype=float, allow_empty=False):
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ConfigError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ConfigError(f"{name} must be non-empty")
    if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def check_action_dist(pi, n_rounds, n_actions, name="action_dist", atol=1e-8):
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (n_rounds, n_actions):
        raise ConfigError(f"{name} must have shape ({n_rounds}, {n_actions}), got {pi.shape}")
    if np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=atol):
        raise ConfigError(f"{name} rows must be probability vectors")
    return pi
