"""Policy interface and the non-parametric policies used throughout the package.

A policy is any object with ``action_dist(context, timestamp) -> (n, n_actions)``.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .exceptions import ConfigError


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def epsilon_greedy(values: np.ndarray, epsilon: float) -> np.ndarray:
    """``(1 - eps)`` on the row argmax (lowest index on ties) plus ``eps / |A|`` everywhere."""
    n, n_actions = values.shape
    out = np.full((n, n_actions), epsilon / n_actions)
    out[np.arange(n), np.argmax(values, axis=1)] += 1.0 - epsilon
    return out


def _broadcast_time(timestamp, n):
    t = np.asarray(timestamp, dtype=float)
    return np.full(n, float(t)) if t.ndim == 0 else t


class Policy:
    """Base class: conditional action distribution ``pi(a | x, t)``."""

    n_actions: int

    def action_dist(self, context, timestamp) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def prob(self, context, timestamp, action) -> np.ndarray:
        pi = self.action_dist(context, timestamp)
        return pi[np.arange(pi.shape[0]), np.asarray(action, dtype=np.int64)]


class UniformPolicy(Policy):
    def __init__(self, n_actions: int):
        self.n_actions = int(n_actions)

    def action_dist(self, context, timestamp):
        n = np.atleast_2d(context).shape[0]
        return np.full((n, self.n_actions), 1.0 / self.n_actions)


class FixedActionPolicy(Policy):
    """Always plays ``action``."""

    def __init__(self, n_actions: int, action: int):
        if not 0 <= action < n_actions:
            raise ConfigError(f"action {action} outside [0, {n_actions})")
        self.n_actions = int(n_actions)
        self.action = int(action)

    def action_dist(self, context, timestamp):
        n = np.atleast_2d(context).shape[0]
        out = np.zeros((n, self.n_actions))
        out[:, self.action] = 1.0
        return out


class FrozenTimePolicy(Policy):
    """Wraps ``policy`` so that it is always queried at ``t_frozen``."""

    def __init__(self, policy: Policy, t_frozen: float):
        self.policy = policy
        self.t_frozen = float(t_frozen)
        self.n_actions = policy.n_actions

    def action_dist(self, context, timestamp):
        n = np.atleast_2d(context).shape[0]
        return self.policy.action_dist(context, np.full(n, self.t_frozen))


class CallablePolicy(Policy):
    """Adapter for a plain function ``f(context, timestamp) -> (n, n_actions)``."""

    def __init__(self, func, n_actions: int):
        self.func = func
        self.n_actions = int(n_actions)

    def action_dist(self, context, timestamp):
        context = np.atleast_2d(np.asarray(context, dtype=float))
        return np.asarray(self.func(context, _broadcast_time(timestamp, context.shape[0])), dtype=float)


class _ReferenceTime:
    t_ref: Optional[float]

    def _query_time(self, timestamp, n):
        if self.t_ref is not None:
            return np.full(n, self.t_ref)
        if timestamp is None:
            raise ConfigError("policy has no t_ref, so it needs a timestamp")
        return _broadcast_time(timestamp, n)


class RewardSoftmaxPolicy(_ReferenceTime, Policy):
    """``pi(a | x, t) ∝ exp(beta * f(x, t, a))`` for a reward predictor ``f``.

    ``t_ref`` (if given) replaces the query time, giving a time-independent policy.
    """

    def __init__(self, reward_model, n_actions: int, beta: float = 1.0, t_ref=None):
        if not np.isfinite(beta):
            raise ConfigError("beta must be finite")
        self.reward_model = reward_model
        self.n_actions = int(n_actions)
        self.beta = float(beta)
        self.t_ref = None if t_ref is None else float(t_ref)

    def action_dist(self, context, timestamp=None):
        context = np.atleast_2d(np.asarray(context, dtype=float))
        n = context.shape[0]
        t = self._query_time(timestamp, n)
        return softmax(self.beta * self.reward_model.predict_matrix(context, t))


class RewardGreedyPolicy(_ReferenceTime, Policy):
    """Epsilon-greedy on a reward predictor."""

    def __init__(self, reward_model, n_actions: int, epsilon: float = 0.0, t_ref=None):
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        self.reward_model = reward_model
        self.n_actions = int(n_actions)
        self.epsilon = float(epsilon)
        self.t_ref = None if t_ref is None else float(t_ref)

    def action_dist(self, context, timestamp=None):
        context = np.atleast_2d(np.asarray(context, dtype=float))
        n = context.shape[0]
        t = self._query_time(timestamp, n)
        return epsilon_greedy(self.reward_model.predict_matrix(context, t), self.epsilon)

