"""Synthetic non-stationary contextual bandit with a known expected reward.

The expected reward mixes a seasonal effect and a within-season residual:
``q(x, t, a) = lam * g(x, season(t), a) + (1 - lam) * h(x, t, a)``, where
``season`` splits each year into eight parts and ``h`` moves with the day
of the week. Logged data come from Year 1; target times sit in Year 2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from ._policybase import Policy, epsilon_greedy, softmax
from ._rng import stream
from ._validation import check_scalar
from .dataset import LoggedDataset
from .exceptions import ConfigError
from .timefeat import (
    DEFAULT_DOMAIN_END,
    YEAR_SECONDS,
    TimeDistribution,
    calendar_feature,
    feature_of,
)

# threshold features: (first dim, last dim, comparison, threshold), 1-based inclusive
_S_G1 = ((1, 4, "<", 1.5), (6, 9, "<", -0.5), (4, 5, ">", 3.0), (7, 10, ">", 3.0))
_S_G2 = ((1, 4, "<", 4.0), (6, 9, ">", 3.0), (3, 10, "<", -2.5))
_S_H1 = ((1, 6, "<", 2.5), (8, 9, "<", -0.5), (3, 5, ">", 2.0))
_S_H2 = ((1, 4, "<", 3.0), (3, 9, ">", 2.5), (2, 7, "<", 1.5), (7, 10, ">", -1.5))
_S_H3 = ((1, 4, "<", 4.0), (3, 9, ">", 3.5), (3, 5, ">", 1.5), (6, 10, "<", 2.5))

# context drift is normalized over [Jan 1 Year 1, Jan 1 Year 3]
_DRIFT_SPAN = 2 * YEAR_SECONDS


def threshold_features(x: np.ndarray, table) -> np.ndarray:
    """Indicator features ``1{sum_{d=lo..hi} x_d (<|>) c}``; dims beyond ``d_x`` are dropped."""
    x = np.atleast_2d(x)
    d = x.shape[1]
    out = np.empty((x.shape[0], len(table)))
    for j, (lo, hi, op, c) in enumerate(table):
        s = x[:, lo - 1 : min(hi, d)].sum(axis=1)
        out[:, j] = s < c if op == "<" else s > c
    return out


_OVERRIDE_KEYS = {
    "lambda": "lam",
    "lam": "lam",
    "alpha": "alpha",
    "beta": "beta",
    "epsilon": "epsilon",
    "sigma": "sigma",
    "n_actions": "n_actions",
    "context_dim": "context_dim",
    "discrete_contexts": "discrete_contexts",
    "horizon": "horizon",
}


@dataclass(frozen=True, eq=False)
class SyntheticEnv:
    """Ground-truth environment.

    Parameters
    ----------
    seed: int
        Seeds the coefficient draw (not the logged data).
    context_dim, n_actions: int
    lam: float
        Weight of the seasonal effect ``g``; ``1 - lam`` goes to ``h``.
    alpha: float or None
        ``None`` keeps contexts stationary ``N(0, I)``. A value in ``[0, 1]``
        draws ``x | t`` from ``alpha * N(gamma[season_x(t)] 1, I) + (1 - alpha) * N(kappa s(t) 1, I)``
        with ``s(t) = t / (2 years)``.
    beta: float
        Inverse temperature of the softmax logging policy.
    epsilon: float
        Exploration rate of the epsilon-greedy evaluation policy.
    sigma: float
        Reward noise standard deviation.
    discrete_contexts: int or None
        If set, contexts are drawn uniformly from this many fixed points.
    horizon: float
        End ``T`` of the logging window (seconds).
    """

    seed: int = 0
    context_dim: int = 10
    n_actions: int = 10
    lam: float = 0.5
    alpha: Optional[float] = None
    beta: float = 0.1
    epsilon: float = 0.2
    sigma: float = 1.0
    discrete_contexts: Optional[int] = None
    horizon: float = float(YEAR_SECONDS)
    coef: dict = field(init=False, repr=False)

    def __post_init__(self):
        check_scalar(int(self.seed), "seed", int, low=0)
        check_scalar(self.context_dim, "context_dim", int, low=1)
        check_scalar(self.n_actions, "n_actions", int, low=2)
        check_scalar(self.lam, "lambda", low=0.0, high=1.0)
        if self.alpha is not None:
            check_scalar(self.alpha, "alpha", low=0.0, high=1.0)
            if self.discrete_contexts is not None:
                raise ConfigError("discrete_contexts cannot be combined with context drift (alpha)")
        check_scalar(self.beta, "beta")
        check_scalar(self.epsilon, "epsilon", low=0.0, high=1.0)
        check_scalar(self.sigma, "sigma", low=0.0)
        if self.discrete_contexts is not None:
            check_scalar(self.discrete_contexts, "discrete_contexts", int, low=1)
        check_scalar(float(self.horizon), "horizon", low=0.0, high=float(DEFAULT_DOMAIN_END), low_open=True)
        object.__setattr__(self, "coef", self._draw_coefficients())

    # ---- construction ---------------------------------------------------

    @property
    def phi_true(self):
        return calendar_feature("n_equal_seasons", k=8)

    @property
    def phi_f(self):
        return calendar_feature("day_of_week")

    @property
    def phi_x(self):
        return calendar_feature("n_equal_seasons", k=8)

    @property
    def time_distribution(self) -> TimeDistribution:
        return TimeDistribution.uniform(0.0, self.horizon)

    def _draw_coefficients(self) -> dict:
        rng = stream(self.seed, "env-coefficients")
        A, C, Cf = self.n_actions, 8, 7
        g = lambda *s: rng.uniform(-3.0, 3.0, size=s)  # noqa: E731
        h = lambda *s: rng.uniform(-1.0, 1.0, size=s)  # noqa: E731
        coef = {
            "nu_x": g(len(_S_G1)),
            "nu_phi": g(C),
            "M_phi_a": g(C, A),
            "M_x_phi_a": g(len(_S_G2), C, A),
            "xi_x": h(len(_S_H1)),
            "xi_phi": h(Cf),
            "xi_a": h(A),
            "M_phif_a": h(Cf, A),
            "M_x_a": h(len(_S_H2), A),
            "M_x_phif_a": h(len(_S_H3), Cf, A),
        }
        drift = stream(self.seed, "env-context-drift")
        coef["gamma"] = drift.uniform(-3.0, 3.0, size=8)
        coef["kappa"] = float(drift.uniform(-1.0, 1.0))
        if self.discrete_contexts is not None:
            pts = stream(self.seed, "env-context-points").standard_normal((self.discrete_contexts, self.context_dim))
            coef["context_points"] = pts
        for v in coef.values():
            if isinstance(v, np.ndarray):
                v.setflags(write=False)
        return coef

    def to_config(self) -> dict:
        """JSON-serializable ``{"seed", "overrides"}`` for exact replay."""
        overrides = {}
        for f in fields(self):
            if f.name in ("seed", "coef"):
                continue
            overrides["lambda" if f.name == "lam" else f.name] = getattr(self, f.name)
        return {"seed": int(self.seed), "overrides": overrides}

    def to_json(self) -> str:
        return json.dumps(self.to_config(), sort_keys=True)

    # ---- reward ---------------------------------------------------------

    def _prep(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.context_dim:
            raise ConfigError(f"context must have {self.context_dim} columns, got {x.shape[1]}")
        t = np.asarray(t, dtype=float)
        t = np.full(x.shape[0], float(t)) if t.ndim == 0 else t.ravel()
        if t.shape[0] != x.shape[0]:
            raise ConfigError("context and timestamp lengths differ")
        return x, t

    def g_matrix(self, x, t) -> np.ndarray:
        """Seasonal effect ``g(x, season(t), a)`` for every action, shape ``(n, A)``."""
        x, t = self._prep(x, t)
        c = self.coef
        season = feature_of(self.phi_true, t)
        out = (threshold_features(x, _S_G1) @ c["nu_x"] + c["nu_phi"][season])[:, None]
        out = out + c["M_phi_a"][season]
        out = out + np.einsum("nk,kna->na", threshold_features(x, _S_G2), c["M_x_phi_a"][:, season, :])
        return out

    def h_matrix(self, x, t) -> np.ndarray:
        """Residual effect ``h(x, t, a)`` for every action, shape ``(n, A)``."""
        x, t = self._prep(x, t)
        c = self.coef
        dow = feature_of(self.phi_f, t)
        out = (threshold_features(x, _S_H1) @ c["xi_x"] + c["xi_phi"][dow])[:, None]
        out = out + c["xi_a"][None, :] + c["M_phif_a"][dow]
        out = out + threshold_features(x, _S_H2) @ c["M_x_a"]
        out = out + np.einsum("nk,kna->na", threshold_features(x, _S_H3), c["M_x_phif_a"][:, dow, :])
        return out

    def q_matrix(self, x, t) -> np.ndarray:
        return self.lam * self.g_matrix(x, t) + (1.0 - self.lam) * self.h_matrix(x, t)

    def expected_reward(self, x, t, a) -> np.ndarray:
        q = self.q_matrix(x, t)
        return q[np.arange(q.shape[0]), np.asarray(a, dtype=np.int64).ravel()]

    # ---- policies -------------------------------------------------------

    def logging_policy(self, x, t) -> np.ndarray:
        return softmax(self.beta * self.q_matrix(x, t))

    def evaluation_policy(self, x, t, epsilon: Optional[float] = None) -> np.ndarray:
        eps = self.epsilon if epsilon is None else check_scalar(epsilon, "epsilon", low=0.0, high=1.0)
        return epsilon_greedy(self.q_matrix(x, t), eps)

    def logging(self) -> "EnvLoggingPolicy":
        return EnvLoggingPolicy(self)

    def evaluation(self, epsilon: Optional[float] = None) -> "EnvEvaluationPolicy":
        return EnvEvaluationPolicy(self, self.epsilon if epsilon is None else epsilon)

    # ---- sampling -------------------------------------------------------

    def sample_context(self, t, rng: np.random.Generator) -> np.ndarray:
        """Draw one context per timestamp in ``t`` from ``p(x | t)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n, d = t.shape[0], self.context_dim
        if self.discrete_contexts is not None:
            return self.coef["context_points"][rng.integers(0, self.discrete_contexts, size=n)]
        noise = rng.standard_normal((n, d))
        if self.alpha is None:
            return noise
        use_season = rng.random(n) < self.alpha
        mu_season = self.coef["gamma"][feature_of(self.phi_x, t)]
        mu_trend = self.coef["kappa"] * t / _DRIFT_SPAN
        return noise + np.where(use_season, mu_season, mu_trend)[:, None]

    def sample_timestamps(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # integer seconds, closed interval [0, T]
        return rng.integers(0, int(self.horizon), size=n, endpoint=True).astype(float)

    def sample_logged_data(self, n: int, seed: int) -> LoggedDataset:
        """``n`` i.i.d. records from Year 1 under the softmax logging policy."""
        check_scalar(n, "n", int, low=1)
        t = self.sample_timestamps(n, stream(seed, "data-time"))
        x = self.sample_context(t, stream(seed, "data-context"))
        q = self.q_matrix(x, t)
        pi0 = softmax(self.beta * q)
        u = stream(seed, "data-action").random(n)
        a = (pi0.cumsum(axis=1) < u[:, None]).sum(axis=1)
        a = np.minimum(a, self.n_actions - 1)
        rows = np.arange(n)
        r = q[rows, a] + self.sigma * stream(seed, "data-reward").standard_normal(n)
        meta = {"env": self.to_config(), "data_seed": int(seed)}
        return LoggedDataset(x, t, a, r, pi0[rows, a], self.n_actions, self.horizon, meta)

    def true_policy_value(self, policy, t_prime: float, n_mc: int = 100_000, seed: int = 0):
        """Monte Carlo ``V_{t'}(pi) = E_{p(x|t') pi(a|x,t')}[q(x, t', a)]``.

        Actions are summed out exactly; returns ``(mean, standard_error)``.
        """
        check_scalar(n_mc, "n_mc", int, low=1)
        t = np.full(n_mc, float(t_prime))
        x = self.sample_context(t, stream(seed, "true-value-context"))
        vals = (policy.action_dist(x, t) * self.q_matrix(x, t)).sum(axis=1)
        se = float(vals.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else float("nan")
        return float(vals.mean()), se


class EnvLoggingPolicy(Policy):
    def __init__(self, env: SyntheticEnv):
        self.env = env
        self.n_actions = env.n_actions

    def action_dist(self, context, timestamp):
        return self.env.logging_policy(context, timestamp)


class EnvEvaluationPolicy(Policy):
    def __init__(self, env: SyntheticEnv, epsilon: float):
        self.env = env
        self.epsilon = float(epsilon)
        self.n_actions = env.n_actions

    def action_dist(self, context, timestamp):
        return self.env.evaluation_policy(context, timestamp, self.epsilon)


def make_env(seed: int = 0, overrides: Optional[dict] = None) -> SyntheticEnv:
    """Build a :class:`SyntheticEnv`; ``overrides`` uses config names (``lambda``, ``beta``, ...)."""
    kwargs = {}
    for key, value in (overrides or {}).items():
        if key not in _OVERRIDE_KEYS:
            raise ConfigError(f"unknown env override {key!r}; expected one of {sorted(_OVERRIDE_KEYS)}")
        kwargs[_OVERRIDE_KEYS[key]] = value
    for key in ("lam", "beta", "epsilon", "sigma", "horizon"):
        if key in kwargs and isinstance(kwargs[key], int) and not isinstance(kwargs[key], bool):
            kwargs[key] = float(kwargs[key])
    if isinstance(kwargs.get("alpha"), int) and not isinstance(kwargs["alpha"], bool):
        kwargs["alpha"] = float(kwargs["alpha"])
    return SyntheticEnv(seed=int(seed), **kwargs)


def env_from_config(config: dict) -> SyntheticEnv:
    return make_env(config.get("seed", 0), config.get("overrides"))


__all__ = [
    "SyntheticEnv",
    "EnvLoggingPolicy",
    "EnvEvaluationPolicy",
    "make_env",
    "env_from_config",
    "threshold_features",
]
