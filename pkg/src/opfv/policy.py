"""Parametric softmax policies, policy-gradient estimators and the gradient-ascent trainer.

Every gradient estimator here has the form
``(1/n) sum_i sum_a C[i, a] * grad log pi(a | x_i)`` for a coefficient
matrix ``C`` held fixed while differentiating; each ``*_coefficients``
function builds ``C`` and :meth:`SoftmaxPolicy.backprop` turns it into a
gradient. The matching scalar objectives are exposed for finite-difference
checks.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from ._policybase import (
    CallablePolicy,
    FixedActionPolicy,
    FrozenTimePolicy,
    Policy,
    RewardGreedyPolicy,
    RewardSoftmaxPolicy,
    UniformPolicy,
    epsilon_greedy,
    softmax,
)
from ._rng import stream
from ._validation import check_scalar
from .dataset import LoggedDataset
from .estimators import forecast_weights, period_offset, slice_index, time_weight
from .exceptions import ConfigError, NumericError
from .timefeat import TimeDistribution, TimeFeatureFn

logger = logging.getLogger(__name__)

__all__ = [
    "Policy",
    "UniformPolicy",
    "FixedActionPolicy",
    "FrozenTimePolicy",
    "CallablePolicy",
    "RewardSoftmaxPolicy",
    "RewardGreedyPolicy",
    "SoftmaxPolicy",
    "opfv_pg",
    "ips_pg",
    "dr_pg",
    "prognosticator_pg",
    "iml_gradient",
    "combined_gradient",
    "reg_based_policy",
    "TrainConfig",
    "train",
    "PolicyGradientLearner",
]


class SoftmaxPolicy(Policy):
    """Time-independent softmax policy ``pi(a | x) ∝ exp(logits(x))``.

    With ``hidden=0`` the logits are ``[x, 1] @ W``. With ``hidden=H`` they
    are ``[tanh([x, 1] @ W1), 1] @ W2``. Parameters live in one flat vector
    ``params``.
    """

    def __init__(self, context_dim: int, n_actions: int, hidden: int = 0, params=None):
        self.context_dim = int(context_dim)
        self.n_actions = int(n_actions)
        self.hidden = int(hidden)
        if self.hidden < 0:
            raise ConfigError("hidden width must be >= 0")
        self.params = np.zeros(self.n_params) if params is None else np.asarray(params, dtype=float).copy()
        if self.params.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        d, A, H = self.context_dim + 1, self.n_actions, self.hidden
        return d * A if H == 0 else d * H + (H + 1) * A

    @classmethod
    def initialize(cls, context_dim: int, n_actions: int, hidden: int = 0, seed: int = 0, scale: float = 0.01):
        pol = cls(context_dim, n_actions, hidden)
        pol.params = stream(seed, "policy-init").normal(0.0, scale, size=pol.n_params)
        return pol

    def with_params(self, params) -> "SoftmaxPolicy":
        return SoftmaxPolicy(self.context_dim, self.n_actions, self.hidden, params)

    def _split(self, params):
        d, A, H = self.context_dim + 1, self.n_actions, self.hidden
        if H == 0:
            return (params.reshape(d, A),)
        return params[: d * H].reshape(d, H), params[d * H :].reshape(H + 1, A)

    @staticmethod
    def _augment(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.hstack([x, np.ones((x.shape[0], 1))])

    def _forward(self, x, params=None):
        params = self.params if params is None else params
        xb = self._augment(x)
        parts = self._split(params)
        if self.hidden == 0:
            return xb @ parts[0], (xb,)
        hid = np.tanh(xb @ parts[0])
        hb = np.hstack([hid, np.ones((hid.shape[0], 1))])
        return hb @ parts[1], (xb, hid, hb)

    def logits(self, x) -> np.ndarray:
        return self._forward(x)[0]

    def action_dist(self, context, timestamp=None) -> np.ndarray:
        return softmax(self.logits(context))

    def backprop(self, x, coef: np.ndarray) -> np.ndarray:
        """``(1/n) sum_i sum_a coef[i, a] * grad log pi(a | x_i)`` as a flat vector."""
        z, cache = self._forward(x)
        pi = softmax(z)
        n = pi.shape[0]
        g_logits = coef - coef.sum(axis=1, keepdims=True) * pi
        if self.hidden == 0:
            return (cache[0].T @ g_logits).ravel() / n
        xb, hid, hb = cache
        W2 = self._split(self.params)[1]
        g_w2 = hb.T @ g_logits
        g_hid = (g_logits @ W2[:-1].T) * (1.0 - hid**2)
        g_w1 = xb.T @ g_hid
        return np.concatenate([g_w1.ravel(), g_w2.ravel()]) / n

    def score(self, x, a) -> np.ndarray:
        """Per-record ``grad log pi(a_i | x_i)``, shape ``(n, n_params)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.asarray(a, dtype=np.int64).ravel()
        out = np.empty((x.shape[0], self.n_params))
        for i in range(x.shape[0]):
            c = np.zeros((1, self.n_actions))
            c[0, a[i]] = 1.0
            out[i] = self.backprop(x[i : i + 1], c)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "softmax",
            "encoder": {"context": "identity", "bias": True},
            "context_dim": self.context_dim,
            "n_actions": self.n_actions,
            "hidden": self.hidden,
            "params": self.params.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SoftmaxPolicy":
        return cls(d["context_dim"], d["n_actions"], d.get("hidden", 0), d["params"])


# --------------------------------------------------------------------------
# gradient coefficients and scalar objectives
# --------------------------------------------------------------------------


def _logged(mat, dataset):
    return mat[np.arange(dataset.n_rounds), dataset.action]


def _onehot_at(dataset, values):
    out = np.zeros((dataset.n_rounds, dataset.n_actions))
    out[np.arange(dataset.n_rounds), dataset.action] = values
    return out


def ips_coefficients(dataset: LoggedDataset, policy: SoftmaxPolicy) -> np.ndarray:
    pi = policy.action_dist(dataset.context)
    return _onehot_at(dataset, _logged(pi, dataset) / dataset.pscore * dataset.reward)


def dr_coefficients(dataset: LoggedDataset, policy: SoftmaxPolicy, reward_model) -> np.ndarray:
    pi = policy.action_dist(dataset.context)
    q_hat = reward_model.predict_matrix(dataset.context, dataset.timestamp)
    w = _logged(pi, dataset) / dataset.pscore
    return _onehot_at(dataset, w * (dataset.reward - _logged(q_hat, dataset))) + pi * q_hat


def opfv_coefficients(dataset: LoggedDataset, policy: SoftmaxPolicy, t_prime: float, phi: TimeFeatureFn,
                      reward_model, pt: Optional[TimeDistribution] = None) -> np.ndarray:
    tw = time_weight(dataset, t_prime, phi, pt)[0]
    pi = policy.action_dist(dataset.context)
    q_logged = _logged(reward_model.predict_matrix(dataset.context, dataset.timestamp), dataset)
    q_target = reward_model.predict_matrix(dataset.context, np.full(dataset.n_rounds, float(t_prime)))
    w = _logged(pi, dataset) / dataset.pscore
    return _onehot_at(dataset, tw * w * (dataset.reward - q_logged)) + pi * q_target


def iml_coefficients(dataset: LoggedDataset) -> np.ndarray:
    return _onehot_at(dataset, -1.0)


def prognosticator_coefficients(dataset: LoggedDataset, policy: SoftmaxPolicy, K: int = 8, delta: int = 1,
                                d_prime: int = 3) -> np.ndarray:
    c = forecast_weights(K, delta, d_prime)
    idx = slice_index(dataset, K)
    counts = np.bincount(idx, minlength=K)
    if np.any(counts == 0):
        raise ConfigError(f"prognosticator slice {int(np.argmin(counts)) + 1} of {K} holds no records")
    # sum_k c_k * mean over slice k  ==  (1/n) sum_i (n c_k / n_k) * term_i
    scale = dataset.n_rounds * c[idx] / counts[idx]
    return ips_coefficients(dataset, policy) * scale[:, None]


def ips_pg(dataset: LoggedDataset, policy: SoftmaxPolicy) -> np.ndarray:
    """``(1/n) sum_i pi(a_i|x_i) / pi_0(a_i|x_i,t_i) * r_i * score(x_i, a_i)``."""
    return policy.backprop(dataset.context, ips_coefficients(dataset, policy))


def dr_pg(dataset: LoggedDataset, policy: SoftmaxPolicy, reward_model) -> np.ndarray:
    """Doubly robust gradient with the reward model at the logged timestamps."""
    return policy.backprop(dataset.context, dr_coefficients(dataset, policy, reward_model))


def opfv_pg(dataset: LoggedDataset, policy: SoftmaxPolicy, t_prime: float, phi: TimeFeatureFn, reward_model,
            pt: Optional[TimeDistribution] = None) -> np.ndarray:
    """Gradient of the OPFV estimate of ``V_{t'}(pi)``.

    The correction term uses ``f(x_i, t_i, a_i)`` at the logged time while
    the model term uses ``f(x_i, t', a)`` at the target time. Assumes the
    logging policy gives every action positive probability.
    """
    return policy.backprop(dataset.context, opfv_coefficients(dataset, policy, t_prime, phi, reward_model, pt))


def prognosticator_pg(dataset: LoggedDataset, policy: SoftmaxPolicy, K: int = 8, delta: int = 1,
                      d_prime: int = 3) -> np.ndarray:
    """``sum_k c_k * ips_pg(D_k)`` with ``c`` the forecast row of the Fourier regression."""
    return policy.backprop(dataset.context, prognosticator_coefficients(dataset, policy, K, delta, d_prime))


def iml_gradient(dataset: LoggedDataset, policy: SoftmaxPolicy) -> np.ndarray:
    """Gradient of ``-(1/n) sum_i log(pi(a_i|x_i) / pi_0(a_i|x_i,t_i))``, i.e. ``-(1/n) sum_i score(x_i, a_i)``."""
    return policy.backprop(dataset.context, iml_coefficients(dataset))


def combined_gradient(base: np.ndarray, iml: np.ndarray, rho: float) -> np.ndarray:
    """Ascent direction for ``V_hat - rho * IML``: the KL-type penalty keeps the policy near the logger."""
    check_scalar(float(rho), "rho", low=0.0)
    return base - rho * iml


# scalar counterparts (for finite-difference checks and logging)


def ips_objective(dataset, policy):
    pi = policy.action_dist(dataset.context)
    return float(np.mean(_logged(pi, dataset) / dataset.pscore * dataset.reward))


def dr_objective(dataset, policy, reward_model):
    pi = policy.action_dist(dataset.context)
    q_hat = reward_model.predict_matrix(dataset.context, dataset.timestamp)
    w = _logged(pi, dataset) / dataset.pscore
    return float(np.mean(w * (dataset.reward - _logged(q_hat, dataset)) + (pi * q_hat).sum(axis=1)))


def opfv_objective(dataset, policy, t_prime, phi, reward_model, pt=None):
    tw = time_weight(dataset, t_prime, phi, pt)[0]
    pi = policy.action_dist(dataset.context)
    q_logged = _logged(reward_model.predict_matrix(dataset.context, dataset.timestamp), dataset)
    q_target = reward_model.predict_matrix(dataset.context, np.full(dataset.n_rounds, float(t_prime)))
    w = _logged(pi, dataset) / dataset.pscore
    return float(np.mean(tw * w * (dataset.reward - q_logged) + (pi * q_target).sum(axis=1)))


def iml_objective(dataset, policy):
    pi = policy.action_dist(dataset.context)
    return float(-np.mean(np.log(_logged(pi, dataset) / dataset.pscore)))


def reg_based_policy(reward_model, n_actions: int, beta: float = 10.0, t_ref: Optional[float] = None) -> Policy:
    """``pi(a | x) ∝ exp(beta * f(x, t_ref, a))``; ``t_ref`` is usually the end of the logs."""
    return RewardSoftmaxPolicy(reward_model, n_actions, beta=beta, t_ref=t_ref)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

GRADIENTS = ("opfv", "ips", "dr", "prognosticator")


@dataclass
class TrainConfig:
    """Gradient-ascent settings.

    ``estimator`` is one of ``opfv``, ``ips``, ``dr``, ``prognosticator``;
    ``t_prime``, ``phi``, ``reward_model`` and ``pt`` feed the estimators that
    need them. ``batch_size=None`` means full batch. ``env`` (optional) is
    used only to log the true value at ``t_prime`` every ``log_every`` steps.
    """

    learning_rate: float = 1.0
    n_iter: int = 100
    estimator: str = "opfv"
    pessimism: float = 0.0
    seed: int = 0
    batch_size: Optional[int] = None
    t_prime: Optional[float] = None
    phi: Optional[TimeFeatureFn] = None
    reward_model: object = None
    pt: Optional[TimeDistribution] = None
    K: int = 8
    d_prime: int = 3
    delta: Optional[int] = None
    env: object = None
    log_every: int = 0
    n_mc: int = 10_000

    def validate(self):
        check_scalar(float(self.learning_rate), "learning_rate", low=0.0)
        check_scalar(int(self.n_iter), "n_iter", int, low=0)
        check_scalar(float(self.pessimism), "pessimism", low=0.0)
        if self.estimator not in GRADIENTS:
            raise ConfigError(f"unknown gradient estimator {self.estimator!r}; expected one of {GRADIENTS}")
        if self.estimator == "opfv" and (self.t_prime is None or self.phi is None or self.reward_model is None):
            raise ConfigError("opfv gradient needs t_prime, phi and reward_model")
        if self.estimator == "dr" and self.reward_model is None:
            raise ConfigError("dr gradient needs reward_model")
        if self.estimator == "prognosticator" and self.delta is None and self.t_prime is None:
            raise ConfigError("prognosticator gradient needs delta or t_prime")
        if self.batch_size is not None:
            check_scalar(int(self.batch_size), "batch_size", int, low=1)
        return self


def _coefficients(dataset, policy, cfg: TrainConfig):
    if cfg.estimator == "opfv":
        return opfv_coefficients(dataset, policy, cfg.t_prime, cfg.phi, cfg.reward_model, cfg.pt)
    if cfg.estimator == "ips":
        return ips_coefficients(dataset, policy)
    if cfg.estimator == "dr":
        return dr_coefficients(dataset, policy, cfg.reward_model)
    delta = cfg.delta if cfg.delta is not None else period_offset(cfg.t_prime, dataset.horizon, cfg.K)
    return prognosticator_coefficients(dataset, policy, cfg.K, delta, cfg.d_prime)


def estimate_gradient(dataset: LoggedDataset, policy: SoftmaxPolicy, cfg: TrainConfig) -> np.ndarray:
    coef = _coefficients(dataset, policy, cfg)
    if cfg.pessimism > 0:
        coef = coef - cfg.pessimism * iml_coefficients(dataset)
    return policy.backprop(dataset.context, coef)


def train(dataset: LoggedDataset, initial_policy: SoftmaxPolicy, config: TrainConfig):
    """Run ``params <- params + lr * grad_hat(params)`` and return ``(policy, log)``.

    ``log`` holds one dict per iteration with ``iteration``, ``grad_norm``
    and, when ``config.env`` is set and the step is logged, ``true_value``.
    Raises :class:`NumericError` on a non-finite gradient.
    """
    cfg = config.validate()
    policy = initial_policy.with_params(initial_policy.params)
    rng = stream(cfg.seed, "train-batches")
    log = []
    # the prognosticator slices need the full dataset, so it always runs full batch
    full_batch = cfg.batch_size is None or cfg.batch_size >= dataset.n_rounds or cfg.estimator == "prognosticator"
    for it in range(int(cfg.n_iter)):
        data = dataset if full_batch else dataset.subset(
            np.sort(rng.choice(dataset.n_rounds, size=int(cfg.batch_size), replace=False)))
        grad = estimate_gradient(data, policy, cfg)
        norm = float(np.linalg.norm(grad))
        if not np.isfinite(norm):
            raise NumericError(
                f"non-finite gradient at iteration {it} (estimator={cfg.estimator}, "
                f"max|params|={np.max(np.abs(policy.params)):.3g})"
            )
        entry = {"iteration": it, "grad_norm": norm}
        if cfg.env is not None and cfg.log_every and it % cfg.log_every == 0:
            entry["true_value"] = cfg.env.true_policy_value(policy, cfg.t_prime, cfg.n_mc, seed=0)[0]
        log.append(entry)
        logger.debug("iteration %d grad_norm %.4g", it, norm)
        policy = policy.with_params(policy.params + cfg.learning_rate * grad)
    return policy, log


class PolicyGradientLearner(BaseEstimator):
    """scikit-learn style wrapper: ``fit(dataset)`` trains, ``predict_proba(x)`` returns ``pi(. | x)``."""

    def __init__(self, estimator: str = "opfv", t_prime=None, phi=None, reward_model=None, learning_rate: float = 1.0,
                 n_iter: int = 100, pessimism: float = 0.0, hidden: int = 0, K: int = 8, d_prime: int = 3,
                 batch_size=None, seed: int = 0):
        self.estimator = estimator
        self.t_prime = t_prime
        self.phi = phi
        self.reward_model = reward_model
        self.learning_rate = learning_rate
        self.n_iter = n_iter
        self.pessimism = pessimism
        self.hidden = hidden
        self.K = K
        self.d_prime = d_prime
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, dataset: LoggedDataset, y=None):
        init = SoftmaxPolicy.initialize(dataset.context_dim, dataset.n_actions, self.hidden, self.seed)
        cfg = TrainConfig(
            learning_rate=self.learning_rate, n_iter=self.n_iter, estimator=self.estimator,
            pessimism=self.pessimism, seed=self.seed, batch_size=self.batch_size, t_prime=self.t_prime,
            phi=self.phi, reward_model=self.reward_model, K=self.K, d_prime=self.d_prime,
        )
        self.policy_, self.log_ = train(dataset, init, cfg)
        return self

    def predict_proba(self, x) -> np.ndarray:
        return self.policy_.action_dist(x)

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)
