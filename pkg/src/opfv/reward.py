"""Reward regressors ``f(x, t, a)``: zero, oracle, ridge-linear direct fit, and two-stage fit.

Every model exposes ``predict(x, t, a) -> (n,)`` and
``predict_matrix(x, t) -> (n, n_actions)``. Fitted models follow the
scikit-learn estimator protocol (``fit`` / ``predict`` / ``get_params``), with
``fit`` taking a :class:`~opfv.dataset.LoggedDataset`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator

from ._rng import stream
from ._validation import check_scalar
from .dataset import LoggedDataset
from .exceptions import ConfigError, NumericError
from .timefeat import TimeFeatureFn, feature_from_spec, feature_of

PINV_RCOND = 1e-10


# --------------------------------------------------------------------------
# ridge solver
# --------------------------------------------------------------------------


def ridge_solve(X: np.ndarray, y: np.ndarray, reg: float, fit_intercept: bool = True, fallback: bool = True):
    """Minimize ``||y - X w - b||^2 + reg ||w||^2`` with an unpenalized intercept ``b``.

    Cholesky on the (centered) normal equations; falls back to a
    pseudo-inverse (singular values below ``1e-10`` relative cut) when the
    system is not positive definite.

    Returns
    -------
    (w, b, gram, rhs): the solution and the centered system it solves.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if fit_intercept:
        x_mean, y_mean = X.mean(axis=0), y.mean()
        Xc, yc = X - x_mean, y - y_mean
    else:
        x_mean, y_mean = np.zeros(X.shape[1]), 0.0
        Xc, yc = X, y
    gram = Xc.T @ Xc + reg * np.eye(X.shape[1])
    rhs = Xc.T @ yc
    try:
        w = linalg.cho_solve(linalg.cho_factor(gram, check_finite=False), rhs, check_finite=False)
        if not np.all(np.isfinite(w)):
            raise linalg.LinAlgError("non-finite Cholesky solution")
    except linalg.LinAlgError:
        if not fallback:
            raise NumericError("ridge normal equations are singular")
        w = np.linalg.pinv(gram, rcond=PINV_RCOND, hermitian=True) @ rhs
    # one step of iterative refinement
    w = w + np.linalg.lstsq(gram, rhs - gram @ w, rcond=PINV_RCOND)[0]
    if not np.all(np.isfinite(w)):
        raise NumericError("ridge solution is not finite")
    b = float(y_mean - x_mean @ w)
    return w, b, gram, rhs


# --------------------------------------------------------------------------
# feature encoder
# --------------------------------------------------------------------------


def _as_feature(spec) -> TimeFeatureFn:
    if isinstance(spec, str):
        spec = {"kind": spec}
    return feature_from_spec(spec)


class LinearEncoder:
    """Blocks of a linear design over ``(x, t, a)``.

    ``x`` context, ``a`` one-hot action, ``t:<phi>`` one-hot time feature,
    ``ta:<phi>`` one-hot (time feature, action), ``xa`` context times one-hot action.
    """

    def __init__(self, context_dim: int, n_actions: int, time_features: Sequence[TimeFeatureFn] = (),
                 context: bool = True, action: bool = True, time_action: bool = True, context_action: bool = False):
        self.context_dim = int(context_dim)
        self.n_actions = int(n_actions)
        self.blocks = []
        if context:
            self.blocks.append(("x", None, self.context_dim))
        if action:
            self.blocks.append(("a", None, self.n_actions))
        for phi in time_features:
            self.blocks.append(("t", phi, phi.cardinality))
            if time_action:
                self.blocks.append(("ta", phi, phi.cardinality * self.n_actions))
        if context_action:
            self.blocks.append(("xa", None, self.context_dim * self.n_actions))
        self.n_features = sum(b[2] for b in self.blocks)

    def transform(self, x, t, a) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        a = np.asarray(a, dtype=np.int64).ravel()
        rows = np.arange(n)
        out = np.zeros((n, self.n_features))
        col = 0
        for kind, phi, width in self.blocks:
            if kind == "x":
                out[:, col : col + width] = x
            elif kind == "a":
                out[rows, col + a] = 1.0
            elif kind == "t":
                out[rows, col + feature_of(phi, t)] = 1.0
            elif kind == "ta":
                out[rows, col + feature_of(phi, t) * self.n_actions + a] = 1.0
            elif kind == "xa":
                out[rows[:, None], col + a[:, None] * self.context_dim + np.arange(self.context_dim)] = x
            col += width
        return out

    def predict_matrix(self, w: np.ndarray, b: float, x, t) -> np.ndarray:
        """``X(x, t, a) @ w + b`` for every action without materializing the design."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, A = x.shape[0], self.n_actions
        out = np.full((n, A), float(b))
        col = 0
        for kind, phi, width in self.blocks:
            block = w[col : col + width]
            if kind == "x":
                out += (x @ block)[:, None]
            elif kind == "a":
                out += block[None, :]
            elif kind == "t":
                out += block[feature_of(phi, t)][:, None]
            elif kind == "ta":
                out += block.reshape(-1, A)[feature_of(phi, t)]
            elif kind == "xa":
                out += x @ block.reshape(A, self.context_dim).T
            col += width
        return out


def _broadcast_t(t, n):
    t = np.asarray(t, dtype=float)
    return np.full(n, float(t)) if t.ndim == 0 else t.ravel()


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


class RewardModel(BaseEstimator):
    """Base class for reward predictors."""

    def predict_matrix(self, x, t) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def predict(self, x, t, a) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        q = self.predict_matrix(x, _broadcast_t(t, x.shape[0]))
        return q[np.arange(q.shape[0]), np.asarray(a, dtype=np.int64).ravel()]

    def fit(self, dataset: LoggedDataset, y=None):
        return self


class ZeroRewardModel(RewardModel):
    def __init__(self, n_actions: int = 10):
        self.n_actions = n_actions

    def predict_matrix(self, x, t):
        return np.zeros((np.atleast_2d(x).shape[0], self.n_actions))


class OracleRewardModel(RewardModel):
    """Returns the environment's expected reward exactly."""

    def __init__(self, env=None):
        self.env = env

    def predict_matrix(self, x, t):
        return self.env.q_matrix(x, t)


class CallableRewardModel(RewardModel):
    """Wraps ``func(x, t) -> (n, n_actions)``."""

    def __init__(self, func=None):
        self.func = func

    def predict_matrix(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.func(x, _broadcast_t(t, x.shape[0])), dtype=float)


class DirectRewardModel(RewardModel):
    """Ridge regression of ``r`` on ``[x, onehot(a), onehot(phi(t)), onehot(phi(t) x a)]``.

    Parameters
    ----------
    time_features: sequence of feature specs
        Calendar kinds (``"day_of_week"``), config dicts or
        :class:`TimeFeatureFn`. An empty sequence gives a time-agnostic model.
    ridge: float
        L2 penalty on all coefficients except the intercept.
    time_action: bool
        Include time-feature by action interactions.
    context_action: bool
        Include context by action interactions.
    """

    def __init__(self, time_features=("day_of_week",), ridge: float = 1.0, time_action: bool = True,
                 context_action: bool = False, fallback: bool = True):
        self.time_features = time_features
        self.ridge = ridge
        self.time_action = time_action
        self.context_action = context_action
        self.fallback = fallback

    def _encoder(self, dataset):
        return LinearEncoder(
            dataset.context_dim,
            dataset.n_actions,
            [_as_feature(f) for f in self.time_features],
            time_action=self.time_action,
            context_action=self.context_action,
        )

    def fit(self, dataset: LoggedDataset, y=None, target=None):
        check_scalar(float(self.ridge), "ridge", low=0.0)
        self.encoder_ = self._encoder(dataset)
        X = self.encoder_.transform(dataset.context, dataset.timestamp, dataset.action)
        target = dataset.reward if target is None else np.asarray(target, dtype=float)
        self.coef_, self.intercept_, self._gram, self._rhs = ridge_solve(X, target, float(self.ridge), fallback=self.fallback)
        self.n_actions_ = dataset.n_actions
        return self

    def normal_equation_residual(self) -> float:
        """``max |(X'X + reg I) w - X'y|`` on the centered design used for fitting."""
        return float(np.max(np.abs(self._gram @ self.coef_ - self._rhs)))

    def predict_matrix(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.encoder_.predict_matrix(self.coef_, self.intercept_, x, _broadcast_t(t, x.shape[0]))


# --------------------------------------------------------------------------
# two-stage regression
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PairDataset:
    """Record pairs sharing action, time-feature cluster and context cell.

    ``first`` and ``second`` index into the source dataset; ``bucket`` is the
    shared key (action, feature index, context cell) encoded as a row of ints.
    """

    first: np.ndarray
    second: np.ndarray
    bucket: np.ndarray
    t_first: np.ndarray
    t_second: np.ndarray
    r_first: np.ndarray
    r_second: np.ndarray

    def __len__(self):
        return int(self.first.shape[0])

    @property
    def label(self) -> np.ndarray:
        return self.r_first - self.r_second


def context_cells(context: np.ndarray, bins="sign", reference: Optional[np.ndarray] = None) -> np.ndarray:
    """Integer cell id per row: per-dimension sign binning, quantile binning, or one cell.

    ``bins`` is ``"sign"``, ``"none"`` or an int number of per-dimension
    quantile bins (edges taken from ``reference``, default ``context``).
    """
    context = np.atleast_2d(context)
    n, d = context.shape
    if bins == "none":
        return np.zeros(n, dtype=np.int64)
    if bins == "sign":
        codes, base = (context > 0).astype(np.int64), 2
    else:
        base = int(bins)
        if base < 1:
            raise ConfigError("context bins must be >= 1")
        ref = context if reference is None else np.atleast_2d(reference)
        qs = np.quantile(ref, np.linspace(0, 1, base + 1)[1:-1], axis=0)
        codes = np.stack([np.searchsorted(qs[:, j], context[:, j], side="right") for j in range(d)], axis=1)
    cells = np.zeros(n, dtype=np.int64)
    for j in range(d):
        cells = cells * base + codes[:, j]
    return cells


def build_pairwise_dataset(dataset: LoggedDataset, phi: TimeFeatureFn, context_bins="sign",
                           max_pairs: Optional[int] = 100_000, seed: int = 0) -> PairDataset:
    """All pairs ``(i, j)``, ``i < j``, with equal action, equal ``phi`` cluster and equal context cell.

    If there are more than ``max_pairs`` pairs a uniform subset without
    replacement is kept (order preserved).
    """
    cells = context_cells(dataset.context, context_bins)
    key = np.stack([dataset.action, feature_of(phi, dataset.timestamp), cells], axis=1)
    _, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    bounds = np.flatnonzero(np.diff(inverse[order])) + 1
    first, second = [], []
    for group in np.split(order, bounds):
        if group.size < 2:
            continue
        i, j = np.triu_indices(group.size, k=1)
        first.append(group[i])
        second.append(group[j])
    if first:
        first, second = np.concatenate(first), np.concatenate(second)
    else:
        first = second = np.zeros(0, dtype=np.int64)
    if max_pairs is not None and first.size > max_pairs:
        keep = np.sort(stream(seed, "pair-subsample").choice(first.size, size=int(max_pairs), replace=False))
        first, second = first[keep], second[keep]
    return PairDataset(
        first, second, key[first],
        dataset.timestamp[first], dataset.timestamp[second],
        dataset.reward[first], dataset.reward[second],
    )


class TwoStageRewardModel(RewardModel):
    """``f = g_hat + h_hat``: residual effect from pairwise differences, then the time-feature effect.

    Stage 1 fits ``h_hat`` (linear in one-hot ``phi_fine`` and ``phi_fine x a``)
    so that ``h_hat(t_j) - h_hat(t_k)`` matches ``r_j - r_k`` over pairs that
    share action, ``phi`` cluster and context cell. Stage 2 fits ``g_hat`` on
    ``r - h_hat`` with a :class:`DirectRewardModel` over ``phi``. ``h_hat`` is
    0 beyond the logging horizon, where it is not identified.
    """

    def __init__(self, phi={"kind": "n_equal_seasons", "params": {"k": 8}}, phi_fine="day_of_week",
                 ridge: float = 1.0, context_bins="sign", max_pairs: Optional[int] = 100_000,
                 context_action: bool = False, seed: int = 0):
        self.phi = phi
        self.phi_fine = phi_fine
        self.ridge = ridge
        self.context_bins = context_bins
        self.max_pairs = max_pairs
        self.context_action = context_action
        self.seed = seed

    def fit(self, dataset: LoggedDataset, y=None):
        phi = _as_feature(self.phi)
        fine = _as_feature(self.phi_fine)
        self.horizon_ = dataset.horizon
        self.pairs_ = build_pairwise_dataset(dataset, phi, self.context_bins, self.max_pairs, self.seed)
        self.h_encoder_ = LinearEncoder(dataset.context_dim, dataset.n_actions, [fine], context=False, action=False)
        if len(self.pairs_) == 0:
            warnings.warn("no record pairs share action, time feature and context cell; using h_hat = 0",
                          RuntimeWarning, stacklevel=2)
            self.h_coef_ = np.zeros(self.h_encoder_.n_features)
        else:
            p = self.pairs_
            a = dataset.action[p.first]
            diff = self.h_encoder_.transform(dataset.context[p.first], p.t_first, a) - self.h_encoder_.transform(
                dataset.context[p.second], p.t_second, a)
            self.h_coef_, _, _, _ = ridge_solve(diff, p.label, float(self.ridge), fit_intercept=False)
        residual = dataset.reward - self.predict_h(dataset.context, dataset.timestamp, dataset.action)
        self.g_model_ = DirectRewardModel(time_features=(phi,), ridge=self.ridge, context_action=self.context_action)
        self.g_model_.fit(dataset, target=residual)
        return self

    def predict_h_matrix(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = _broadcast_t(t, x.shape[0])
        out = self.h_encoder_.predict_matrix(self.h_coef_, 0.0, x, t)
        out[t > self.horizon_] = 0.0
        return out

    def predict_g_matrix(self, x, t):
        return self.g_model_.predict_matrix(x, t)

    def predict_h(self, x, t, a):
        q = self.predict_h_matrix(x, t)
        return q[np.arange(q.shape[0]), np.asarray(a, dtype=np.int64).ravel()]

    def predict_g(self, x, t, a):
        q = self.predict_g_matrix(x, t)
        return q[np.arange(q.shape[0]), np.asarray(a, dtype=np.int64).ravel()]

    def predict_matrix(self, x, t):
        return self.predict_g_matrix(x, t) + self.predict_h_matrix(x, t)


def reward_model_from_config(config, env=None, n_actions: Optional[int] = None) -> RewardModel:
    """Build an unfitted model from ``{"kind": ..., <hyperparameters>}``."""
    if isinstance(config, RewardModel):
        return config
    config = dict(config or {"kind": "direct"})
    kind = config.pop("kind", "direct")
    if kind == "zero":
        return ZeroRewardModel(n_actions=n_actions or config.get("n_actions", 10))
    if kind == "oracle":
        if env is None:
            raise ConfigError("oracle reward model needs an environment")
        return OracleRewardModel(env)
    if kind == "direct":
        return DirectRewardModel(**config)
    if kind == "two_stage":
        return TwoStageRewardModel(**config)
    raise ConfigError(f"unknown reward model kind {kind!r}")
