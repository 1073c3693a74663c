"""Point estimators of a policy's value from logged bandit data.

``ips`` and ``dr_naive`` assume stationarity and query the evaluation policy at
the logged timestamps. ``opfv`` targets the value at a future time ``t_prime``:
it reweights records whose time feature matches ``phi(t_prime)`` and uses the
reward model at ``t_prime`` for the rest. ``prognosticator`` and
``prognosticator_phi`` forecast per-period estimates forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._policybase import Policy
from ._validation import check_scalar
from .dataset import LoggedDataset
from .exceptions import ConfigError, NumericError, SupportError
from .timefeat import TimeDistribution, TimeFeatureFn, feature_of, marginal_prob, product_feature

PINV_RCOND = 1e-10


@dataclass(frozen=True)
class EstimateResult:
    """An estimate with its per-record contributions and diagnostics.

    ``value`` equals ``per_sample_terms.mean()`` whenever the terms are present.
    """

    value: float
    per_sample_terms: Optional[np.ndarray] = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return 0 if self.per_sample_terms is None else int(self.per_sample_terms.shape[0])

    @property
    def se(self) -> float:
        """Sample standard error of the mean of the per-record terms."""
        if self.per_sample_terms is None or self.n < 2:
            return float("nan")
        return float(self.per_sample_terms.std(ddof=1) / np.sqrt(self.n))


def _result(terms: np.ndarray, **diagnostics) -> EstimateResult:
    terms = np.asarray(terms, dtype=float)
    if not np.all(np.isfinite(terms)):
        raise NumericError("estimator produced non-finite per-record terms")
    terms.setflags(write=False)
    return EstimateResult(float(terms.mean()), terms, diagnostics)


def _pi_at(policy: Policy, dataset: LoggedDataset, t) -> np.ndarray:
    n = dataset.n_rounds
    t = np.full(n, float(t)) if np.ndim(t) == 0 else np.asarray(t, dtype=float)
    pi = np.asarray(policy.action_dist(dataset.context, t), dtype=float)
    if pi.shape != (n, dataset.n_actions):
        raise ConfigError(f"policy returned shape {pi.shape}, expected {(n, dataset.n_actions)}")
    return pi


def _logged(pi: np.ndarray, dataset: LoggedDataset) -> np.ndarray:
    return pi[np.arange(dataset.n_rounds), dataset.action]


def _weight_stats(w: np.ndarray) -> dict:
    return {"w_min": float(w.min()), "w_max": float(w.max())}


def _default_pt(dataset: LoggedDataset, pt: Optional[TimeDistribution]) -> TimeDistribution:
    return TimeDistribution.uniform(0.0, dataset.horizon) if pt is None else pt


def time_weight(dataset: LoggedDataset, t_prime: float, phi: TimeFeatureFn,
                pt: Optional[TimeDistribution] = None):
    """``1{phi(t_i) = phi(t')} / p(phi(t'))`` per record and the probability used.

    Raises :class:`SupportError` if no logging time shares ``phi(t')``.
    """
    p = marginal_prob(phi, t_prime, _default_pt(dataset, pt))
    if p <= 0.0:
        raise SupportError(
            f"time feature {phi.id!r}: p(phi(t'))=0 at t'={t_prime}; no logging time shares the target's feature"
        )
    same = feature_of(phi, dataset.timestamp) == feature_of(phi, t_prime)
    return same / p, p, float(same.mean())


# --------------------------------------------------------------------------
# stationary baselines
# --------------------------------------------------------------------------


def ips(dataset: LoggedDataset, pi_e: Policy) -> EstimateResult:
    """``mean(pi_e(a_i | x_i, t_i) / pi_0(a_i | x_i, t_i) * r_i)``."""
    w = _logged(_pi_at(pi_e, dataset, dataset.timestamp), dataset) / dataset.pscore
    return _result(w * dataset.reward, **_weight_stats(w))


def dr_naive(dataset: LoggedDataset, pi_e: Policy, reward_model) -> EstimateResult:
    """Doubly robust estimate with everything evaluated at the logged timestamps."""
    pi = _pi_at(pi_e, dataset, dataset.timestamp)
    w = _logged(pi, dataset) / dataset.pscore
    q_hat = reward_model.predict_matrix(dataset.context, dataset.timestamp)
    q_logged = q_hat[np.arange(dataset.n_rounds), dataset.action]
    terms = w * (dataset.reward - q_logged) + (pi * q_hat).sum(axis=1)
    return _result(terms, **_weight_stats(w))


def dm(dataset: LoggedDataset, policy: Policy, reward_model) -> EstimateResult:
    """Direct method: ``mean_i sum_a pi(a | x_i, t_i) f(x_i, t_i, a)``."""
    pi = _pi_at(policy, dataset, dataset.timestamp)
    return _result((pi * reward_model.predict_matrix(dataset.context, dataset.timestamp)).sum(axis=1))


def _normalized_weights(dataset: LoggedDataset, policy: Policy):
    pi = _pi_at(policy, dataset, dataset.timestamp)
    w = _logged(pi, dataset) / dataset.pscore
    total = w.sum()
    if not total > 0:
        raise SupportError("self-normalized estimator needs a positive sum of importance weights")
    return pi, w, w / w.mean()


def snips(dataset: LoggedDataset, policy: Policy) -> EstimateResult:
    """``sum_i w_i r_i / sum_j w_j``."""
    _, w, w_norm = _normalized_weights(dataset, policy)
    res = _result(w_norm * dataset.reward, **_weight_stats(w))
    # report the ratio form exactly
    return EstimateResult(float((w * dataset.reward).sum() / w.sum()), res.per_sample_terms, res.diagnostics)


def sndr(dataset: LoggedDataset, policy: Policy, reward_model) -> EstimateResult:
    """DM term plus the self-normalized importance-weighted residual."""
    pi, w, w_norm = _normalized_weights(dataset, policy)
    q_hat = reward_model.predict_matrix(dataset.context, dataset.timestamp)
    q_logged = q_hat[np.arange(dataset.n_rounds), dataset.action]
    terms = (pi * q_hat).sum(axis=1) + w_norm * (dataset.reward - q_logged)
    return _result(terms, **_weight_stats(w))


# --------------------------------------------------------------------------
# future-value estimators
# --------------------------------------------------------------------------


def opfv(dataset: LoggedDataset, pi_e: Policy, t_prime: float, phi: TimeFeatureFn, reward_model,
         pt: Optional[TimeDistribution] = None) -> EstimateResult:
    """Estimate ``V_{t'}(pi_e)`` from logs on ``[0, T]``.

    Per record::

        1{phi(t_i) = phi(t')} / p(phi(t')) * pi_e(a_i | x_i, t') / pi_0(a_i | x_i, t_i) * (r_i - f(x_i, t_i, a_i))
            + sum_a pi_e(a | x_i, t') f(x_i, t', a)

    Parameters
    ----------
    dataset: LoggedDataset
    pi_e: Policy
        Evaluation policy; queried at ``t_prime``.
    t_prime: float
        Target timestamp.
    phi: TimeFeatureFn
        Time feature shared between logged and target times.
    reward_model:
        Fitted regressor exposing ``predict_matrix(x, t)``.
    pt: TimeDistribution, optional
        Logging-time distribution; uniform on ``[0, dataset.horizon]`` by default.
    """
    tw, p, frac = time_weight(dataset, t_prime, phi, pt)
    pi = _pi_at(pi_e, dataset, t_prime)
    w = _logged(pi, dataset) / dataset.pscore
    rows = np.arange(dataset.n_rounds)
    q_logged = reward_model.predict_matrix(dataset.context, dataset.timestamp)[rows, dataset.action]
    q_target = reward_model.predict_matrix(dataset.context, np.full(dataset.n_rounds, float(t_prime)))
    terms = tw * w * (dataset.reward - q_logged) + (pi * q_target).sum(axis=1)
    return _result(terms, p_phi=p, frac_matched=frac, **_weight_stats(w))


def opfv_extended(dataset: LoggedDataset, pi_e: Policy, t_prime: float, phi_x: TimeFeatureFn,
                  phi_r: TimeFeatureFn, reward_model, pt: Optional[TimeDistribution] = None) -> EstimateResult:
    """OPFV for drifting contexts as well as rewards.

    The correction term is weighted by the joint context/reward feature
    ``(phi_x, phi_r)``; the model term is weighted by the context feature
    ``phi_x`` alone, so that only records whose context distribution matches
    the target's contribute.
    """
    phi_xr = product_feature(phi_x, phi_r)
    tw_xr, p_xr, frac_xr = time_weight(dataset, t_prime, phi_xr, pt)
    tw_x, p_x, frac_x = time_weight(dataset, t_prime, phi_x, pt)
    pi = _pi_at(pi_e, dataset, t_prime)
    w = _logged(pi, dataset) / dataset.pscore
    rows = np.arange(dataset.n_rounds)
    q_logged = reward_model.predict_matrix(dataset.context, dataset.timestamp)[rows, dataset.action]
    q_target = reward_model.predict_matrix(dataset.context, np.full(dataset.n_rounds, float(t_prime)))
    terms = tw_xr * w * (dataset.reward - q_logged) + tw_x * (pi * q_target).sum(axis=1)
    return _result(terms, p_phi=p_xr, p_phi_x=p_x, frac_matched=frac_xr, frac_matched_x=frac_x,
                   **_weight_stats(w))


# --------------------------------------------------------------------------
# forecasting baselines
# --------------------------------------------------------------------------


def fourier_basis(k, period: float, d_prime: int) -> np.ndarray:
    """Rows ``(sin(2 pi j k / period))_{j=1..d'}, 1, (cos(2 pi j k / period))_{j=1..d'}``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    j = np.arange(1, d_prime + 1, dtype=float)
    ang = 2.0 * np.pi * np.outer(k, j) / period
    return np.hstack([np.sin(ang), np.ones((k.shape[0], 1)), np.cos(ang)])


def forecast_weights(K: int, delta: int, d_prime: int) -> np.ndarray:
    """Row ``psi(K + delta)^T pinv(Psi)``: forecast = this row times the per-period estimates."""
    check_scalar(K, "K", int, low=1)
    check_scalar(d_prime, "d_prime", int, low=0)
    period = K + delta
    if period <= 0:
        raise ConfigError("K + delta must be positive")
    design = fourier_basis(np.arange(1, K + 1), period, d_prime)
    return fourier_basis([period], period, d_prime)[0] @ np.linalg.pinv(design, rcond=PINV_RCOND)


def period_offset(t_prime: float, horizon: float, K: int) -> int:
    """``delta`` such that ``t_prime`` falls in period ``K + delta`` of width ``horizon / K``."""
    return int(np.floor(float(t_prime) / (float(horizon) / K))) + 1 - K


def slice_index(dataset: LoggedDataset, K: int) -> np.ndarray:
    """0-based index of the equal-width slice of ``[0, T]`` each record falls in."""
    idx = np.floor(dataset.timestamp / (dataset.horizon / K)).astype(np.int64)
    return np.minimum(idx, K - 1)


def period_estimates(dataset: LoggedDataset, pi_e: Policy, K: int, inner: str = "ips",
                     reward_model=None) -> np.ndarray:
    """Per-slice estimates ``Y_1..Y_K`` with the inner estimator at logged times."""
    idx = slice_index(dataset, K)
    out = np.empty(K)
    for k in range(K):
        mask = idx == k
        if not mask.any():
            raise ConfigError(f"prognosticator slice {k + 1} of {K} holds no records")
        part = dataset.subset(mask)
        if inner == "ips":
            out[k] = ips(part, pi_e).value
        elif inner == "dr":
            if reward_model is None:
                raise ConfigError("inner='dr' needs a reward model")
            out[k] = dr_naive(part, pi_e, reward_model).value
        else:
            raise ConfigError(f"unknown inner estimator {inner!r}")
    return out


def prognosticator(dataset: LoggedDataset, pi_e: Policy, K: int = 8, delta: int = 1, d_prime: int = 3,
                   inner: str = "ips", reward_model=None) -> EstimateResult:
    """Least-squares forecast of per-period estimates on a Fourier basis of the period index.

    Use :func:`period_offset` to turn a target timestamp into ``delta``.
    """
    Y = period_estimates(dataset, pi_e, K, inner, reward_model)
    c = forecast_weights(K, delta, d_prime)
    return EstimateResult(float(c @ Y), None, {"period_estimates": Y, "coefficients": c})


def prognosticator_phi(dataset: LoggedDataset, pi_e: Policy, phi_p, K: int = 8, delta: int = 1,
                       inner: str = "ips", reward_model=None) -> EstimateResult:
    """Forecast by regressing per-period estimates on one-hot period features.

    ``phi_p`` maps a 1-based period index to a feature (callable or sequence
    indexed by ``k - 1``). The forecast is the mean of ``Y_k`` over periods
    sharing the target period's feature.
    """
    Y = period_estimates(dataset, pi_e, K, inner, reward_model)
    c = phi_forecast_weights(phi_p, K, delta)
    return EstimateResult(float(c @ Y), None, {"period_estimates": Y, "coefficients": c})


def phi_forecast_weights(phi_p, K: int, delta: int) -> np.ndarray:
    lookup = phi_p if callable(phi_p) else (lambda k: phi_p[k - 1])
    feats = [int(lookup(k)) for k in range(1, K + 1)]
    target = int(lookup(K + delta))
    if target not in feats:
        raise SupportError(f"feature {target} of period {K + delta} is not observed in periods 1..{K}")
    levels = sorted(set(feats))
    design = np.zeros((K, len(levels)))
    design[np.arange(K), [levels.index(f) for f in feats]] = 1.0
    row = np.zeros(len(levels))
    row[levels.index(target)] = 1.0
    return row @ np.linalg.pinv(design, rcond=PINV_RCOND)


def season_period_map(K: int, horizon: float, phi: TimeFeatureFn) -> Callable[[int], int]:
    """Map a 1-based period index to ``phi`` at the period's midpoint."""
    width = float(horizon) / K

    def lookup(k):
        return int(feature_of(phi, min((k - 0.5) * width, phi.domain_end)))

    return lookup


ESTIMATORS = ("ips", "dr", "opfv", "opfv_extended", "prognosticator", "prognosticator_phi", "dm", "snips", "sndr")
