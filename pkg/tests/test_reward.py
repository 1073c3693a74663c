import warnings

import numpy as np
import pytest
from itertools import combinations

from opfv.dataset import LoggedDataset
from opfv.env import make_env
from opfv.reward import (
    DirectRewardModel,
    OracleRewardModel,
    TwoStageRewardModel,
    ZeroRewardModel,
    build_pairwise_dataset,
    context_cells,
    reward_model_from_config,
)
from opfv.timefeat import SECONDS_PER_DAY, YEAR_SECONDS, calendar_feature, feature_of

DAY = SECONDS_PER_DAY
SEASON8 = calendar_feature("n_equal_seasons", k=8)


def _dataset(x, t, a, r, n_actions=3):
    n = len(r)
    return LoggedDataset(x, t, a, r, np.full(n, 1.0 / n_actions), n_actions, YEAR_SECONDS)


def test_exact_linear_fit_without_penalty():
    rng = np.random.default_rng(0)
    n = 400
    x = rng.normal(size=(n, 2))
    t = rng.uniform(0, YEAR_SECONDS, n)
    a = rng.integers(0, 3, n)
    # reward lies in the span of [x, onehot(a), onehot(dow)]
    r = 1.5 + x @ [0.4, -1.2] + np.array([0.3, -0.7, 0.0])[a] + 0.1 * feature_of(calendar_feature("day_of_week"), t)
    m = DirectRewardModel(time_features=("day_of_week",), ridge=0.0, time_action=False).fit(_dataset(x, t, a, r))
    assert np.max(np.abs(m.predict(x, t, a) - r)) < 1e-8


def test_constant_rewards_and_heavy_penalty():
    rng = np.random.default_rng(1)
    n = 100
    x, t, a = rng.normal(size=(n, 2)), rng.uniform(0, YEAR_SECONDS, n), rng.integers(0, 3, n)
    m = DirectRewardModel(ridge=0.0).fit(_dataset(x, t, a, np.full(n, 2.5)))
    np.testing.assert_allclose(m.predict(x, t, a), 2.5, atol=1e-8)
    r = rng.normal(size=n)
    m = DirectRewardModel(ridge=1e9).fit(_dataset(x, t, a, r))
    np.testing.assert_allclose(m.predict(x, t, a), r.mean(), atol=1e-6)


def test_normal_equations_hold():
    d = make_env(0).sample_logged_data(2000, 1)
    m = DirectRewardModel(time_features=("day_of_week", {"kind": "n_equal_seasons", "params": {"k": 8}})).fit(d)
    assert m.normal_equation_residual() < 1e-8


def test_zero_and_oracle_models():
    env = make_env(0)
    x = np.random.default_rng(2).normal(size=(6, 10))
    assert np.all(ZeroRewardModel(10).predict_matrix(x, 0.0) == 0)
    np.testing.assert_array_equal(OracleRewardModel(env).predict_matrix(x, 5 * DAY), env.q_matrix(x, 5 * DAY))


def test_from_config():
    assert isinstance(reward_model_from_config({"kind": "zero"}, n_actions=4), ZeroRewardModel)
    assert isinstance(reward_model_from_config({"kind": "two_stage", "ridge": 2.0}), TwoStageRewardModel)
    with pytest.raises(ValueError):
        reward_model_from_config({"kind": "forest"})
    with pytest.raises(ValueError):
        reward_model_from_config({"kind": "oracle"})


# ---- pairwise dataset ------------------------------------------------------


def _brute_pairs(d, phi, bins):
    cells = context_cells(d.context, bins)
    f = feature_of(phi, d.timestamp)
    return {(i, j) for i, j in combinations(range(d.n_rounds), 2)
            if d.action[i] == d.action[j] and f[i] == f[j] and cells[i] == cells[j]}


def test_pairs_match_brute_force():
    d = make_env(0, {"n_actions": 3}).sample_logged_data(200, 4)
    pairs = build_pairwise_dataset(d, SEASON8, "sign", max_pairs=None)
    assert set(zip(pairs.first.tolist(), pairs.second.tolist())) == _brute_pairs(d, SEASON8, "sign")
    np.testing.assert_array_equal(pairs.label, d.reward[pairs.first] - d.reward[pairs.second])


def test_pairs_empty_and_single():
    x = np.array([[1.0], [1.0]])
    t = np.array([0.0, 100 * DAY])  # different seasons
    d = _dataset(x, t, np.array([0, 0]), np.array([1.0, 2.0]))
    assert len(build_pairwise_dataset(d, SEASON8)) == 0
    d = _dataset(x, np.array([0.0, DAY]), np.array([0, 0]), np.array([1.0, 2.0]))
    p = build_pairwise_dataset(d, SEASON8)
    assert len(p) == 1 and p.label[0] == -1.0


def test_pair_subsample_is_subset():
    d = make_env(0, {"n_actions": 2}).sample_logged_data(300, 5)
    full = build_pairwise_dataset(d, SEASON8, "none", max_pairs=None)
    sub = build_pairwise_dataset(d, SEASON8, "none", max_pairs=50, seed=1)
    assert len(sub) == 50
    full_set = set(zip(full.first.tolist(), full.second.tolist()))
    assert set(zip(sub.first.tolist(), sub.second.tolist())) <= full_set


# ---- two-stage model ---------------------------------------------------------


def test_two_stage_stationary_h_is_small():
    rng = np.random.default_rng(3)
    n = 4000
    x = rng.normal(size=(n, 2))
    t = rng.uniform(0, YEAR_SECONDS, n)
    a = rng.integers(0, 3, n)
    r = x[:, 0] + np.array([0.0, 1.0, -1.0])[a] + rng.normal(scale=0.5, size=n)
    m = TwoStageRewardModel(ridge=1.0).fit(_dataset(x, t, a, r))
    grid_t = np.arange(7) * DAY + 0.5 * DAY
    h = m.predict_h_matrix(np.zeros((7, 2)), grid_t)
    assert np.max(np.abs(h)) < 0.1


def test_two_stage_empty_pairs_gives_zero_h():
    x = np.array([[1.0], [-1.0]])
    d = _dataset(x, np.array([0.0, 100 * DAY]), np.array([0, 1]), np.array([1.0, 2.0]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        m = TwoStageRewardModel().fit(d)
    assert any("no record pairs" in str(w.message) for w in caught)
    assert np.all(m.predict_h_matrix(x, np.array([0.0, 3 * DAY])) == 0)


def test_two_stage_recovers_h_differences():
    # one context point: the shared h_hat has no context-by-time terms, so several
    # points with different weekday effects cannot all be matched
    env = make_env(0, {"discrete_contexts": 1, "n_actions": 3, "lambda": 0.5, "sigma": 0.5})
    d = env.sample_logged_data(8000, 2)
    m = TwoStageRewardModel(phi={"kind": "n_equal_seasons", "params": {"k": 8}}, ridge=1.0,
                            context_bins="none").fit(d)
    # within one season, h differences between weekdays come from the h part of q alone
    x = env.coef["context_points"][:1]
    t = 50 * DAY + np.arange(7) * DAY + 0.5 * DAY
    q = env.q_matrix(np.repeat(x, 7, axis=0), t)
    hat = m.predict_h_matrix(np.repeat(x, 7, axis=0), t)
    diff_true = q - q[:1]
    diff_hat = hat - hat[:1]
    assert np.max(np.abs(diff_true - diff_hat)) < 0.2


def test_two_stage_additive_and_zero_beyond_horizon():
    d = make_env(0, {"n_actions": 3}).sample_logged_data(1500, 6)
    m = TwoStageRewardModel().fit(d)
    x = d.context[:5]
    for t in (30 * DAY, YEAR_SECONDS + 30 * DAY):
        np.testing.assert_allclose(m.predict_matrix(x, t), m.predict_g_matrix(x, t) + m.predict_h_matrix(x, t))
    assert np.all(m.predict_h_matrix(x, YEAR_SECONDS + 30 * DAY) == 0)
