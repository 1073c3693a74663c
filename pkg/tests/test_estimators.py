import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opfv.dataset import LoggedDataset
from opfv.env import make_env
from opfv.estimators import (
    dm,
    dr_naive,
    forecast_weights,
    fourier_basis,
    ips,
    opfv,
    opfv_extended,
    period_offset,
    prognosticator,
    prognosticator_phi,
    sndr,
    snips,
)
from opfv.exceptions import SupportError
from opfv.policy import CallablePolicy, FixedActionPolicy, FrozenTimePolicy, UniformPolicy
from opfv.reward import CallableRewardModel, DirectRewardModel, ZeroRewardModel
from opfv.timefeat import (
    SECONDS_PER_DAY,
    YEAR_SECONDS,
    TimeDistribution,
    calendar_feature,
    constant_feature,
    product_feature,
)

DAY = SECONDS_PER_DAY
SEASON8 = calendar_feature("n_equal_seasons", k=8)
TARGET = YEAR_SECONDS + 100 * DAY


def _one(t, a, r, p, n_actions=2, x=(0.0,)):
    return LoggedDataset(np.array([x]), np.array([t]), np.array([a]), np.array([r]), np.array([p]),
                         n_actions, YEAR_SECONDS)


@pytest.fixture(scope="module")
def env_data():
    env = make_env(0)
    return env, env.sample_logged_data(1500, 1)


# ---- examples ------------------------------------------------------------------


def test_ips_single_record():
    d = _one(0.0, 0, 0.5, 0.5)
    assert ips(d, FixedActionPolicy(2, 0)).value == pytest.approx(1.0, abs=1e-15)


def test_ips_with_logging_policy_is_reward_mean(env_data):
    env, d = env_data
    assert ips(d, env.logging()).value == pytest.approx(d.reward.mean(), abs=1e-12)


def test_opfv_single_record():
    # am/pm has probability 1/2 under uniform logging times; both times are mornings
    d = _one(3600.0, 1, 1.0, 0.5)
    res = opfv(d, FixedActionPolicy(2, 1), YEAR_SECONDS + 3600.0, calendar_feature("am_pm"),
               ZeroRewardModel(2))
    assert res.per_sample_terms[0] == pytest.approx(4.0, abs=1e-15)
    assert res.value == pytest.approx(4.0, abs=1e-15)
    assert res.diagnostics["p_phi"] == pytest.approx(0.5)


def test_opfv_support_error():
    d = _one(3600.0, 1, 1.0, 0.5)
    pt = TimeDistribution.uniform(0, 30 * DAY)
    with pytest.raises(SupportError, match="p\\(phi"):
        opfv(d, UniformPolicy(2), 200 * DAY, SEASON8, ZeroRewardModel(2), pt)


def test_dr_with_zero_model_is_ips(env_data):
    env, d = env_data
    pe = env.evaluation()
    np.testing.assert_array_equal(dr_naive(d, pe, ZeroRewardModel(10)).per_sample_terms,
                                  ips(d, pe).per_sample_terms)


def test_dr_oracle_noiseless_logging_policy():
    env = make_env(0, {"sigma": 0.0})
    d = env.sample_logged_data(500, 2)
    from opfv.reward import OracleRewardModel
    res = dr_naive(d, env.logging(), OracleRewardModel(env))
    # residuals vanish, leaving the policy-averaged q at each logged (x, t)
    pi0 = env.logging_policy(d.context, d.timestamp)
    want = np.mean((pi0 * env.q_matrix(d.context, d.timestamp)).sum(axis=1))
    assert res.value == pytest.approx(want, abs=1e-12)
    assert np.all(np.abs(res.per_sample_terms - (pi0 * env.q_matrix(d.context, d.timestamp)).sum(axis=1)) < 1e-12)


# ---- reductions -------------------------------------------------------------------


def test_reduction_chain(env_data):
    env, d = env_data
    frozen = FrozenTimePolicy(env.evaluation(), TARGET)
    phi = constant_feature()
    # a time-agnostic model, so the model term is the same at t_i and t'
    model = DirectRewardModel(time_features=()).fit(d)
    a = opfv(d, env.evaluation(), TARGET, phi, model).per_sample_terms
    b = dr_naive(d, frozen, model).per_sample_terms
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)
    a0 = opfv(d, env.evaluation(), TARGET, phi, ZeroRewardModel(10)).per_sample_terms
    np.testing.assert_allclose(a0, ips(d, frozen).per_sample_terms, atol=1e-12, rtol=0)


def test_opfv_constant_phi_time_invariant_policy_is_ips(env_data):
    env, d = env_data
    pe = CallablePolicy(lambda x, t: np.tile(np.linspace(1, 2, 10) / 15, (len(x), 1)), 10)
    a = opfv(d, pe, TARGET, constant_feature(), ZeroRewardModel(10)).value
    assert a == pytest.approx(ips(d, pe).value, abs=1e-12)


def test_extended_reductions(env_data):
    env, d = env_data
    pe = env.evaluation()
    model = DirectRewardModel(time_features=("day_of_week", SEASON8)).fit(d)
    ext = opfv_extended(d, pe, TARGET, constant_feature(), SEASON8, model)
    np.testing.assert_allclose(ext.per_sample_terms, opfv(d, pe, TARGET, SEASON8, model).per_sample_terms,
                               atol=1e-12, rtol=0)
    phi_x = calendar_feature("n_equal_seasons", k=4)
    ext0 = opfv_extended(d, pe, TARGET, phi_x, SEASON8, ZeroRewardModel(10))
    joint = opfv(d, pe, TARGET, product_feature(phi_x, SEASON8), ZeroRewardModel(10))
    np.testing.assert_allclose(ext0.per_sample_terms, joint.per_sample_terms, atol=1e-12, rtol=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_per_sample_terms_average_to_value(seed):
    env = make_env(seed % 3)
    d = env.sample_logged_data(50, seed)
    model = CallableRewardModel(lambda x, t: np.sin(x[:, :10] + t[:, None] / 1e6))
    for res in (ips(d, env.evaluation()), dr_naive(d, env.evaluation(), model),
                opfv(d, env.evaluation(), TARGET, SEASON8, model), dm(d, env.evaluation(), model),
                snips(d, env.evaluation()), sndr(d, env.evaluation(), model)):
        assert abs(res.per_sample_terms.mean() - res.value) < 1e-12


# ---- evaluators ---------------------------------------------------------------------


def test_snips_examples(env_data):
    env, d = env_data
    assert snips(d, env.logging()).value == pytest.approx(d.reward.mean(), abs=1e-12)
    pe = env.evaluation()
    halved = d.replace(pscore=d.pscore * 0.5)
    assert snips(halved, pe).value == pytest.approx(snips(d, pe).value, abs=1e-12)
    assert sndr(d, pe, ZeroRewardModel(10)).value == pytest.approx(snips(d, pe).value, abs=1e-12)


def test_snips_zero_weights():
    d = _one(0.0, 0, 1.0, 0.5)
    with pytest.raises(SupportError):
        snips(d, FixedActionPolicy(2, 1))


def test_dm_matches_loop(env_data):
    env, d = env_data
    model = DirectRewardModel().fit(d)
    pe = env.evaluation()
    want = np.mean([pe.action_dist(d.context[i:i + 1], d.timestamp[i:i + 1])[0]
                    @ model.predict_matrix(d.context[i:i + 1], d.timestamp[i:i + 1])[0] for i in range(100)])
    assert dm(d.subset(np.arange(100)), pe, model).value == pytest.approx(want, abs=1e-12)


# ---- forecasting baselines ------------------------------------------------------------


def _constant_slices(v, K=8, per_slice=3):
    t = (np.repeat(np.arange(K), per_slice) + 0.5) * YEAR_SECONDS / K
    n = t.size
    return LoggedDataset(np.zeros((n, 1)), t, np.zeros(n, dtype=int), np.full(n, v), np.ones(n), 2, YEAR_SECONDS)


@pytest.mark.parametrize("d_prime", [0, 1, 2, 3])
@pytest.mark.parametrize("delta", [1, 4, 8])
def test_prognosticator_reproduces_constant(d_prime, delta):
    d = _constant_slices(1.7)
    res = prognosticator(d, FixedActionPolicy(2, 0), K=8, delta=delta, d_prime=d_prime)
    assert res.value == pytest.approx(1.7, abs=1e-9)


@pytest.mark.parametrize("d_prime", [1, 3, 5, 7])
def test_prognosticator_least_squares(d_prime):
    rng = np.random.default_rng(d_prime)
    Y = rng.normal(size=8)
    design = fourier_basis(np.arange(1, 9), 9, d_prime)
    w = np.linalg.pinv(design, rcond=1e-10) @ Y
    assert np.max(np.abs(design.T @ (Y - design @ w))) < 1e-8
    # independent route: minimum-norm least squares
    w_ls = np.linalg.lstsq(design, Y, rcond=1e-10)[0]
    forecast = fourier_basis([9], 9, d_prime)[0] @ w_ls
    assert forecast_weights(8, 1, d_prime) @ Y == pytest.approx(forecast, abs=1e-8)


def test_prognosticator_empty_slice_named():
    d = _constant_slices(1.0)
    keep = np.flatnonzero(d.timestamp // (YEAR_SECONDS / 8) != 2)
    with pytest.raises(ValueError, match="slice 3 of 8"):
        prognosticator(d.subset(keep), FixedActionPolicy(2, 0))


def test_period_offset_targets():
    assert period_offset(YEAR_SECONDS + 1.0, YEAR_SECONDS, 8) == 1
    assert period_offset(2 * YEAR_SECONDS - 1.0, YEAR_SECONDS, 8) == 8


def _slice_values(Y, K=8):
    t = (np.arange(K) + 0.5) * YEAR_SECONDS / K
    return LoggedDataset(np.zeros((K, 1)), t, np.zeros(K, dtype=int), np.asarray(Y, float), np.ones(K), 2,
                         YEAR_SECONDS)


def test_prognosticator_phi_examples():
    Y = np.arange(8.0) ** 2
    d = _slice_values(Y)
    pol = FixedActionPolicy(2, 0)
    injective = list(range(8)) + [3]
    assert prognosticator_phi(d, pol, lambda k: injective[k - 1], delta=1).value == pytest.approx(Y[3], abs=1e-12)
    assert prognosticator_phi(d, pol, lambda k: 0, delta=2).value == pytest.approx(Y.mean(), abs=1e-12)
    with pytest.raises(SupportError):
        prognosticator_phi(d, pol, lambda k: k, delta=1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.lists(st.integers(0, 2), min_size=9, max_size=9))
def test_prognosticator_phi_group_mean(Y, feats):
    if feats[8] not in feats[:8]:
        feats[8] = feats[0]
    d = _slice_values(Y)
    res = prognosticator_phi(d, FixedActionPolicy(2, 0), lambda k: feats[k - 1], delta=1)
    group = [y for y, f in zip(Y, feats[:8]) if f == feats[8]]
    assert res.value == pytest.approx(sum(group) / len(group), abs=1e-9)


# ---- Monte Carlo -------------------------------------------------------------------


@pytest.fixture(scope="module")
def stationary_reps():
    # logs confined to one season with lambda=1: rewards do not move within the window
    env = make_env(0, {"lambda": 1.0, "horizon": 30 * DAY})
    pe = env.evaluation()
    from opfv.reward import OracleRewardModel
    oracle = OracleRewardModel(env)
    out = []
    for s in range(500):
        d = env.sample_logged_data(200, 1000 + s)
        out.append((ips(d, pe).value, dr_naive(d, pe, oracle).value))
    truth, se = env.true_policy_value(pe, 15 * DAY, 200_000, seed=1)
    return np.array(out), truth, se


def test_ips_unbiased_when_stationary(stationary_reps):
    vals, truth, se = stationary_reps
    ips_vals = vals[:, 0]
    assert abs(ips_vals.mean() - truth) < 3 * np.hypot(ips_vals.std(ddof=1) / np.sqrt(len(ips_vals)), se)


def test_dr_oracle_has_lower_variance(stationary_reps):
    vals, _, _ = stationary_reps
    assert vals[:, 1].var() < vals[:, 0].var()
