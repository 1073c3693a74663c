import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opfv.exceptions import ConfigError, DomainError, SupportError
from opfv.timefeat import (
    DEFAULT_DOMAIN_END,
    SECONDS_PER_DAY,
    YEAR_SECONDS,
    TimeDistribution,
    TimeFeatureFn,
    calendar_feature,
    constant_feature,
    feature_from_spec,
    feature_of,
    feature_probs,
    indicator,
    marginal_prob,
    product_feature,
    refines,
    season_ladder,
)

DAY = SECONDS_PER_DAY
EPOCH = dt.datetime(2021, 1, 1, tzinfo=dt.timezone.utc)


def ts(year, month, day, hour=0):
    return (dt.datetime(year, month, day, hour, tzinfo=dt.timezone.utc) - EPOCH).total_seconds()


SEASON8 = calendar_feature("n_equal_seasons", k=8)
DOW = calendar_feature("day_of_week")
times = st.integers(min_value=0, max_value=int(DEFAULT_DOMAIN_END)).map(float)


# ---- feature_of / indicator ----------------------------------------------


def test_season8_first_season_boundaries():
    assert feature_of(SEASON8, ts(2021, 1, 10)) == 0
    assert feature_of(SEASON8, ts(2021, 1, 1)) == feature_of(SEASON8, ts(2021, 2, 14, 23))
    assert feature_of(SEASON8, ts(2021, 2, 15)) == 1
    assert feature_of(SEASON8, ts(2021, 12, 31, 23)) == 7
    # seasons repeat annually
    assert feature_of(SEASON8, ts(2022, 1, 10)) == 0


def test_constant_feature_is_zero():
    phi = constant_feature()
    assert phi.cardinality == 1
    assert feature_of(phi, 12345.0) == 0
    assert np.all(feature_of(phi, np.array([0.0, 1e7, DEFAULT_DOMAIN_END])) == 0)


def test_day_of_week_weekly_and_monday_zero():
    t = ts(2021, 3, 17, 5)
    assert feature_of(DOW, t) == feature_of(DOW, t + 7 * DAY)
    assert DOW.cardinality == 7
    assert feature_of(DOW, ts(2021, 1, 4)) == 0  # a Monday
    assert feature_of(DOW, ts(2021, 1, 1)) == 4  # a Friday


def test_out_of_domain_raises():
    with pytest.raises(DomainError):
        feature_of(SEASON8, -1.0)
    with pytest.raises(DomainError):
        feature_of(SEASON8, DEFAULT_DOMAIN_END + 1)
    with pytest.raises(DomainError):
        indicator(SEASON8, 0.0, float("nan"))


def test_indicator_examples():
    t = ts(2021, 6, 1)
    assert indicator(SEASON8, t, t) == 1
    assert indicator(SEASON8, ts(2021, 1, 10), ts(2021, 3, 1)) == 0
    # Monday 2021-01-04 and Monday 2022-01-03
    assert indicator(DOW, ts(2021, 1, 4), ts(2022, 1, 3)) == 1


@given(times, times)
def test_indicator_symmetric_and_reflexive(t, u):
    for phi in (SEASON8, DOW, calendar_feature("hour")):
        assert indicator(phi, t, u) == indicator(phi, u, t)
        assert indicator(phi, t, t) == 1


# ---- marginal_prob --------------------------------------------------------


def test_marginal_prob_constant_is_one():
    assert marginal_prob(constant_feature(), 5e7, TimeDistribution.uniform(0, YEAR_SECONDS)) == 1.0


def test_marginal_prob_exact_halves():
    phi = calendar_feature("am_pm")
    pt = TimeDistribution.uniform(0, YEAR_SECONDS)
    assert marginal_prob(phi, 3600.0, pt) == pytest.approx(0.5, abs=1e-15)


def test_marginal_prob_season1_matches_day_count():
    pt = TimeDistribution.uniform(0, YEAR_SECONDS)
    # brute force: count days of 2021 whose season equals that of Jan 10
    days = np.arange(365) * DAY + DAY / 2
    count = int(np.sum(feature_of(SEASON8, days) == 0))
    assert count == 45
    assert marginal_prob(SEASON8, ts(2022, 1, 10), pt) == pytest.approx(45 / 365, abs=1e-15)


def test_marginal_prob_zero_and_strict():
    pt = TimeDistribution.uniform(0, 30 * DAY)  # January only
    assert marginal_prob(SEASON8, ts(2021, 6, 1), pt) == 0.0
    with pytest.raises(SupportError):
        marginal_prob(SEASON8, ts(2021, 6, 1), pt, strict=True)


def test_marginal_prob_partial_interval_endpoints():
    # window ends mid-day: the last partial day still counts by its length
    pt = TimeDistribution.uniform(0, 1.5 * DAY)
    phi = calendar_feature("day_of_week")
    assert marginal_prob(phi, 0.0, pt) == pytest.approx(1 / 1.5)
    assert marginal_prob(phi, DAY, pt) == pytest.approx(0.5 / 1.5)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["n_equal_seasons", "month", "week_of_month", "date", "day_of_week", "hour",
                        "four_per_day", "am_pm", "weekday_weekend", "constant"]),
       st.floats(0, YEAR_SECONDS * 1.5), st.floats(3600, YEAR_SECONDS * 0.5))
def test_feature_probs_sum_to_one(kind, start, length):
    phi = calendar_feature(kind, k=5) if kind == "n_equal_seasons" else calendar_feature(kind)
    pt = TimeDistribution.uniform(start, min(start + length, DEFAULT_DOMAIN_END))
    assert abs(feature_probs(phi, pt).sum() - 1.0) < 1e-9


def test_feature_probs_match_fine_scan():
    # interval measure agrees with a 1-minute brute-force scan on a ragged window
    pt = TimeDistribution.uniform(12345.0, 12345.0 + 20 * DAY + 777)
    grid = np.arange(pt.t_start, pt.t_end, 60.0) + 30.0
    for phi in (DOW, calendar_feature("four_per_day"), SEASON8):
        scan = np.bincount(feature_of(phi, grid), minlength=phi.cardinality) / grid.size
        np.testing.assert_allclose(feature_probs(phi, pt), scan, atol=2e-4)


def test_empirical_converges_to_uniform():
    rng = np.random.default_rng(7)
    n = 100_000
    sample = rng.uniform(0, YEAR_SECONDS, n)
    t_prime = ts(2022, 1, 10)
    p = marginal_prob(SEASON8, t_prime, TimeDistribution.uniform(0, YEAR_SECONDS))
    p_hat = marginal_prob(SEASON8, t_prime, TimeDistribution.empirical(sample))
    assert abs(p_hat - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_time_distribution_validation():
    with pytest.raises(ConfigError):
        TimeDistribution.uniform(5.0, 5.0)
    with pytest.raises(ConfigError):
        TimeDistribution("empirical", sample=np.array([]))
    with pytest.raises(ConfigError):
        TimeDistribution("poisson")


# ---- product features ------------------------------------------------------


def test_product_with_constant_is_bijective():
    phi = product_feature(DOW, constant_feature())
    t = np.arange(0, 30) * DAY
    assert phi.cardinality == 7
    np.testing.assert_array_equal(feature_of(phi, t), feature_of(DOW, t))


def test_product_cardinality_and_encoding():
    ampm = calendar_feature("am_pm")
    phi = product_feature(DOW, ampm)
    assert phi.cardinality == 14
    t = ts(2021, 1, 6, 15)
    assert feature_of(phi, t) == feature_of(DOW, t) * 2 + feature_of(ampm, t)


def test_product_indicator_is_and_of_factors():
    rng = np.random.default_rng(0)
    a, b = SEASON8, calendar_feature("four_per_day")
    phi = product_feature(a, b)
    t = rng.uniform(0, DEFAULT_DOMAIN_END, 1000)
    u = rng.uniform(0, DEFAULT_DOMAIN_END, 1000)
    np.testing.assert_array_equal(indicator(phi, t, u), indicator(a, t, u) & indicator(b, t, u))


def test_product_domain_mismatch():
    with pytest.raises(ConfigError):
        product_feature(DOW, calendar_feature("month", domain_end=YEAR_SECONDS))


@given(times, times)
def test_product_refines_coarse_factor(t, u):
    fine = product_feature(SEASON8, DOW)
    if indicator(fine, t, u):
        assert indicator(SEASON8, t, u) == 1


# ---- calendar constructors -------------------------------------------------


def test_calendar_errors():
    with pytest.raises(ConfigError):
        calendar_feature("n_equal_seasons", k=0)
    with pytest.raises(ConfigError):
        calendar_feature("holiday")
    with pytest.raises(ConfigError):
        calendar_feature("fortnight")
    with pytest.raises(ConfigError):
        calendar_feature("month", k=3)


def test_calendar_semantics():
    t = ts(2021, 7, 20, 14)  # Tuesday
    assert feature_of(calendar_feature("month"), t) == 6
    assert feature_of(calendar_feature("date"), t) == 19
    assert feature_of(calendar_feature("hour"), t) == 14
    assert feature_of(calendar_feature("four_per_day"), t) == 2
    assert feature_of(calendar_feature("am_pm"), t) == 1
    assert feature_of(calendar_feature("weekday_weekend"), t) == 0
    assert feature_of(calendar_feature("weekday_weekend"), ts(2021, 7, 18)) == 1
    # July 2021 starts on a Thursday, so the 20th is in the fourth Monday-started week
    assert feature_of(calendar_feature("week_of_month"), t) == 3
    hol = calendar_feature("holiday", table=["2021-12-25", "2022-01-01"])
    assert feature_of(hol, ts(2021, 12, 25, 8)) == 1
    assert feature_of(hol, ts(2021, 12, 26)) == 0


def test_seasons_cover_leap_year_days():
    phi = calendar_feature("n_equal_seasons", k=4, domain_end=5 * YEAR_SECONDS)
    # 2024 is a leap year: 366 days split into 4 seasons of 91/92/91/92 days
    start = ts(2024, 1, 1)
    days = start + (np.arange(366) + 0.5) * DAY
    counts = np.bincount(feature_of(phi, days), minlength=4)
    assert counts.sum() == 366 and counts.max() - counts.min() <= 1


def test_ladder_refines():
    ladder = season_ladder()
    assert [p.cardinality for p in ladder] == [2, 4, 8, 16]
    for coarse in ladder[:-1]:
        assert refines(ladder[-1], coarse)
    assert not refines(ladder[0], ladder[-1])


def test_feature_from_spec_roundtrip():
    spec = {"kind": "product", "factors": [{"kind": "n_equal_seasons", "params": {"k": 8}}, {"kind": "am_pm"}]}
    phi = feature_from_spec(spec)
    assert phi.cardinality == 16
    again = feature_from_spec(phi.spec)
    t = np.arange(0, 400) * 5 * 3600.0
    np.testing.assert_array_equal(feature_of(again, t), feature_of(phi, t))
    assert feature_from_spec(phi) is phi
    with pytest.raises(ConfigError):
        feature_from_spec({"kind": "product", "factors": [spec]})
    with pytest.raises(ConfigError):
        feature_from_spec("month")


def test_user_feature_out_of_range_index():
    bad = TimeFeatureFn("bad", 2, lambda t: np.full(np.shape(t), 5))
    with pytest.raises(ConfigError):
        feature_of(bad, 1.0)
