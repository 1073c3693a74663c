"""Time-feature functions: clusterings of timestamps shared by past and future.

Timestamps are seconds since :data:`EPOCH` (2021-01-01T00:00:00 UTC). All
calendar arithmetic is proleptic Gregorian in UTC. Every feature function is
vectorized: it accepts a scalar or an array of timestamps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .exceptions import ConfigError, DomainError, SupportError

EPOCH = np.datetime64("2021-01-01", "D")
SECONDS_PER_HOUR = 3600
SECONDS_PER_DAY = 86400
YEAR_SECONDS = 365 * SECONDS_PER_DAY
# Years 1 and 2 (2021, 2022) are both 365 days long.
DEFAULT_DOMAIN_END = 2 * YEAR_SECONDS

_EPOCH_DAYS = int(EPOCH.astype(np.int64))  # days since 1970-01-01


@dataclass(frozen=True, eq=False)
class TimeFeatureFn:
    """A total map from timestamps in ``[0, domain_end]`` to ``{0, ..., cardinality - 1}``.

    Parameters
    ----------
    id: str
        Human-readable label, used in reports.
    cardinality: int
        Number of distinct feature values.
    func: callable
        Vectorized map from a float array of timestamps to an integer array.
    domain_end: float
        Largest timestamp on which the map is defined.
    resolution: float
        Grid step (seconds, aligned to the epoch) on which ``func`` is
        piecewise constant. Calendar features are exact on their grid; for
        user-supplied functions it is the scan resolution used by
        :func:`feature_probs`.
    spec: dict, optional
        Config representation (``{"kind": ..., "params": ...}``), if any.
    """

    id: str
    cardinality: int
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    domain_end: float = DEFAULT_DOMAIN_END
    resolution: float = SECONDS_PER_HOUR
    spec: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.cardinality) < 1:
            raise ConfigError(f"cardinality must be >= 1, got {self.cardinality}")
        if not self.resolution > 0:
            raise ConfigError("resolution must be positive")

    def __call__(self, t):
        return feature_of(self, t)


@dataclass(frozen=True, eq=False)
class TimeDistribution:
    """Distribution of logging timestamps, ``p(t)``.

    ``kind="uniform"`` is uniform on ``[t_start, t_end]``;
    ``kind="empirical"`` puts equal mass on each entry of ``sample``.
    """

    kind: str = "uniform"
    t_start: float = 0.0
    t_end: float = float(YEAR_SECONDS)
    sample: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "uniform":
            if not self.t_start < self.t_end:
                raise ConfigError("uniform time distribution needs t_start < t_end")
        elif self.kind == "empirical":
            if self.sample is None or np.asarray(self.sample).size == 0:
                raise ConfigError("empirical time distribution needs a non-empty sample")
        else:
            raise ConfigError(f"unknown time distribution kind {self.kind!r}")

    @classmethod
    def uniform(cls, t_start: float, t_end: float) -> "TimeDistribution":
        return cls("uniform", float(t_start), float(t_end))

    @classmethod
    def empirical(cls, sample) -> "TimeDistribution":
        sample = np.asarray(sample, dtype=float).ravel()
        return cls("empirical", float(sample.min()), float(sample.max()), sample)


def _check_domain(phi: TimeFeatureFn, t: np.ndarray) -> None:
    if t.size and (not np.all(np.isfinite(t)) or t.min() < 0 or t.max() > phi.domain_end):
        bad = t[~((t >= 0) & (t <= phi.domain_end))]
        raise DomainError(
            f"timestamp {bad.ravel()[0]!r} outside the domain [0, {phi.domain_end}] of {phi.id!r}"
        )


def feature_of(phi: TimeFeatureFn, t):
    """Feature index of timestamp(s) ``t`` under ``phi``.

    Returns an ``int`` for scalar input and an integer array otherwise.
    Raises :class:`DomainError` for timestamps outside ``[0, phi.domain_end]``.
    """
    arr = np.asarray(t, dtype=float)
    _check_domain(phi, arr)
    out = np.asarray(phi.func(arr), dtype=np.int64)
    if out.shape != arr.shape:
        out = np.broadcast_to(out, arr.shape).copy()
    if out.size and (out.min() < 0 or out.max() >= phi.cardinality):
        raise ConfigError(f"feature function {phi.id!r} returned an index outside [0, {phi.cardinality})")
    if arr.ndim == 0:
        return int(out)
    return out


def indicator(phi: TimeFeatureFn, t, t_prime):
    """1 where ``t`` and ``t_prime`` fall in the same cluster of ``phi``, else 0."""
    same = np.asarray(feature_of(phi, t)) == np.asarray(feature_of(phi, t_prime))
    if same.ndim == 0:
        return int(same)
    return same.astype(np.int64)


def _grid(t_start: float, t_end: float, step: float) -> np.ndarray:
    first = math.floor(t_start / step) + 1
    last = math.ceil(t_end / step) - 1
    inner = np.arange(first, last + 1, dtype=float) * step
    return np.concatenate([[t_start], inner, [t_end]])


def feature_probs(phi: TimeFeatureFn, pt: TimeDistribution, resolution: Optional[float] = None) -> np.ndarray:
    """Probability of every feature value under ``pt``.

    For a uniform ``pt`` this is the Lebesgue measure of each preimage
    intersected with ``[t_start, t_end]``, computed on the epoch-aligned grid
    of ``phi.resolution`` (exact for calendar and product features). For an
    empirical ``pt`` it is the fraction of sample points in each cluster.
    """
    if pt.kind == "empirical":
        idx = feature_of(phi, pt.sample)
        return np.bincount(idx, minlength=phi.cardinality) / idx.size
    step = float(resolution or phi.resolution)
    points = _grid(pt.t_start, pt.t_end, step)
    lengths = np.diff(points)
    idx = feature_of(phi, points[:-1])
    mass = np.bincount(idx, weights=lengths, minlength=phi.cardinality)
    return mass / (pt.t_end - pt.t_start)


def marginal_prob(
    phi: TimeFeatureFn,
    t_prime: float,
    pt: TimeDistribution,
    resolution: Optional[float] = None,
    strict: bool = False,
) -> float:
    """``p(phi(t_prime))``: probability that a logging timestamp shares ``t_prime``'s feature.

    A zero result means the target's cluster never occurs in the logging
    window. With ``strict=True`` that raises :class:`SupportError`;
    otherwise ``0.0`` is returned for the caller to handle.
    """
    p = float(feature_probs(phi, pt, resolution)[feature_of(phi, t_prime)])
    if strict and p <= 0.0:
        raise SupportError(
            f"time feature {phi.id!r} has zero probability at t'={t_prime} "
            "(no logging time shares its feature)"
        )
    return p


def product_feature(phi_a: TimeFeatureFn, phi_b: TimeFeatureFn) -> TimeFeatureFn:
    """Joint feature ``(phi_a(t), phi_b(t))`` encoded as ``a * |C_b| + b``."""
    if phi_a.domain_end != phi_b.domain_end:
        raise ConfigError(
            f"cannot combine {phi_a.id!r} and {phi_b.id!r}: domain ends differ "
            f"({phi_a.domain_end} vs {phi_b.domain_end})"
        )
    card_b = phi_b.cardinality

    def func(t):
        return np.asarray(phi_a.func(t), dtype=np.int64) * card_b + np.asarray(phi_b.func(t), dtype=np.int64)

    spec = None
    if phi_a.spec is not None and phi_b.spec is not None:
        spec = {"kind": "product", "factors": [phi_a.spec, phi_b.spec]}
    return TimeFeatureFn(
        id=f"{phi_a.id}*{phi_b.id}",
        cardinality=phi_a.cardinality * card_b,
        func=func,
        domain_end=phi_a.domain_end,
        resolution=float(math.gcd(int(phi_a.resolution), int(phi_b.resolution)))
        if float(phi_a.resolution).is_integer() and float(phi_b.resolution).is_integer()
        else min(phi_a.resolution, phi_b.resolution),
        spec=spec,
    )


def refines(fine: TimeFeatureFn, coarse: TimeFeatureFn, t_start: float = 0.0, t_end: Optional[float] = None) -> bool:
    """True if every cluster of ``fine`` lies inside a single cluster of ``coarse``.

    Checked at every grid point of ``[t_start, t_end]`` on the finer of the
    two resolutions.
    """
    t_end = min(fine.domain_end, coarse.domain_end) if t_end is None else t_end
    step = min(fine.resolution, coarse.resolution)
    t = _grid(t_start, t_end, step)[:-1]
    f = feature_of(fine, t)
    c = feature_of(coarse, t)
    pairs = np.unique(np.stack([f, c]), axis=1)
    return np.unique(pairs[0]).size == pairs.shape[1]


# --------------------------------------------------------------------------
# calendar features
# --------------------------------------------------------------------------


def _seconds(t) -> np.ndarray:
    return np.floor(np.asarray(t, dtype=float)).astype(np.int64)


def _days(t) -> np.ndarray:
    """Days since 1970-01-01 for timestamps since :data:`EPOCH`."""
    return _seconds(t) // SECONDS_PER_DAY + _EPOCH_DAYS


def _day_of_year(t):
    d = _days(t).astype("datetime64[D]")
    year = d.astype("datetime64[Y]")
    start = year.astype("datetime64[D]")
    doy = (d - start).astype(np.int64) + 1
    days_in_year = ((year + 1).astype("datetime64[D]") - start).astype(np.int64)
    return doy, days_in_year


def _n_equal_seasons(k: int):
    def func(t):
        doy, diy = _day_of_year(t)
        # season s (1-based) holds days d with ceil(d * k / diy) == s
        return (doy * k + diy - 1) // diy - 1

    return func


def _month(t):
    return _days(t).astype("datetime64[D]").astype("datetime64[M]").astype(np.int64) % 12


def _date(t):
    d = _days(t).astype("datetime64[D]")
    return (d - d.astype("datetime64[M]").astype("datetime64[D]")).astype(np.int64)


def _day_of_week(t):
    # 1970-01-01 was a Thursday; Monday is 0
    return (_days(t) + 3) % 7


def _week_of_month(t):
    d = _days(t).astype("datetime64[D]")
    first = d.astype("datetime64[M]").astype("datetime64[D]").astype(np.int64)
    return (_date(t) + (first + 3) % 7) // 7


def _hour(t):
    return (_seconds(t) % SECONDS_PER_DAY) // SECONDS_PER_HOUR


def _holiday(table: Sequence[str]):
    dates = np.array(sorted(set(table)), dtype="datetime64[D]")

    def func(t):
        return np.isin(_days(t).astype("datetime64[D]"), dates).astype(np.int64)

    return func


CALENDAR_KINDS = (
    "n_equal_seasons",
    "month",
    "week_of_month",
    "date",
    "day_of_week",
    "holiday",
    "hour",
    "four_per_day",
    "am_pm",
    "weekday_weekend",
    "constant",
)


def calendar_feature(kind: str, domain_end: float = DEFAULT_DOMAIN_END, **params) -> TimeFeatureFn:
    """Build a calendar time-feature function.

    Parameters
    ----------
    kind: str
        One of :data:`CALENDAR_KINDS`.
        ``n_equal_seasons`` (param ``k``) splits every calendar year into
        ``k`` runs of whole days of near-equal length; day ``d`` of a year
        with ``D`` days falls in season ``ceil(d * k / D)``. With ``k=8``
        season 1 is Jan 1 - Feb 14 and season 8 is Nov 16 - Dec 31.
        ``holiday`` needs ``table``, an iterable of ISO dates.
    domain_end: float
        Largest admissible timestamp.
    """
    spec = {"kind": kind, "params": dict(params)}
    day = float(SECONDS_PER_DAY)
    hour = float(SECONDS_PER_HOUR)
    if kind == "n_equal_seasons":
        k = params.get("k")
        if k is None or int(k) != k or k < 1:
            raise ConfigError(f"n_equal_seasons needs an integer k >= 1, got {k!r}")
        k = int(k)
        spec["params"] = {"k": k}
        return TimeFeatureFn(f"season{k}", k, _n_equal_seasons(k), domain_end, day, spec)
    if kind == "holiday":
        table = params.get("table")
        if not table:
            raise ConfigError("holiday feature needs a calendar table of ISO dates")
        spec["params"] = {"table": sorted(set(table))}
        return TimeFeatureFn("holiday", 2, _holiday(table), domain_end, day, spec)
    if params:
        raise ConfigError(f"calendar feature {kind!r} takes no parameters, got {sorted(params)}")
    simple = {
        "month": (12, _month, day),
        "week_of_month": (6, _week_of_month, day),
        "date": (31, _date, day),
        "day_of_week": (7, _day_of_week, day),
        "hour": (24, _hour, hour),
        "four_per_day": (4, lambda t: _hour(t) // 6, hour),
        "am_pm": (2, lambda t: _hour(t) // 12, hour),
        "weekday_weekend": (2, lambda t: (_day_of_week(t) >= 5).astype(np.int64), day),
        "constant": (1, lambda t: np.zeros(np.shape(t), dtype=np.int64), day),
    }
    if kind not in simple:
        raise ConfigError(f"unknown calendar feature kind {kind!r}; expected one of {CALENDAR_KINDS}")
    card, func, res = simple[kind]
    return TimeFeatureFn(kind, card, func, domain_end, res, spec)


def constant_feature(domain_end: float = DEFAULT_DOMAIN_END) -> TimeFeatureFn:
    return calendar_feature("constant", domain_end=domain_end)


def season_ladder(ks: Iterable[int] = (2, 4, 8, 16), domain_end: float = DEFAULT_DOMAIN_END) -> list:
    """``n_equal_seasons`` features for each ``k`` in ``ks``, coarse to fine."""
    return [calendar_feature("n_equal_seasons", domain_end=domain_end, k=k) for k in ks]


def feature_from_spec(spec, domain_end: float = DEFAULT_DOMAIN_END) -> TimeFeatureFn:
    """Build a feature from its config form.

    ``{"kind": "month"}``, ``{"kind": "n_equal_seasons", "params": {"k": 8}}``
    or ``{"kind": "product", "factors": [spec, spec, ...]}``.
    """
    if isinstance(spec, TimeFeatureFn):
        return spec
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"time feature spec must be a mapping with a 'kind', got {spec!r}")
    if spec["kind"] == "product":
        factors = spec.get("factors") or []
        if len(factors) < 2:
            raise ConfigError("product feature needs at least two factors")
        out = feature_from_spec(factors[0], domain_end)
        for f in factors[1:]:
            out = product_feature(out, feature_from_spec(f, domain_end))
        return out
    return calendar_feature(spec["kind"], domain_end=domain_end, **(spec.get("params") or {}))
