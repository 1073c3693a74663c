"""Data-driven choice of the time feature used by OPFV.

Each candidate ``phi`` is scored by ``bias_hat^2 + var_hat`` where
``bias_hat = opfv(phi) - opfv(phi_finest)`` and ``var_hat`` is the sample
variance of the per-record terms over ``n``. The same dataset is used for
tuning and for the final estimate.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .dataset import LoggedDataset
from .estimators import EstimateResult, opfv
from .exceptions import ConfigError, SupportError
from .timefeat import TimeDistribution, TimeFeatureFn, marginal_prob, refines


@dataclass(frozen=True)
class CandidateSet:
    """Ordered candidate features and the index of the finest one.

    ``finest`` defaults to the candidate with the largest cardinality and
    must refine every other candidate (checked on the time grid of
    ``[0, check_end]``).
    """

    candidates: tuple
    finest: int = -1
    check_end: Optional[float] = None

    def __post_init__(self):
        cands = tuple(self.candidates)
        if not cands:
            raise ConfigError("candidate set is empty")
        object.__setattr__(self, "candidates", cands)
        finest = self.finest
        if finest < 0:
            finest = int(np.argmax([c.cardinality for c in cands]))
        if not 0 <= finest < len(cands):
            raise ConfigError(f"finest index {self.finest} out of range")
        object.__setattr__(self, "finest", finest)
        fine = cands[finest]
        for c in cands:
            if c is not fine and not refines(fine, c, 0.0, self.check_end):
                raise ConfigError(f"finest candidate {fine.id!r} does not refine {c.id!r}")

    @property
    def phi_inf(self) -> TimeFeatureFn:
        return self.candidates[self.finest]


@dataclass(frozen=True)
class ScoreRow:
    phi_id: str
    cardinality: int
    bias_hat: float
    var_hat: float
    score: float
    selected: bool

    def as_dict(self) -> dict:
        return {
            "phi_id": self.phi_id,
            "cardinality": self.cardinality,
            "bias_hat": self.bias_hat,
            "var_hat": self.var_hat,
            "score": self.score,
            "selected": self.selected,
        }


SCORE_COLUMNS = ("phi_id", "cardinality", "bias_hat", "var_hat", "score", "selected")


def _variance_of(result: EstimateResult) -> float:
    z = result.per_sample_terms
    if z is None or z.shape[0] < 2:
        raise ConfigError("variance estimate needs at least two records")
    return float(z.var(ddof=1) / z.shape[0])


def estimate_bias(dataset: LoggedDataset, pi_e, t_prime: float, phi: TimeFeatureFn, phi_inf: TimeFeatureFn,
                  reward_model, pt: Optional[TimeDistribution] = None) -> float:
    """``opfv(phi) - opfv(phi_inf)`` on the same data."""
    return opfv(dataset, pi_e, t_prime, phi, reward_model, pt).value - opfv(
        dataset, pi_e, t_prime, phi_inf, reward_model, pt).value


def estimate_variance(dataset: LoggedDataset, pi_e, t_prime: float, phi: TimeFeatureFn, reward_model,
                      pt: Optional[TimeDistribution] = None) -> float:
    """Sample variance of the OPFV per-record terms divided by ``n``."""
    if dataset.n_rounds < 2:
        raise ConfigError("variance estimate needs at least two records")
    return _variance_of(opfv(dataset, pi_e, t_prime, phi, reward_model, pt))


def tune_phi(dataset: LoggedDataset, pi_e, t_prime: float, candidates, reward_model,
             pt: Optional[TimeDistribution] = None):
    """Pick the candidate minimizing ``bias_hat^2 + var_hat``.

    Candidates with ``p(phi(t')) = 0`` are dropped. Ties go to the smaller
    cardinality. Returns ``(phi, rows)`` with one :class:`ScoreRow` per
    feasible candidate, in candidate order.
    """
    if not isinstance(candidates, CandidateSet):
        candidates = CandidateSet(tuple(candidates))
    pt = TimeDistribution.uniform(0.0, dataset.horizon) if pt is None else pt
    feasible = [c for c in candidates.candidates if marginal_prob(c, t_prime, pt) > 0.0]
    if not feasible:
        raise SupportError(f"no candidate time feature has support at t'={t_prime}")
    phi_inf = candidates.phi_inf
    if phi_inf not in feasible:
        # the bias reference must itself be estimable: fall back to the finest feasible candidate
        phi_inf = max(feasible, key=lambda c: c.cardinality)
        warnings.warn(f"finest candidate {candidates.phi_inf.id!r} has no support at t'={t_prime}; "
                      f"using {phi_inf.id!r} as the bias reference", RuntimeWarning, stacklevel=2)
    results = {id(c): opfv(dataset, pi_e, t_prime, c, reward_model, pt) for c in feasible}
    ref = results[id(phi_inf)].value
    scored = []
    for c in feasible:
        res = results[id(c)]
        bias = res.value - ref
        var = _variance_of(res)
        scored.append((c, bias, var, bias * bias + var))
    best = min(s[3] for s in scored)
    winner = min((s for s in scored if s[3] <= best), key=lambda s: s[0].cardinality)[0]
    rows = [ScoreRow(c.id, c.cardinality, b, v, s, c is winner) for c, b, v, s in scored]
    return winner, rows
