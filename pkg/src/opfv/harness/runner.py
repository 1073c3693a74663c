"""Replicated F-OPE / F-OPL experiments against the synthetic environment's oracle.

Work is split into ``(cell, seed)`` tasks, where a cell is one sweep value.
Each task rebuilds its environment and models from the plain config dict, so
tasks can run in worker processes; results are collected in task order and
are identical for any worker count.
"""
from __future__ import annotations

import copy
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .. import __version__
from ..env import SyntheticEnv, make_env
from ..estimators import (
    dm,
    dr_naive,
    ips,
    opfv,
    opfv_extended,
    period_estimates,
    period_offset,
    forecast_weights,
    phi_forecast_weights,
    season_period_map,
    sndr,
    snips,
)
from ..exceptions import ConfigError, OPFVError
from ..policy import SoftmaxPolicy, TrainConfig, reg_based_policy, train
from ..reward import reward_model_from_config
from ..timefeat import TimeDistribution, feature_from_spec
from ..tuning import CandidateSet, tune_phi
from .config import SEASON8, LADDER, method_label, resolve_targets, seed_list
from .report import ExperimentReport, aggregate

logger = logging.getLogger(__name__)

# failures that are recorded on the row instead of aborting the run
ROW_ERRORS = (OPFVError, ValueError, ArithmeticError, np.linalg.LinAlgError)

TIME_AGNOSTIC = {"kind": "direct", "time_features": []}
PHI_AWARE = {"kind": "direct", "time_features": ["day_of_week", "phi"]}


@dataclass(frozen=True)
class Cell:
    """One sweep value: environment overrides, sample size and target times."""

    axis: str
    value: object
    env: dict
    n: int
    targets: tuple  # ((group, t), ...)
    phi_k: Optional[int] = None


# --------------------------------------------------------------------------
# config resolution
# --------------------------------------------------------------------------


def env_overrides(config: dict) -> tuple:
    env = dict(config.get("env") or {})
    seed = int(env.pop("seed", 0))
    overrides = dict(env.pop("overrides", None) or {})
    overrides.update(env)
    return seed, overrides


def build_cells(config: dict) -> List[Cell]:
    """Expand the sweep block (or the target grid, without one) into cells."""
    env_seed, base = env_overrides(config)
    env = {"seed": env_seed, **base}
    targets = resolve_targets(config["target_times"])
    sweep = config.get("sweep")
    axis = sweep["axis"] if sweep else "target_time"
    values = (sweep or {}).get("values")
    if axis == "target_time":
        if values:
            targets = [(float(t), float(t)) for t in values]
        groups = []
        for g, _ in targets:
            if g not in groups:
                groups.append(g)
        return [Cell(axis, g, env, config["n"], tuple((gg, t) for gg, t in targets if gg == g)) for g in groups]
    cells = []
    for v in values:
        if axis == "lambda":
            cells.append(Cell(axis, v, {**env, "lambda": v}, config["n"], tuple(targets)))
        elif axis == "alpha":
            cells.append(Cell(axis, v, {**env, "alpha": v}, config["n"], tuple(targets)))
        elif axis == "n":
            if int(v) != v or v < 1:
                raise ConfigError(f"n sweep values must be positive integers, got {v!r}")
            cells.append(Cell(axis, v, env, int(v), tuple(targets)))
        elif axis == "phi_cardinality":
            if int(v) != v or v < 1:
                raise ConfigError(f"phi_cardinality sweep values must be positive integers, got {v!r}")
            cells.append(Cell(axis, v, env, config["n"], tuple(targets), int(v)))
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}")
    return cells


def cell_env(cell: Cell) -> SyntheticEnv:
    env = dict(cell.env)
    seed = env.pop("seed", 0)
    return make_env(seed, env)


def _phi(spec, cell: Cell, default=SEASON8):
    if cell.phi_k is not None:
        return feature_from_spec({"kind": "n_equal_seasons", "params": {"k": cell.phi_k}})
    return feature_from_spec(spec if spec is not None else default)


class _Models:
    """Fits each distinct reward-model config once per dataset."""

    def __init__(self, env, dataset):
        self.env = env
        self.dataset = dataset
        self.cache: Dict[str, object] = {}

    def get(self, spec, phi=None):
        spec = copy.deepcopy(spec)
        if isinstance(spec, dict) and "time_features" in spec:
            feats = []
            for f in spec["time_features"]:
                if f == "phi":
                    if phi is None:
                        raise ConfigError("reward model feature 'phi' used where no time feature is defined")
                    feats.append(phi.spec if phi.spec is not None else phi)
                else:
                    feats.append(f)
            spec["time_features"] = feats
        key = json.dumps(spec, sort_keys=True, default=str)
        if key not in self.cache:
            model = reward_model_from_config(spec, self.env, self.dataset.n_actions)
            self.cache[key] = model.fit(self.dataset)
        return self.cache[key]


def _row(cell: Cell, method: str, seed: int, t: float, estimate=float("nan"), detail: str = "", error: str = "",
         variant=None) -> dict:
    row = {
        "sweep_axis": cell.axis,
        "sweep_value": cell.value,
        "method": method,
        "seed": int(seed),
        "estimate": float(estimate),
        "true_value": float("nan"),
        "target_time": float(t),
        "detail": detail,
        "error": error,
    }
    if variant is not None:
        row["_variant"] = variant
    return row


def _error_tag(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


# --------------------------------------------------------------------------
# F-OPE
# --------------------------------------------------------------------------


def _fope_estimator(spec: dict, cell: Cell, seed: int, env, data, models: _Models) -> List[dict]:
    name = spec["name"]
    label = method_label(spec)
    pe = env.evaluation(spec.get("epsilon"))
    pt = TimeDistribution.uniform(0.0, data.horizon)
    targets = [t for _, t in cell.targets]
    rows = []

    def guarded(t, fn, variant=None):
        try:
            value, detail = fn()
            rows.append(_row(cell, label, seed, t, value, detail, variant=variant))
        except ROW_ERRORS as exc:
            rows.append(_row(cell, label, seed, t, error=_error_tag(exc), variant=variant))

    if name in ("ips", "dr"):
        # both query the evaluation policy at logged times, so one value serves every target
        def est():
            if name == "ips":
                return ips(data, pe).value, ""
            return dr_naive(data, pe, models.get(spec.get("reward_model", TIME_AGNOSTIC))).value, ""

        try:
            value, detail = est()
            rows.extend(_row(cell, label, seed, t, value, detail) for t in targets)
        except ROW_ERRORS as exc:
            rows.extend(_row(cell, label, seed, t, error=_error_tag(exc)) for t in targets)
    elif name == "opfv":
        phi = _phi(spec.get("phi"), cell)
        for t in targets:
            guarded(t, lambda t=t: (opfv(data, pe, t, phi, models.get(spec.get("reward_model", PHI_AWARE), phi), pt).value,
                                    phi.id))
    elif name == "opfv_extended":
        phi_r = _phi(spec.get("phi_r", spec.get("phi")), cell)
        phi_x = feature_from_spec(spec.get("phi_x", SEASON8))
        for t in targets:
            guarded(t, lambda t=t: (opfv_extended(data, pe, t, phi_x, phi_r,
                                                  models.get(spec.get("reward_model", PHI_AWARE), phi_r), pt).value,
                                    f"{phi_x.id}|{phi_r.id}"))
    elif name == "opfv_tuned":
        cands = CandidateSet(tuple(feature_from_spec(c) for c in spec.get("candidates", LADDER)))
        for t in targets:
            def est(t=t):
                model = models.get(spec.get("reward_model", PHI_AWARE), cands.phi_inf)
                phi, _ = tune_phi(data, pe, t, cands, model, pt)
                return opfv(data, pe, t, phi, model, pt).value, phi.id

            guarded(t, est)
    elif name in ("prognosticator", "prognosticator_phi"):
        K = int(spec.get("K", 8))
        inner = spec.get("inner", "dr")
        try:
            model = models.get(spec.get("reward_model", TIME_AGNOSTIC)) if inner == "dr" else None
            Y = period_estimates(data, pe, K, inner, model)
        except ROW_ERRORS as exc:
            rows.extend(_row(cell, label, seed, t, error=_error_tag(exc)) for t in targets)
            return rows
        if name == "prognosticator_phi":
            lookup = season_period_map(K, data.horizon, feature_from_spec(spec.get("phi_p", SEASON8)))
            for t in targets:
                guarded(t, lambda t=t: (float(phi_forecast_weights(lookup, K, period_offset(t, data.horizon, K)) @ Y),
                                        f"K={K}"))
        else:
            d_primes = spec.get("d_prime", 3)
            d_primes = list(d_primes) if isinstance(d_primes, (list, tuple)) else [d_primes]
            oracle = spec.get("tune") == "oracle" and len(d_primes) > 1
            for dp in d_primes:
                for t in targets:
                    guarded(t, lambda t=t, dp=dp: (
                        float(forecast_weights(K, period_offset(t, data.horizon, K), int(dp)) @ Y), f"d_prime={dp}"),
                        variant=int(dp) if len(d_primes) > 1 else None)
            if len(d_primes) > 1 and not oracle:
                for r in rows:
                    r["method"] = f"{label}_d{r.pop('_variant')}"
    else:
        raise ConfigError(f"unknown estimator {name!r}")
    return rows


def _fope_task(args) -> List[dict]:
    config, cell, seed = args
    env = cell_env(cell)
    data = env.sample_logged_data(cell.n, seed)
    models = _Models(env, data)
    rows = []
    for spec in config.get("estimators") or []:
        try:
            out = _fope_estimator(spec, cell, seed, env, data, models)
        except ROW_ERRORS as exc:
            label = method_label(spec)
            out = [_row(cell, label, seed, t, error=_error_tag(exc)) for _, t in cell.targets]
        for r in out:
            r["_eps"] = spec.get("epsilon")
        rows.extend(out)
    return rows


# --------------------------------------------------------------------------
# F-OPL
# --------------------------------------------------------------------------


def _train_settings(config: dict, spec: dict) -> dict:
    out = dict(config.get("train") or {})
    for k in ("learning_rate", "n_iter", "pessimism", "hidden", "batch_size"):
        if k in spec:
            out[k] = spec[k]
    return out


def heldout_seed(seed: int) -> int:
    """Data seed of the evaluation sample paired with replicate ``seed``."""
    return int(np.random.SeedSequence([int(seed), 1]).generate_state(1)[0])


def _fopl_task(args) -> List[dict]:
    config, cell, seed = args
    env = cell_env(cell)
    data = env.sample_logged_data(cell.n, seed)
    models = _Models(env, data)
    n_mc = int(config.get("n_mc", 100_000))
    evaluators = list(config.get("evaluators") or [])
    held = None
    if evaluators:
        held = env.sample_logged_data(int(config.get("n_test", 10_000)), heldout_seed(seed))
        held_model = _Models(env, held)
    pt = TimeDistribution.uniform(0.0, data.horizon)
    targets = [t for _, t in cell.targets]
    rows = []
    for spec in config.get("learners") or []:
        name = spec["name"]
        label = method_label(spec)
        ts = _train_settings(config, spec)
        shared = {}
        for t in targets:
            try:
                if name == "reg_based":
                    model = models.get(spec.get("reward_model", TIME_AGNOSTIC))
                    policy = reg_based_policy(model, env.n_actions, float(spec.get("beta", 10.0)), t)
                    detail = f"beta={spec.get('beta', 10.0)}"
                else:
                    init = SoftmaxPolicy.initialize(env.context_dim, env.n_actions, int(ts.get("hidden", 0)), seed)
                    kw = dict(learning_rate=float(ts["learning_rate"]), n_iter=int(ts["n_iter"]),
                              pessimism=float(ts.get("pessimism", 0.0)), seed=seed, batch_size=ts.get("batch_size"))
                    if name in ("ips_pg", "dr_pg") and "policy" in shared:
                        policy = shared["policy"]
                    elif name == "ips_pg":
                        policy = shared["policy"] = train(data, init, TrainConfig(estimator="ips", **kw))[0]
                    elif name == "dr_pg":
                        model = models.get(spec.get("reward_model", TIME_AGNOSTIC))
                        cfg = TrainConfig(estimator="dr", reward_model=model, **kw)
                        policy = shared["policy"] = train(data, init, cfg)[0]
                    elif name == "opfv_pg":
                        phi = _phi(spec.get("phi"), cell)
                        model = models.get(spec.get("reward_model", PHI_AWARE), phi)
                        cfg = TrainConfig(estimator="opfv", t_prime=t, phi=phi, reward_model=model, pt=pt, **kw)
                        policy = train(data, init, cfg)[0]
                    elif name == "prognosticator_pg":
                        cfg = TrainConfig(estimator="prognosticator", t_prime=t, K=int(spec.get("K", 8)),
                                          d_prime=int(spec.get("d_prime", 3)), **kw)
                        policy = train(data, init, cfg)[0]
                    else:
                        raise ConfigError(f"unknown learner {name!r}")
                    detail = ""
                value = env.true_policy_value(policy, t, n_mc, seed=0)[0]
            except ROW_ERRORS as exc:
                rows.append(_row(cell, label, seed, t, error=_error_tag(exc)))
                for ev in evaluators:
                    rows.append(_row(cell, f"{label}:{ev}", seed, t, error=_error_tag(exc)))
                continue
            rows.append(_row(cell, label, seed, t, value, detail))
            for ev in evaluators:
                try:
                    if ev == "snips":
                        est = snips(held, policy).value
                    else:
                        model = held_model.get(spec.get("eval_reward_model", TIME_AGNOSTIC))
                        est = (dm if ev == "dm" else sndr)(held, policy, model).value
                    r = _row(cell, f"{label}:{ev}", seed, t, est, "heldout")
                    r["_truth"] = value
                    rows.append(r)
                except ROW_ERRORS as exc:
                    rows.append(_row(cell, f"{label}:{ev}", seed, t, error=_error_tag(exc)))
    return rows


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------


def n_workers(config: dict) -> int:
    env = os.environ.get("OPFV_NUM_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"OPFV_NUM_WORKERS must be an integer, got {env!r}") from None
    else:
        n = int(config.get("workers", 1))
    return max(1, n)


def _map(fn, tasks, workers: int) -> List[list]:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def true_values(config: dict, cells: List[Cell], mode: str) -> Dict[tuple, float]:
    """Oracle ``V_{t'}`` per (env, target): of the evaluation policy for F-OPE,
    of the greedy oracle policy (``epsilon = 0``) for F-OPL."""
    n_mc = int(config.get("n_mc", 100_000))
    out = {}
    for cell in cells:
        env = cell_env(cell)
        key_env = json.dumps(cell.env, sort_keys=True)
        policies = {}
        if mode == "fope":
            for spec in config.get("estimators") or []:
                policies[spec.get("epsilon")] = env.evaluation(spec.get("epsilon"))
        else:
            policies[0.0] = env.evaluation(0.0)
        for eps, pol in policies.items():
            for _, t in cell.targets:
                key = (key_env, eps, t)
                if key not in out:
                    out[key] = env.true_policy_value(pol, t, n_mc, seed=0)[0]
    return out


def _oracle_select(rows: List[dict]) -> List[dict]:
    """Keep, per (method, sweep value, target), the variant with the lowest MSE over seeds."""
    keep, variants = [], {}
    for r in rows:
        if "_variant" in r:
            variants.setdefault((r["method"], r["sweep_value"], r["target_time"]), []).append(r)
    best = {}
    for key, rs in variants.items():
        mse = {}
        for r in rs:
            if not r["error"]:
                mse.setdefault(r["_variant"], []).append((r["estimate"] - r["true_value"]) ** 2)
        if mse:
            best[key] = min(sorted(mse), key=lambda v: np.mean(mse[v]))
        else:
            best[key] = rs[0]["_variant"]
    for r in rows:
        if "_variant" in r:
            if r["_variant"] != best[(r["method"], r["sweep_value"], r["target_time"])]:
                continue
            r = dict(r)
            r.pop("_variant")
            r["detail"] = f"{r['detail']} (oracle)"
        keep.append(r)
    return keep


def _run(config: dict, mode: str) -> ExperimentReport:
    cells = build_cells(config)
    seeds = seed_list(config)
    tasks = [(config, cell, s) for cell in cells for s in seeds]
    fn = _fope_task if mode == "fope" else _fopl_task
    logger.info("running %d %s tasks", len(tasks), mode)
    results = _map(fn, tasks, n_workers(config))
    truth = true_values(config, cells, mode)
    rows = []
    for (cfg, cell, seed), task_rows in zip(tasks, results):
        key_env = json.dumps(cell.env, sort_keys=True)
        for r in task_rows:
            if mode == "fope":
                r["true_value"] = truth[(key_env, r.pop("_eps"), r["target_time"])]
            elif "_truth" in r:
                r["true_value"] = r.pop("_truth")
            else:
                r["true_value"] = truth[(key_env, 0.0, r["target_time"])]
            rows.append(r)
    rows = _oracle_select(rows)
    meta = {
        "version": __version__,
        "mode": mode,
        "config": config,
        "seeds": seeds,
        "cells": [{"axis": c.axis, "value": c.value, "env": c.env, "n": c.n, "targets": [t for _, t in c.targets]}
                  for c in cells],
        "n_rows": len(rows),
        "n_failed": sum(1 for r in rows if r["error"]),
    }
    return ExperimentReport(rows, aggregate(rows), meta)


def run_fope(config: dict) -> ExperimentReport:
    """Estimate every configured estimator for every seed and sweep value."""
    return _run(config, "fope")


def run_fopl(config: dict) -> ExperimentReport:
    """Train every configured learner per seed and record its true future value.

    ``estimate`` holds the learned policy's oracle value; ``true_value`` holds
    the greedy oracle policy's value, so ``bias2`` measures squared regret.
    Evaluator rows (``learner:dm`` etc.) instead compare the held-out
    estimate with the learned policy's true value.
    """
    return _run(config, "fopl")


def run_sweep(config: dict) -> ExperimentReport:
    if not config.get("sweep"):
        raise ConfigError("sweep mode needs a 'sweep' block")
    return _run(config, config.get("sweep_mode", "fope"))


def run_tune(config: dict) -> List[dict]:
    """Score every candidate feature at every target for the first seed.

    Returns one dict per (target, candidate) with the tuner's score columns.
    """
    tune = config.get("tune") or {}
    seed = seed_list(config)[0]
    env_seed, overrides = env_overrides(config)
    env = make_env(env_seed, overrides)
    data = env.sample_logged_data(config["n"], seed)
    cands = CandidateSet(tuple(feature_from_spec(c) for c in tune.get("candidates", LADDER)))
    model = _Models(env, data).get(tune.get("reward_model", PHI_AWARE), cands.phi_inf)
    pe = env.evaluation()
    out = []
    for _, t in resolve_targets(config["target_times"]):
        _, rows = tune_phi(data, pe, t, cands, model)
        out.extend({"target_time": float(t), **r.as_dict()} for r in rows)
    return out
