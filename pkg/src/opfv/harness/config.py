"""Experiment configuration: JSON schema, defaults, dotted overrides and validation."""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Iterable, List, Optional

from ..exceptions import ConfigError
from ..timefeat import SECONDS_PER_DAY, YEAR_SECONDS

MODES = ("fope", "fopl", "tune", "sweep")
SWEEP_AXES = ("target_time", "lambda", "n", "phi_cardinality", "alpha")
ESTIMATOR_NAMES = ("ips", "dr", "opfv", "opfv_tuned", "opfv_extended", "prognosticator", "prognosticator_phi")
LEARNER_NAMES = ("opfv_pg", "ips_pg", "dr_pg", "prognosticator_pg", "reg_based")
EVALUATOR_NAMES = ("dm", "snips", "sndr")

SEASON8 = {"kind": "n_equal_seasons", "params": {"k": 8}}
LADDER = [{"kind": "n_equal_seasons", "params": {"k": k}} for k in (2, 4, 8, 16)]

DEFAULT_ESTIMATORS = [
    {"name": "ips"},
    {"name": "dr"},
    {"name": "prognosticator", "K": 8, "d_prime": [3, 5, 7], "tune": "oracle"},
    {"name": "opfv", "phi": SEASON8},
    {"name": "opfv_tuned", "candidates": LADDER},
]

DEFAULT_LEARNERS = [
    {"name": "reg_based"},
    {"name": "ips_pg"},
    {"name": "dr_pg"},
    {"name": "prognosticator_pg", "d_prime": 3},
    {"name": "opfv_pg", "phi": SEASON8},
]

DEFAULTS = {
    "mode": "fope",
    "label": "",
    "env": {"seed": 0},
    "n": 1000,
    "seeds": 10,
    "seed_offset": 0,
    "target_times": {"kind": "season_midpoints", "year": 2},
    "n_mc": 100_000,
    "estimators": DEFAULT_ESTIMATORS,
    "learners": DEFAULT_LEARNERS,
    "train": {"learning_rate": 1.0, "n_iter": 100, "pessimism": 0.0, "hidden": 0, "batch_size": None},
    "evaluators": [],
    "n_test": 10_000,
    "sweep": None,
    "sweep_mode": "fope",
    "workers": 1,
    "output": {"dir": "out", "plot": False},
}


def season_day_ranges(k: int = 8, days_in_year: int = 365):
    """1-based ``(first_day, last_day)`` of each of ``k`` equal seasons."""
    out = []
    for s in range(1, k + 1):
        lo = (s - 1) * days_in_year // k + 1
        hi = s * days_in_year // k
        out.append((lo, hi))
    return out


def season_midpoints(year: int = 2, per_season: int = 1):
    """Target timestamps at noon on evenly spaced days inside each Year-``year`` season.

    Returns ``[(season, t), ...]`` with 1-based seasons.
    """
    base = (year - 1) * YEAR_SECONDS
    out = []
    for s, (lo, hi) in enumerate(season_day_ranges(), start=1):
        span = hi - lo + 1
        for j in range(per_season):
            day = lo + (2 * j + 1) * span // (2 * per_season)
            out.append((s, base + (day - 1) * SECONDS_PER_DAY + SECONDS_PER_DAY // 2))
    return out


def resolve_targets(spec) -> List[tuple]:
    """``[(group, t), ...]``; group is the season for generated grids, else the timestamp itself."""
    if isinstance(spec, (int, float)):
        return [(float(spec), float(spec))]
    if isinstance(spec, list):
        return [(float(t), float(t)) for t in spec]
    if isinstance(spec, dict) and spec.get("kind") == "season_midpoints":
        return [(s, float(t)) for s, t in season_midpoints(spec.get("year", 2), spec.get("per_season", 1))]
    raise ConfigError(f"cannot resolve target_times {spec!r}")


def _deep_update(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = copy.deepcopy(v)
    return base


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value`` (value parsed as JSON when possible) in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key=value")
    key, text = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {assignment!r} has an empty key")
    node = config
    for p in parts[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError):
                raise ConfigError(f"override path {key!r}: bad list index {p!r}") from None
            continue
        if node.get(p) is None:
            node[p] = {}
        node = node[p]
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"override path {key!r} crosses a non-mapping value")
    if isinstance(node, list):
        try:
            node[int(parts[-1])] = _parse_value(text)
        except (ValueError, IndexError):
            raise ConfigError(f"override path {key!r}: bad list index") from None
    else:
        node[parts[-1]] = _parse_value(text)
    return config


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (), base: Optional[dict] = None) -> dict:
    """Read a JSON config (if given), merge onto defaults, apply overrides, validate."""
    config = copy.deepcopy(DEFAULTS)
    if base:
        _deep_update(config, base)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        _deep_update(config, user)
        # lists replace rather than merge
        for key in ("estimators", "learners", "evaluators"):
            if key in user:
                config[key] = copy.deepcopy(user[key])
    for a in overrides:
        apply_override(config, a)
    return validate_config(config)


def seed_list(config: dict) -> List[int]:
    seeds = config["seeds"]
    if isinstance(seeds, int):
        return list(range(config.get("seed_offset", 0), config.get("seed_offset", 0) + seeds))
    return [int(s) for s in seeds]


def validate_config(config: dict) -> dict:
    if config.get("mode") not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {config.get('mode')!r}")
    seeds = config.get("seeds")
    if isinstance(seeds, bool) or not (isinstance(seeds, int) and seeds >= 1 or isinstance(seeds, list) and seeds):
        raise ConfigError("seeds must be a positive count or a non-empty list")
    if not isinstance(config.get("n"), int) or config["n"] < 1:
        raise ConfigError("n must be a positive integer")
    if not isinstance(config.get("env"), dict):
        raise ConfigError("env must be a mapping")
    resolve_targets(config["target_times"])
    for spec in config.get("estimators") or []:
        if not isinstance(spec, dict) or spec.get("name") not in ESTIMATOR_NAMES:
            raise ConfigError(f"unknown estimator spec {spec!r}; names: {ESTIMATOR_NAMES}")
    for spec in config.get("learners") or []:
        if not isinstance(spec, dict) or spec.get("name") not in LEARNER_NAMES:
            raise ConfigError(f"unknown learner spec {spec!r}; names: {LEARNER_NAMES}")
    for name in config.get("evaluators") or []:
        if name not in EVALUATOR_NAMES:
            raise ConfigError(f"unknown evaluator {name!r}; names: {EVALUATOR_NAMES}")
    sweep = config.get("sweep")
    if config["mode"] == "sweep" and not sweep:
        raise ConfigError("sweep mode needs a 'sweep' block")
    if sweep:
        if sweep.get("axis") not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {sweep.get('axis')!r}")
        if sweep["axis"] != "target_time" and not sweep.get("values"):
            raise ConfigError("sweep values must be non-empty")
    if config.get("sweep_mode") not in ("fope", "fopl"):
        raise ConfigError("sweep_mode must be 'fope' or 'fopl'")
    labels = [method_label(s) for s in (config.get("estimators") or [])] + [
        method_label(s) for s in (config.get("learners") or [])]
    dup = {x for x in labels if labels.count(x) > 1}
    if dup:
        raise ConfigError(f"duplicate method labels {sorted(dup)}; give each spec a distinct 'label'")
    return config


def method_label(spec: dict) -> str:
    return spec.get("label") or spec["name"]
