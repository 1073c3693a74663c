"""Experiment reports: long rows, MSE/bias/variance aggregation and CSV/JSON emission."""
from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

LONG_COLUMNS = ("sweep_axis", "sweep_value", "method", "seed", "estimate", "true_value", "target_time", "detail",
                "error")
AGG_COLUMNS = ("method", "sweep_value", "mse", "bias2", "var", "se_mse", "n_seeds", "se_bias2", "se_var",
               "mean_estimate", "mean_true", "n_failed")


@dataclass
class ExperimentReport:
    rows: List[dict] = field(default_factory=list)
    agg: List[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def method_rows(self, method: str, sweep_value=None) -> List[dict]:
        return [r for r in self.rows if r["method"] == method and (sweep_value is None or r["sweep_value"] == sweep_value)]

    def agg_row(self, method: str, sweep_value=None) -> dict:
        for r in self.agg:
            if r["method"] == method and (sweep_value is None or r["sweep_value"] == sweep_value):
                return r
        raise KeyError((method, sweep_value))


def aggregate(rows: List[dict]) -> List[dict]:
    """One row per (method, sweep value) with the error decomposition.

    Errors ``e = estimate - true_value`` are grouped by target time. Per target,
    ``bias2 = mean(e)^2``, ``var`` is the population variance and
    ``mse = mean(e^2)``; the reported values average these over target times,
    so ``mse = bias2 + var`` holds exactly up to rounding. Failed rows
    (non-empty ``error``) are excluded and counted in ``n_failed``.
    """
    groups = OrderedDict()
    for r in rows:
        groups.setdefault((r["method"], r["sweep_value"]), []).append(r)
    out = []
    for (method, value), rs in groups.items():
        ok = [r for r in rs if not r.get("error")]
        by_target = OrderedDict()
        for r in ok:
            by_target.setdefault(r["target_time"], []).append(r)
        mse = bias2 = var = 0.0
        se_b2_sq = se_var_sq = 0.0
        per_seed = {}
        T = len(by_target)
        for t, trs in by_target.items():
            e = np.array([r["estimate"] - r["true_value"] for r in trs], dtype=float)
            S = e.shape[0]
            b = float(e.mean())
            v = float(np.mean((e - b) ** 2))
            mse += float(np.mean(e**2))
            bias2 += b * b
            var += v
            if S > 1:
                sd = float(e.std(ddof=1))
                se_b2_sq += (2.0 * abs(b) * sd / math.sqrt(S)) ** 2
                se_var_sq += (v * math.sqrt(2.0 / (S - 1))) ** 2
            for r, ei in zip(trs, e):
                per_seed.setdefault(r["seed"], []).append(ei * ei)
        if T:
            mse, bias2, var = mse / T, bias2 / T, var / T
            full = [np.mean(v) for v in per_seed.values() if len(v) == T]
            se_mse = float(np.std(full, ddof=1) / math.sqrt(len(full))) if len(full) > 1 else float("nan")
            se_b2 = math.sqrt(se_b2_sq) / T
            se_v = math.sqrt(se_var_sq) / T
            mean_est = float(np.mean([r["estimate"] for r in ok]))
            mean_true = float(np.mean([r["true_value"] for r in ok]))
        else:
            mse = bias2 = var = se_mse = se_b2 = se_v = mean_est = mean_true = float("nan")
        out.append({
            "method": method,
            "sweep_value": value,
            "mse": mse,
            "bias2": bias2,
            "var": var,
            "se_mse": se_mse,
            "n_seeds": len(per_seed),
            "se_bias2": se_b2,
            "se_var": se_v,
            "mean_estimate": mean_est,
            "mean_true": mean_true,
            "n_failed": len(rs) - len(ok),
        })
    return out


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path: Path, columns, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def emit_report(report: ExperimentReport, path) -> dict:
    """Write ``long.csv``, ``agg.csv`` and ``meta.json`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {"long": out / "long.csv", "agg": out / "agg.csv", "meta": out / "meta.json"}
    write_csv(files["long"], LONG_COLUMNS, report.rows)
    write_csv(files["agg"], AGG_COLUMNS, report.agg)
    files["meta"].write_text(json.dumps(report.meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return files


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def read_long_csv(path) -> List[dict]:
    """Parse ``long.csv`` back into row dicts (numbers as floats, seed as int)."""
    rows = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                "sweep_axis": r["sweep_axis"],
                "sweep_value": _maybe_float(r["sweep_value"]),
                "method": r["method"],
                "seed": int(r["seed"]),
                "estimate": _maybe_float(r["estimate"]),
                "true_value": _maybe_float(r["true_value"]),
                "target_time": _maybe_float(r["target_time"]),
                "detail": r["detail"],
                "error": r["error"],
            })
    return rows


def _maybe_float(s):
    try:
        return float(s)
    except ValueError:
        return s
