"""Immutable logged bandit data and its CSV/JSON serialization."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError, SupportError


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    """Records ``(x_i, t_i, a_i, r_i, pi_0(a_i | x_i, t_i))`` collected on ``[0, horizon]``.

    Parameters
    ----------
    context: array-like of shape (n, d_x)
    timestamp: array-like of shape (n,)
        Seconds since the epoch.
    action: array-like of shape (n,)
    reward: array-like of shape (n,)
    pscore: array-like of shape (n,)
        Logging propensity of the logged action; must lie in (0, 1].
    n_actions: int
    horizon: float
        End ``T`` of the logging window.
    meta: dict
        Free-form metadata (seeds, env config) carried into the JSON sidecar.
    """

    context: np.ndarray
    timestamp: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    pscore: np.ndarray
    n_actions: int
    horizon: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.context, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        if n < 1:
            raise ConfigError("a logged dataset needs at least one record")
        t = np.asarray(self.timestamp, dtype=float).ravel()
        a = np.asarray(self.action).ravel()
        r = np.asarray(self.reward, dtype=float).ravel()
        p = np.asarray(self.pscore, dtype=float).ravel()
        for name, arr in (("timestamp", t), ("action", a), ("reward", r), ("pscore", p)):
            if arr.shape[0] != n:
                raise ConfigError(f"{name} has {arr.shape[0]} entries, expected {n}")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ConfigError("context, timestamp and reward must be finite")
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise ConfigError("actions must be integers")
        a = a.astype(np.int64)
        n_actions = int(self.n_actions)
        if n_actions < 1 or a.min() < 0 or a.max() >= n_actions:
            raise ConfigError(f"actions must lie in [0, {n_actions})")
        if not np.all((p > 0) & (p <= 1)):
            raise SupportError("every logging propensity must lie in (0, 1]")
        horizon = float(self.horizon)
        if t.min() < 0 or t.max() > horizon:
            raise ConfigError(f"timestamps must lie in [0, {horizon}]")
        object.__setattr__(self, "context", _frozen(x, float))
        object.__setattr__(self, "timestamp", _frozen(t, float))
        object.__setattr__(self, "action", _frozen(a, np.int64))
        object.__setattr__(self, "reward", _frozen(r, float))
        object.__setattr__(self, "pscore", _frozen(p, float))
        object.__setattr__(self, "n_actions", n_actions)
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n_rounds(self) -> int:
        return self.reward.shape[0]

    @property
    def context_dim(self) -> int:
        return self.context.shape[1]

    def __len__(self) -> int:
        return self.n_rounds

    def subset(self, index) -> "LoggedDataset":
        """Dataset restricted to ``index`` (boolean mask or integer indices)."""
        index = np.asarray(index)
        return LoggedDataset(
            self.context[index],
            self.timestamp[index],
            self.action[index],
            self.reward[index],
            self.pscore[index],
            self.n_actions,
            self.horizon,
            self.meta,
        )

    def replace(self, **changes) -> "LoggedDataset":
        fields = dict(
            context=self.context,
            timestamp=self.timestamp,
            action=self.action,
            reward=self.reward,
            pscore=self.pscore,
            n_actions=self.n_actions,
            horizon=self.horizon,
            meta=self.meta,
        )
        fields.update(changes)
        return LoggedDataset(**fields)

    # ---- IO --------------------------------------------------------------

    def to_csv(self, path) -> None:
        """Write ``t,x_0..x_{d-1},a,r,pscore`` rows plus a ``.json`` metadata sidecar."""
        path = Path(path)
        header = ["t"] + [f"x_{j}" for j in range(self.context_dim)] + ["a", "r", "pscore"]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(self.n_rounds):
                w.writerow(
                    [repr(float(self.timestamp[i]))]
                    + [repr(float(v)) for v in self.context[i]]
                    + [int(self.action[i]), repr(float(self.reward[i])), repr(float(self.pscore[i]))]
                )
        sidecar = {
            "n_rounds": self.n_rounds,
            "n_actions": self.n_actions,
            "context_dim": self.context_dim,
            "horizon": self.horizon,
            "meta": self.meta,
        }
        _sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path, n_actions: Optional[int] = None, horizon: Optional[float] = None) -> "LoggedDataset":
        path = Path(path)
        side = _sidecar_path(path)
        meta = {}
        if side.exists():
            info = json.loads(side.read_text())
            n_actions = info["n_actions"] if n_actions is None else n_actions
            horizon = info["horizon"] if horizon is None else horizon
            meta = info.get("meta", {})
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ConfigError(f"{path} holds no records")
        header, body = rows[0], np.array(rows[1:], dtype=float)
        col = {name: j for j, name in enumerate(header)}
        xcols = [col[h] for h in header if h.startswith("x_")]
        if n_actions is None:
            n_actions = int(body[:, col["a"]].max()) + 1
        if horizon is None:
            horizon = float(body[:, col["t"]].max())
        return cls(
            body[:, xcols],
            body[:, col["t"]],
            body[:, col["a"]],
            body[:, col["r"]],
            body[:, col["pscore"]],
            n_actions,
            horizon,
            meta,
        )


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")
