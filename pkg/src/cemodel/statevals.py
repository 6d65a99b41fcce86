"""State values (utilities and costs) as predicted means.

A state value table assigns a distribution to each health state and,
optionally, to strategies, groups or patients, and time intervals.  Drawing
it produces :class:`MeanValueParams`: one value per
``(sample, strategy, patient, state, interval)``, with dimensions absent from
the table broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd

from .data import ModelContext
from .params import mom_beta, mom_gamma, mom_lognormal

KEY_COLUMNS = ("state_id", "strategy_id", "grp_id", "patient_id")
DIST_ARGS = {
    "fixed": (("est",), ("mean",)),
    "beta": (("shape1", "shape2"), ("mean", "se")),
    "gamma": (("shape", "rate"), ("shape", "scale"), ("mean", "se")),
    "lognormal": (("meanlog", "sdlog"), ("mean", "se")),
    "normal": (("mean", "sd"), ("mean", "se")),
    "uniform": (("min", "max"),),
}


@dataclass(frozen=True)
class StateValTable:
    """Validated state value table.

    ``data`` has a ``state_id`` column, optional ``strategy_id`` and
    ``grp_id`` or ``patient_id`` columns, an optional ``time_start`` column and
    distribution arguments.  ``dist`` is the table-wide distribution unless a
    ``dist`` column overrides it per row.  Pre-simulated draws are given as
    ``sample`` and ``value`` columns (``dist="custom"``).
    """

    data: pd.DataFrame
    dist: str = "fixed"

    def __post_init__(self):
        df = self.data.copy()
        if "state_id" not in df:
            raise ValueError("state value table needs a state_id column")
        if "grp_id" in df and "patient_id" in df:
            raise ValueError("state values may vary by grp_id or patient_id, not both")
        if "dist" not in df:
            df["dist"] = "custom" if "sample" in df else self.dist
        if "time_start" not in df:
            df["time_start"] = 0.0
        for d in df["dist"].unique():
            if d != "custom" and d not in DIST_ARGS:
                raise ValueError(f"unknown state value distribution {d!r}")
        custom = df["dist"] == "custom"
        if custom.any() and not {"sample", "value"} <= set(df.columns):
            raise ValueError("pre-simulated state values need sample and value columns")
        keys = self.keys
        for _, grp in df.groupby([k for k in keys if k != "time_start"]):
            starts = np.unique(grp["time_start"].to_numpy(float))
            if starts[0] != 0:
                raise ValueError("time_start must begin at 0 within every key group")
        object.__setattr__(self, "data", df)

    @property
    def keys(self) -> list[str]:
        return [k for k in KEY_COLUMNS if k in self.data] + ["time_start"]

    @classmethod
    def from_csv(cls, path, dist: str = "fixed") -> "StateValTable":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"state value file not found: {path}")
        return cls(pd.read_csv(path), dist)


@dataclass(frozen=True)
class MeanValueParams:
    """Predicted mean state values.

    ``values`` has shape ``(n_samples, n_strategies, n_patients, n_states,
    n_intervals)``; interval m covers ``[time_start[m], time_start[m+1])``
    measured in model time, or in time since state entry when
    ``time_reset`` is set.
    """

    values: np.ndarray
    time_start: np.ndarray
    strategy_ids: np.ndarray
    patient_ids: np.ndarray
    time_reset: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 5:
            raise ValueError("values must be (sample, strategy, patient, state, interval)")
        if v.shape[4] != len(self.time_start) or v.shape[1] != len(self.strategy_ids) or v.shape[2] != len(self.patient_ids):
            raise ValueError("value dimensions disagree with ids")
        if not np.all(np.isfinite(v)):
            raise ValueError("state values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "time_start", np.asarray(self.time_start, dtype=float))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_states(self) -> int:
        return self.values.shape[3]

    def interval_index(self, t) -> np.ndarray:
        """Interval containing each time; left-closed, last interval open-ended."""
        return np.searchsorted(self.time_start, t, side="right") - 1


def _row_params(row: pd.Series, dist: str) -> tuple[str, tuple[float, ...]]:
    """Resolve one table row to numpy-ready arguments."""
    for args in DIST_ARGS[dist]:
        if all(a in row.index and pd.notna(row[a]) for a in args):
            vals = tuple(float(row[a]) for a in args)
            if dist == "beta" and args == ("mean", "se"):
                return "beta", mom_beta(*vals)
            if dist == "gamma" and args == ("mean", "se"):
                return "gamma", mom_gamma(*vals)
            if dist == "gamma" and args == ("shape", "scale"):
                return "gamma", (vals[0], 1.0 / vals[1])
            if dist == "lognormal" and args == ("mean", "se"):
                return "lognormal", mom_lognormal(*vals)
            return dist, vals
    raise ValueError(f"{dist} state value needs one of {DIST_ARGS[dist]}")


def _draw_row(dist: str, args: tuple[float, ...], n: int, rng: np.random.Generator) -> np.ndarray:
    if dist == "fixed":
        return np.full(n, args[0])
    if rng is None:
        raise ValueError(f"a random generator is required to draw {dist} state values")
    if dist == "beta":
        return rng.beta(args[0], args[1], n)
    if dist == "gamma":
        return rng.gamma(args[0], 1.0 / args[1], n)
    if dist == "lognormal":
        return rng.lognormal(args[0], args[1], n)
    if dist == "normal":
        return rng.normal(args[0], args[1], n)
    if dist == "uniform":
        return rng.uniform(args[0], args[1], n)
    raise ValueError(f"unknown distribution {dist!r}")


def stateval_draw(
    tbl: StateValTable,
    ctx: ModelContext,
    n: int,
    time_reset: bool = False,
    rng: np.random.Generator | None = None,
) -> MeanValueParams:
    """Draw ``n`` PSA samples of the table and broadcast over the context.

    Rows are drawn in table order (sorted by key) from ``rng``; fixed rows
    never touch the generator.
    """
    df = tbl.data
    keys = tbl.keys
    dims = {"state_id": ctx.states["state_id"].to_numpy()}
    if "strategy_id" in df:
        dims["strategy_id"] = ctx.strategies["strategy_id"].to_numpy()
    if "grp_id" in df:
        dims["grp_id"] = np.unique(ctx.patients["grp_id"])
    if "patient_id" in df:
        dims["patient_id"] = ctx.patients["patient_id"].to_numpy()

    for col, allowed in dims.items():
        extra = set(df[col].unique()) - set(allowed.tolist())
        if extra:
            raise ValueError(f"state value table has unknown {col} values {sorted(extra)}")

    # complete crossing of the non-time keys
    key_cols = [k for k in keys if k != "time_start"]
    present = set(map(tuple, df[key_cols].drop_duplicates().to_numpy().tolist()))
    grid = pd.MultiIndex.from_product([dims[k] for k in key_cols]).tolist()
    missing = [g for g in grid if tuple(g) not in present]
    if missing:
        shown = ", ".join(str(dict(zip(key_cols, m))) for m in missing[:5])
        raise ValueError(f"state value table is missing keys: {shown}")

    custom = df["dist"] == "custom"
    rows = df[~custom].drop_duplicates(subset=keys)
    if len(rows) != int((~custom).sum()):
        raise ValueError("duplicate keys in state value table")
    rows = rows.sort_values(keys, kind="stable")

    starts = np.unique(df["time_start"].to_numpy(float))
    n_strat, n_pat, n_state = ctx.n_strategies, ctx.n_patients, ctx.n_states
    values = np.zeros((n, n_strat, n_pat, n_state, len(starts)))
    assigned = np.zeros((n_strat, n_pat, n_state, len(starts)), dtype=bool)

    def _targets(key_row):
        s_idx = slice(None)
        p_idx = np.arange(n_pat)
        if "strategy_id" in key_row:
            s_idx = int(key_row["strategy_id"]) - 1
        if "grp_id" in key_row:
            p_idx = np.nonzero(ctx.patients["grp_id"].to_numpy() == key_row["grp_id"])[0]
        if "patient_id" in key_row:
            p_idx = ctx.patient_index([key_row["patient_id"]])
        return s_idx, p_idx, int(key_row["state_id"]) - 1

    for _, row in rows.iterrows():
        dist, args = _row_params(row, row["dist"])
        _fill(values, assigned, ctx, row, key_cols, df, starts, _draw_row(dist, args, n, rng), _targets)

    if custom.any():
        cdf = df[custom].sort_values(keys + ["sample"], kind="stable")
        for key, grp in cdf.groupby(keys, sort=True):
            if len(grp) != n or not np.array_equal(grp["sample"].to_numpy(), np.arange(1, n + 1)):
                raise ValueError(f"pre-simulated values for {dict(zip(keys, np.atleast_1d(key)))} need samples 1..{n}")
            _fill(values, assigned, ctx, grp.iloc[0], key_cols, df, starts, grp["value"].to_numpy(float), _targets)

    if not assigned.all():
        raise ValueError("state value table does not cover every state")
    return MeanValueParams(
        values=values,
        time_start=starts,
        strategy_ids=ctx.strategies["strategy_id"].to_numpy(),
        patient_ids=ctx.patients["patient_id"].to_numpy(),
        time_reset=time_reset,
    )


def _fill(values, assigned, ctx, row, key_cols, df, starts, draws, targets) -> None:
    s_idx, p_idx, h = targets(row)
    group = df
    for k in key_cols:
        group = group[group[k] == row[k]]
    t0 = float(row["time_start"])
    gstarts = np.unique(group["time_start"].to_numpy(float))
    later = gstarts[gstarts > t0]
    stop = later[0] if len(later) else np.inf
    for m in np.nonzero((starts >= t0) & (starts < stop))[0]:
        if isinstance(s_idx, slice):
            values[:, :, p_idx, h, m] = draws[:, None, None]
            assigned[:, p_idx, h, m] = True
        else:
            values[:, s_idx, p_idx, h, m] = draws[:, None]
            assigned[s_idx, p_idx, h, m] = True


@dataclass(frozen=True)
class ValueQuery:
    """One state value lookup; ids are 1-based, ``sample`` included."""

    sample: int
    strategy_id: int
    patient_id: int
    state_id: int
    time: float
    time_origin: Literal["model", "state-entry"] | None = None


def predict_stateval(mv: MeanValueParams, q: ValueQuery) -> float:
    """Value of the interval containing ``q.time`` for the queried ids."""
    if q.time < 0:
        raise ValueError("query time must be nonnegative")
    if q.time_origin is not None:
        expected = "state-entry" if mv.time_reset else "model"
        if q.time_origin != expected:
            raise ValueError(f"values are indexed by {expected} time, query uses {q.time_origin}")
    if not 1 <= q.sample <= mv.n_samples:
        raise ValueError(f"sample {q.sample} out of range")
    s = np.nonzero(mv.strategy_ids == q.strategy_id)[0]
    p = np.nonzero(mv.patient_ids == q.patient_id)[0]
    if not len(s):
        raise ValueError(f"strategy_id {q.strategy_id} out of range")
    if not len(p):
        raise ValueError(f"patient_id {q.patient_id} out of range")
    if not 1 <= q.state_id <= mv.n_states:
        raise ValueError(f"state_id {q.state_id} out of range")
    m = int(mv.interval_index(q.time))
    return float(mv.values[q.sample - 1, s[0], p[0], q.state_id - 1, m])
