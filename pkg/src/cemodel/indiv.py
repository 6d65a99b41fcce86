"""Individual-level continuous-time state transition model.

Trajectories are simulated with competing latent event times: at each jump
every permitted transition out of the current state draws a time and the
earliest wins.  Uniform variates come from a counter-based generator indexed
by (input row, sample, jump, transition), so results do not depend on how
work is split across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Mapping

import numpy as np
import pandas as pd

from .data import TransitionMatrix
from .dists import Distribution
from .outcomes import StateProbs, check_discount_rates, values_frame
from .params import SurvivalParams
from .rng import CounterRNG
from .statevals import MeanValueParams

DISPROG_COLUMNS = ["sample", "strategy_id", "patient_id", "grp_id", "from", "to", "final", "time_start", "time_stop"]
_CHUNK_UNITS = 1 << 17


@dataclass(frozen=True)
class TransitionModel:
    """Transition-specific survival models plus simulation caps.

    ``start_age`` names an input-data column (or gives a constant) used with
    ``max_age``: a patient still alive at ``max_age`` dies then.
    """

    tmat: TransitionMatrix
    params: Mapping[int, SurvivalParams]
    clock: Literal["reset", "forward"] = "reset"
    start_age: str | float | None = None
    max_age: float | None = None
    max_t: float = 100.0

    def __post_init__(self):
        if self.clock not in ("reset", "forward"):
            raise ValueError(f"clock must be 'reset' or 'forward', not {self.clock!r}")
        wanted = {t for t, _, _ in self.tmat.transitions()}
        if set(self.params) != wanted:
            missing = sorted(wanted - set(self.params))
            extra = sorted(set(self.params) - wanted)
            raise ValueError(f"one model per transition is required (missing {missing}, unexpected {extra})")
        if not self.max_t > 0:
            raise ValueError("max_t must be positive")
        if self.max_age is not None:
            if not self.max_age > 0:
                raise ValueError("max_age must be positive")
            if self.start_age is None:
                raise ValueError("max_age requires start_age")
        object.__setattr__(self, "params", dict(self.params))

    def age_cap(self, input_data: pd.DataFrame) -> np.ndarray:
        """Model time at which each input row reaches ``max_age``."""
        n = len(input_data)
        if self.max_age is None:
            return np.full(n, np.inf)
        if isinstance(self.start_age, str):
            if self.start_age not in input_data:
                raise ValueError(f"input data lacks the start age column {self.start_age!r}")
            age = input_data[self.start_age].to_numpy(float)
        else:
            age = np.full(n, float(self.start_age))
        return np.maximum(self.max_age - age, 0.0)


@dataclass(frozen=True)
class DiseaseProgress:
    """Simulated trajectories plus the patient weights needed to average them."""

    data: pd.DataFrame
    weights: pd.DataFrame
    n_states: int
    n_samples: int
    max_t: float
    strategy_ids: np.ndarray = field(repr=False, default=None)

    def to_frame(self) -> pd.DataFrame:
        return self.data


def _row_weights(weights: pd.DataFrame) -> pd.DataFrame:
    """patient_wt normalized to sum to 1 within (strategy, group)."""
    w = weights.copy()
    tot = w.groupby(["strategy_id", "grp_id"])["patient_wt"].transform("sum")
    if np.any(tot <= 0):
        raise ValueError("patient weights within a group must sum to a positive number")
    w["w"] = w["patient_wt"] / tot
    return w


def _simulate_chunk(tm: TransitionModel, pars, age_cap, rng: CounterRNG, s0: int, s1: int, n_rows: int):
    n_units = (s1 - s0) * n_rows
    su = np.repeat(np.arange(s0, s1), n_rows)
    ru = np.tile(np.arange(n_rows), s1 - s0)
    state = np.ones(n_units, dtype=np.int64)
    t = np.zeros(n_units)
    cap_age = age_cap[ru]
    cap = np.minimum(cap_age, tm.max_t)
    death = tm.tmat.n_states
    active = np.arange(n_units)
    out = []
    jump = 0
    while active.size:
        cur = state[active]
        best_t = np.full(active.size, np.inf)
        best_to = cur.copy()
        for r in np.unique(cur):
            pos = np.nonzero(cur == r)[0]
            units = active[pos]
            for trans, dest in sorted(tm.tmat.from_state(int(r)), key=lambda x: x[1]):
                p = pars[trans]
                d = Distribution(p[0], {k: v[su[units], ru[units]] for k, v in p[1].items()})
                u = rng.uniform(ru[units], su[units], jump, trans)
                with np.errstate(divide="ignore", over="ignore"):
                    if tm.clock == "reset":
                        tt = t[units] + d.sample(u)
                    else:
                        tt = d.sample_truncated(t[units], u, strict=False)
                win = tt < best_t[pos]
                best_t[pos] = np.where(win, tt, best_t[pos])
                best_to[pos] = np.where(win, dest, best_to[pos])
        c = cap[active]
        event = best_t < c
        to_cap = np.where(cap_age[active] <= tm.max_t, death, cur)
        to = np.where(event, best_to, to_cap)
        stop = np.where(event, best_t, c)
        final = (~event) | (to == death)
        out.append((su[active], ru[active], np.full(active.size, jump), cur, to, final, t[active], stop))
        state[active] = to
        t[active] = stop
        active = active[~final]
        jump += 1
    return [np.concatenate(col) for col in zip(*out)]


def sim_disease(
    tm: TransitionModel,
    input_data: pd.DataFrame,
    n_samples: int,
    seed: int,
    threads: int = 1,
) -> DiseaseProgress:
    """Simulate one trajectory per (sample, input row)."""
    for col in ("strategy_id", "patient_id"):
        if col not in input_data:
            raise ValueError(f"input data lacks {col}")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    data = input_data.reset_index(drop=True)
    if "grp_id" not in data:
        data = data.assign(grp_id=1)
    if "patient_wt" not in data:
        data = data.assign(patient_wt=1.0)
    n_rows = len(data)
    pars = {
        trans: (sp.family, sp.resize(n_samples).predict(data))
        for trans, sp in tm.params.items()
    }
    for family, p in pars.values():
        Distribution(family, p)  # fail on invalid parameters before simulating
    age_cap = tm.age_cap(data)
    rng = CounterRNG(seed, "disease")

    per_chunk = max(1, _CHUNK_UNITS // max(n_rows, 1))
    bounds = [(s, min(s + per_chunk, n_samples)) for s in range(0, n_samples, per_chunk)]
    work = lambda b: _simulate_chunk(tm, pars, age_cap, rng, b[0], b[1], n_rows)  # noqa: E731
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    su, ru, jump, frm, to, final, t0, t1 = (np.concatenate(col) for col in zip(*parts))
    order = np.lexsort((jump, ru, su))
    su, ru = su[order], ru[order]
    df = pd.DataFrame({
        "sample": su + 1,
        "strategy_id": data["strategy_id"].to_numpy()[ru],
        "patient_id": data["patient_id"].to_numpy()[ru],
        "grp_id": data["grp_id"].to_numpy()[ru],
        "from": frm[order],
        "to": to[order],
        "final": final[order].astype(np.int64),
        "time_start": t0[order],
        "time_stop": t1[order],
    })
    weights = data[["strategy_id", "patient_id", "grp_id", "patient_wt"]].copy()
    return DiseaseProgress(
        df, weights, tm.tmat.n_states, n_samples, tm.max_t, np.unique(data["strategy_id"].to_numpy())
    )


def _keys(dp: DiseaseProgress):
    """Per-row (sample, strategy, group) cell index and normalized weight."""
    df = dp.data
    w = _row_weights(dp.weights)
    strategies = np.unique(w["strategy_id"].to_numpy())
    grps = np.unique(w["grp_id"].to_numpy())
    lookup = w.set_index(["strategy_id", "patient_id"])["w"]
    idx = pd.MultiIndex.from_arrays([df["strategy_id"], df["patient_id"]])
    wt = lookup.reindex(idx).to_numpy(float)
    if np.any(np.isnan(wt)):
        raise ValueError("trajectories reference patients without weights")
    s = df["sample"].to_numpy() - 1
    st = np.searchsorted(strategies, df["strategy_id"].to_numpy())
    g = np.searchsorted(grps, df["grp_id"].to_numpy())
    cell = (s * len(strategies) + st) * len(grps) + g
    return cell, wt, strategies, grps


def sim_stateprobs_indiv(dp: DiseaseProgress, t_grid) -> StateProbs:
    """Weighted share of patients in each state at each grid time, by group."""
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("t_grid must be a strictly increasing 1-d array")
    if grid[0] < 0:
        raise ValueError("t_grid must be nonnegative")
    df = dp.data
    cell, wt, strategies, grps = _keys(dp)
    n_t, h = grid.size, dp.n_states
    n_cells = dp.n_samples * len(strategies) * len(grps)

    frm = df["from"].to_numpy() - 1
    to = df["to"].to_numpy() - 1
    final = df["final"].to_numpy().astype(bool)
    t0 = df["time_start"].to_numpy()
    t1 = df["time_stop"].to_numpy()
    lo = np.searchsorted(grid, t0, side="left")
    hi = np.searchsorted(grid, t1, side="left")
    censored = final & (to != h - 1)
    hi = np.where(censored, n_t, hi)

    width = n_t + 1
    diff = np.zeros(n_cells * h * width)
    base = (cell * h + frm) * width
    diff += np.bincount(base + lo, wt, diff.size)
    diff -= np.bincount(base + hi, wt, diff.size)
    dead = final & (to == h - 1)
    dbase = (cell[dead] * h + (h - 1)) * width
    diff += np.bincount(dbase + hi[dead], wt[dead], diff.size)
    probs = np.cumsum(diff.reshape(n_cells, h, width), axis=2)[:, :, :n_t]
    probs = probs.reshape(dp.n_samples, len(strategies), len(grps), h, n_t).transpose(0, 1, 2, 4, 3)
    return StateProbs(np.clip(probs, 0.0, 1.0), grid, strategies, grps, grps, None, unit="grp")


def _discounted_length(lo, hi, r: float) -> np.ndarray:
    if r == 0:
        return hi - lo
    return np.exp(-r * lo) * -np.expm1(-r * (hi - lo)) / r


def sim_values_indiv(dp: DiseaseProgress, vals: MeanValueParams, dr) -> np.ndarray:
    """Exactly integrated discounted state values.

    Returns ``(sample, strategy, grp, state, dr)`` totals for non-death
    states, averaged over patients with normalized ``patient_wt``.
    """
    drs = check_discount_rates(dr)
    df = dp.data
    cell, wt, strategies, grps = _keys(dp)
    h = dp.n_states - 1
    if vals.n_samples != dp.n_samples:
        raise ValueError(f"state values have {vals.n_samples} samples; trajectories have {dp.n_samples}")
    if vals.n_states < h:
        raise ValueError(f"missing state values: {vals.n_states} states valued, {h} needed")
    sid = df["strategy_id"].to_numpy()
    pid = df["patient_id"].to_numpy()
    st = np.searchsorted(vals.strategy_ids, sid)
    pt = np.searchsorted(vals.patient_ids, pid)
    st_c, pt_c = np.minimum(st, len(vals.strategy_ids) - 1), np.minimum(pt, len(vals.patient_ids) - 1)
    if np.any(vals.strategy_ids[st_c] != sid) or np.any(vals.patient_ids[pt_c] != pid):
        raise ValueError("state values do not cover every simulated strategy and patient")
    s = df["sample"].to_numpy() - 1
    frm = df["from"].to_numpy() - 1
    a = df["time_start"].to_numpy()
    b = df["time_stop"].to_numpy()
    offset = a if vals.time_reset else np.zeros_like(a)
    starts = np.append(vals.time_start, np.inf)

    n_cells = dp.n_samples * len(strategies) * len(grps)
    out = np.zeros((len(drs), n_cells * h))
    target = cell * h + frm
    for m in range(len(vals.time_start)):
        lo = np.maximum(a, offset + starts[m])
        hi = np.minimum(b, offset + starts[m + 1])
        keep = hi > lo
        if not keep.any():
            continue
        z = vals.values[s[keep], st_c[keep], pt_c[keep], frm[keep], m] * wt[keep]
        for k, r in enumerate(drs):
            out[k] += np.bincount(target[keep], z * _discounted_length(lo[keep], hi[keep], r), n_cells * h)
    return out.reshape(len(drs), dp.n_samples, len(strategies), len(grps), h).transpose(1, 2, 3, 4, 0)


class IndivCtstm:
    """Individual-level model: trajectories first, then probabilities and values."""

    def __init__(
        self,
        trans: TransitionModel,
        input_data: pd.DataFrame,
        n_samples: int,
        seed: int,
        utility: MeanValueParams | None = None,
        costs: Mapping[str, MeanValueParams] | None = None,
    ):
        self.trans = trans
        self.input_data = input_data
        self.n_samples = n_samples
        self.seed = seed
        self.utility = utility
        self.costs = dict(costs or {})
        self.disprog_: DiseaseProgress | None = None

    def sim_disease(self, threads: int = 1) -> DiseaseProgress:
        self.disprog_ = sim_disease(self.trans, self.input_data, self.n_samples, self.seed, threads)
        return self.disprog_

    def _need_disprog(self) -> DiseaseProgress:
        if self.disprog_ is None:
            raise RuntimeError("call sim_disease() first")
        return self.disprog_

    def sim_stateprobs(self, t_grid) -> StateProbs:
        return sim_stateprobs_indiv(self._need_disprog(), t_grid)

    def sim_qalys(self, dr=(0.03,), lys: bool = True) -> pd.DataFrame:
        if self.utility is None:
            raise ValueError("a utility model is required to simulate QALYs")
        dp = self._need_disprog()
        drs = check_discount_rates(dr)
        grps = np.unique(dp.weights["grp_id"])
        q = sim_values_indiv(dp, self.utility, drs)
        df = values_frame(q, dp.strategy_ids, grps, grps, None, drs, "qalys", unit="grp")
        if lys:
            u = self.utility
            ones = MeanValueParams(np.ones(u.values.shape[:4] + (1,)), np.zeros(1), u.strategy_ids, u.patient_ids)
            df["lys"] = sim_values_indiv(dp, ones, drs).transpose(0, 1, 2, 4, 3).reshape(-1)
        return df

    def sim_costs(self, dr=(0.03,)) -> pd.DataFrame:
        if not self.costs:
            raise ValueError("at least one cost model is required to simulate costs")
        dp = self._need_disprog()
        drs = check_discount_rates(dr)
        grps = np.unique(dp.weights["grp_id"])
        frames = []
        for category, mv in self.costs.items():
            c = sim_values_indiv(dp, mv, drs)
            df = values_frame(c, dp.strategy_ids, grps, grps, None, drs, "costs", unit="grp")
            df.insert(df.columns.get_loc("dr") + 1, "category", category)
            frames.append(df)
        return pd.concat(frames, ignore_index=True)
