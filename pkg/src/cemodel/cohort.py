"""Cohort discrete-time state transition model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping

import numpy as np
import pandas as pd

from .outcomes import StateProbs, check_discount_rates, values_frame
from .statevals import MeanValueParams
from .transprobs import TransProbArray

Method = Literal["left", "right", "trapezoid"]


@dataclass(frozen=True)
class CohortSettings:
    cycle_length: float
    n_cycles: int
    method: Method = "trapezoid"

    def __post_init__(self):
        if not self.cycle_length > 0:
            raise ValueError("cycle_length must be positive")
        if self.n_cycles < 1:
            raise ValueError("n_cycles must be at least 1")
        if self.method not in ("left", "right", "trapezoid"):
            raise ValueError(f"unknown integration method {self.method!r}")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_cycles + 1) * self.cycle_length


def _layout(tp: TransProbArray):
    """Reshape the stack to (sample, strategy, patient, interval, H, H)."""
    ids = tp.ids
    samples = np.unique(ids["sample"])
    strategies = np.unique(ids["strategy_id"])
    patients = np.unique(ids["patient_id"])
    starts = tp.time_start
    shape = (len(samples), len(strategies), len(patients), len(starts))
    if int(np.prod(shape)) != len(ids):
        raise ValueError("transition matrices do not form a complete (sample, strategy, patient, interval) array")
    expected = pd.MultiIndex.from_product([samples, strategies, patients, starts])
    cols = ["sample", "strategy_id", "patient_id"] + (["time_start"] if "time_start" in ids else [])
    actual = ids[cols].to_numpy(float)
    exp = np.array(expected.tolist(), dtype=float)[:, : len(cols)]
    if not np.array_equal(actual, exp):
        raise ValueError("transition matrices must be ordered by sample, strategy, patient, interval")
    first = ids.iloc[: shape[2] * shape[3] : shape[3]]  # patients of the first strategy
    h = tp.n_states
    return tp.values.reshape(*shape, h, h), strategies, patients, starts, first


def sim_stateprobs_cohort(tp: TransProbArray, x0=None, settings: CohortSettings | None = None) -> StateProbs:
    """Iterate ``x_{c+1} = x_c P_c`` for every (sample, strategy, patient).

    In time-inhomogeneous models the matrix of the interval containing the
    cycle start time is used.
    """
    if settings is None:
        raise ValueError("cohort settings are required")
    p, strategies, patients, starts, first = _layout(tp)
    h = tp.n_states
    if x0 is None:
        x0 = np.eye(h)[0]
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (h,) or abs(x0.sum() - 1) > 1e-9 or np.any(x0 < 0):
        raise ValueError("x0 must be a probability vector over all states")

    times = settings.times
    cycle_starts = times[:-1]
    if "time_stop" in tp.ids:
        stops = np.unique(tp.ids["time_stop"].to_numpy(float))
        if not np.array_equal(np.sort(stops)[:-1], starts[1:]) or stops.max() < times[-1]:
            bad = times[-1] if stops.max() < times[-1] else starts[0]
            raise ValueError(f"no transition matrix covering time {bad}")
    if starts[0] > 0:
        raise ValueError(f"no transition matrix covering time {cycle_starts[0]}")
    interval = np.searchsorted(starts, cycle_starts, side="right") - 1

    n_s, n_st, n_p = p.shape[:3]
    out = np.empty((n_s, n_st, n_p, len(times), h))
    x = np.broadcast_to(x0, (n_s, n_st, n_p, h)).copy()
    out[:, :, :, 0] = x
    for c, m in enumerate(interval):
        x = np.einsum("abch,abchk->abck", x, p[:, :, :, m])
        out[:, :, :, c + 1] = x
    return StateProbs(
        probs=out,
        times=times,
        strategy_ids=strategies,
        unit_ids=patients,
        grp_ids=first["grp_id"].to_numpy() if "grp_id" in first else np.ones(n_p, dtype=int),
        weights=first["patient_wt"].to_numpy(float) if "patient_wt" in first else np.full(n_p, 1.0 / n_p),
    )


def _riemann(f: np.ndarray, times: np.ndarray, method: str) -> np.ndarray:
    dt = np.diff(times)
    if method == "left":
        return (f[..., :-1] * dt).sum(axis=-1)
    if method == "right":
        return (f[..., 1:] * dt).sum(axis=-1)
    if method == "trapezoid":
        return (0.5 * dt * (f[..., :-1] + f[..., 1:])).sum(axis=-1)
    raise ValueError(f"unknown integration method {method!r}")


def integrate_statevals(
    sp: StateProbs,
    vals: MeanValueParams,
    dr,
    method: Method | CohortSettings = "trapezoid",
) -> np.ndarray:
    """Discounted expected values by state.

    Approximates the integral of ``z_h(t) exp(-r t) p_h(t)`` on the state
    probability grid.  Returns ``(sample, strategy, patient, state, dr)``
    for the non-death states.
    """
    drs = check_discount_rates(dr)
    if isinstance(method, CohortSettings):
        method = method.method
    if vals.time_reset:
        raise ValueError("cohort models cannot use state values indexed by time in state")
    n_s, n_st, n_p, n_t, h = sp.probs.shape
    if vals.n_samples != n_s:
        raise ValueError(f"state values have {vals.n_samples} samples; state probabilities have {n_s}")
    if not (np.array_equal(vals.strategy_ids, sp.strategy_ids) and np.array_equal(vals.patient_ids, sp.unit_ids)):
        raise ValueError("state values and state probabilities cover different strategies or patients")
    if vals.n_states != h - 1:
        raise ValueError(f"missing state values: {vals.n_states} states valued, {h - 1} needed")
    idx = vals.interval_index(sp.times)
    z = vals.values[..., idx]  # (s, st, p, h-1, t)
    p = sp.probs[..., :-1].transpose(0, 1, 2, 4, 3)
    out = np.empty((n_s, n_st, n_p, h - 1, len(drs)))
    for k, r in enumerate(drs):
        out[..., k] = _riemann(z * p * np.exp(-r * sp.times), sp.times, method)
    return out


class CohortDtstm:
    """Cohort model wiring transition, utility and cost submodels together."""

    def __init__(
        self,
        trans: TransProbArray,
        settings: CohortSettings,
        utility: MeanValueParams | None = None,
        costs: Mapping[str, MeanValueParams] | None = None,
        x0=None,
    ):
        self.trans = trans
        self.settings = settings
        self.utility = utility
        self.costs = dict(costs or {})
        self.x0 = x0
        self.stateprobs_: StateProbs | None = None

    def sim_stateprobs(self) -> StateProbs:
        self.stateprobs_ = sim_stateprobs_cohort(self.trans, self.x0, self.settings)
        return self.stateprobs_

    def _need_stateprobs(self) -> StateProbs:
        if self.stateprobs_ is None:
            self.sim_stateprobs()
        return self.stateprobs_

    def sim_qalys(self, dr=(0.03,), lys: bool = True) -> pd.DataFrame:
        return qalys_frame(self._need_stateprobs(), self.utility, dr, self.settings.method, lys)

    def sim_costs(self, dr=(0.03,)) -> pd.DataFrame:
        return costs_frame(self._need_stateprobs(), self.costs, dr, self.settings.method)


def qalys_frame(sp: StateProbs, utility: MeanValueParams, dr, method: Method, lys: bool = True) -> pd.DataFrame:
    """QALYs (and life-years) per sample, strategy, patient, state and rate."""
    if utility is None:
        raise ValueError("a utility model is required to simulate QALYs")
    drs = check_discount_rates(dr)
    q = integrate_statevals(sp, utility, drs, method)
    df = values_frame(q, sp.strategy_ids, sp.unit_ids, sp.grp_ids, sp.weights, drs, "qalys")
    if lys:
        ones = MeanValueParams(
            np.ones(utility.values.shape[:4] + (1,)), np.zeros(1), utility.strategy_ids, utility.patient_ids
        )
        df["lys"] = values_frame(
            integrate_statevals(sp, ones, drs, method), sp.strategy_ids, sp.unit_ids, sp.grp_ids, sp.weights, drs, "lys"
        )["lys"].to_numpy()
    return df


def costs_frame(sp: StateProbs, costs: Mapping[str, MeanValueParams], dr, method: Method) -> pd.DataFrame:
    if not costs:
        raise ValueError("at least one cost model is required to simulate costs")
    drs = check_discount_rates(dr)
    frames = []
    for category, mv in costs.items():
        c = integrate_statevals(sp, mv, drs, method)
        df = values_frame(c, sp.strategy_ids, sp.unit_ids, sp.grp_ids, sp.weights, drs, "costs")
        df.insert(df.columns.get_loc("dr") + 1, "category", category)
        frames.append(df)
    return pd.concat(frames, ignore_index=True)
