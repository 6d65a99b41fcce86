"""N-state partitioned survival model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .cohort import Method, costs_frame, qalys_frame
from .outcomes import StateProbs
from .params import SurvivalParams
from .statevals import MeanValueParams

CLAMP_TOL = 1e-9
CROSS_TOL = 1e-12


@dataclass(frozen=True)
class SurvivalCurves:
    """Survival curves of shape ``(sample, strategy, patient, curve, t)``.

    Curves are ordered from the earliest event (e.g. progression-free
    survival) to overall survival.
    """

    survival: np.ndarray
    times: np.ndarray
    strategy_ids: np.ndarray
    patient_ids: np.ndarray
    grp_ids: np.ndarray
    patient_wt: np.ndarray

    @property
    def n_curves(self) -> int:
        return self.survival.shape[3]

    def to_frame(self) -> pd.DataFrame:
        n_s, n_st, n_p, n_c, n_t = self.survival.shape
        g = np.indices(self.survival.shape).reshape(5, -1)
        return pd.DataFrame({
            "sample": g[0] + 1,
            "strategy_id": self.strategy_ids[g[1]],
            "patient_id": self.patient_ids[g[2]],
            "grp_id": self.grp_ids[g[2]],
            "patient_wt": self.patient_wt[g[2]],
            "curve": g[3] + 1,
            "t": self.times[g[4]],
            "survival": self.survival.reshape(-1),
        })

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "SurvivalCurves":
        grids = {c: np.unique(g["t"].to_numpy(float)) for c, g in df.groupby("curve")}
        ref = next(iter(grids.values()))
        if any(not np.array_equal(g, ref) for g in grids.values()):
            raise ValueError("survival curves are evaluated on different time grids")
        df = df.sort_values(["sample", "strategy_id", "patient_id", "curve", "t"], kind="stable")
        dims = [df[c].nunique() for c in ("sample", "strategy_id", "patient_id", "curve")] + [len(ref)]
        if int(np.prod(dims)) != len(df):
            raise ValueError("survival curve table is incomplete")
        pat = df.drop_duplicates("patient_id")
        return cls(
            df["survival"].to_numpy(float).reshape(dims),
            ref,
            np.unique(df["strategy_id"]),
            pat["patient_id"].to_numpy(),
            pat["grp_id"].to_numpy() if "grp_id" in pat else np.ones(len(pat), dtype=int),
            pat["patient_wt"].to_numpy(float) if "patient_wt" in pat else np.full(len(pat), 1.0 / len(pat)),
        )


def sim_survival(
    params: Sequence[SurvivalParams],
    input_data: pd.DataFrame,
    t_grid,
    n_samples: int,
) -> SurvivalCurves:
    """Evaluate each curve's survival function on ``t_grid``.

    ``input_data`` rows are (strategy, patient) pairs sorted by strategy then
    patient, as produced by :func:`cemodel.data.expand`.
    """
    if not params:
        raise ValueError("at least one survival curve is required")
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("t_grid must be nonnegative and strictly increasing")
    data = input_data.reset_index(drop=True)
    strategies = np.unique(data["strategy_id"])
    patients = np.unique(data["patient_id"])
    if len(data) != len(strategies) * len(patients):
        raise ValueError("input data must cross every strategy with every patient")
    order = np.lexsort((data["patient_id"].to_numpy(), data["strategy_id"].to_numpy()))
    if not np.array_equal(order, np.arange(len(data))):
        raise ValueError("input data must be sorted by strategy_id then patient_id")
    first = data.iloc[: len(patients)]
    out = np.empty((n_samples, len(strategies), len(patients), len(params), grid.size))
    for c, sp in enumerate(params):
        d = sp.resize(n_samples).distribution(data)
        d = type(d)(d.family, {k: v[..., None] for k, v in d.params.items()})
        out[:, :, :, c] = d.survival(grid).reshape(n_samples, len(strategies), len(patients), grid.size)
    return SurvivalCurves(
        out,
        grid,
        strategies,
        patients,
        first["grp_id"].to_numpy() if "grp_id" in first else np.ones(len(patients), dtype=int),
        first["patient_wt"].to_numpy(float) if "patient_wt" in first else np.full(len(patients), 1.0 / len(patients)),
    )


def stateprobs_from_survival(sc: SurvivalCurves) -> tuple[StateProbs, int]:
    """Partition the curves into state probabilities.

    Crossing curves are made monotone across curves by replacing each curve
    with the running minimum from overall survival downwards, so
    ``S_n <= S_{n+1}`` holds.  Returns the state probabilities and the number
    of (sample, strategy, patient, time, curve) cells that needed clamping.
    """
    s = sc.survival
    if np.any(s < -CLAMP_TOL) or np.any(s > 1 + CLAMP_TOL):
        raise ValueError("survival values must lie in [0, 1]")
    s = np.clip(s, 0.0, 1.0)
    fixed = np.flip(np.minimum.accumulate(np.flip(s, axis=3), axis=3), axis=3)
    crossings = int(np.count_nonzero(s - fixed > CROSS_TOL))
    n_s, n_st, n_p, n_c, n_t = s.shape
    probs = np.empty((n_s, n_st, n_p, n_c + 1, n_t))
    probs[:, :, :, 0] = fixed[:, :, :, 0]
    probs[:, :, :, 1:n_c] = np.diff(fixed, axis=3)
    probs[:, :, :, n_c] = 1.0 - fixed[:, :, :, -1]
    sp = StateProbs(
        probs.transpose(0, 1, 2, 4, 3),
        sc.times,
        sc.strategy_ids,
        sc.patient_ids,
        sc.grp_ids,
        sc.patient_wt,
    )
    return sp, crossings


class Psm:
    """Partitioned survival model with cohort-style valuation."""

    def __init__(
        self,
        curves: Sequence[SurvivalParams],
        input_data: pd.DataFrame,
        n_samples: int,
        utility: MeanValueParams | None = None,
        costs: Mapping[str, MeanValueParams] | None = None,
        method: Method = "trapezoid",
    ):
        self.curves = list(curves)
        self.input_data = input_data
        self.n_samples = n_samples
        self.utility = utility
        self.costs = dict(costs or {})
        self.method = method
        self.survival_: SurvivalCurves | None = None
        self.stateprobs_: StateProbs | None = None
        self.crossings_ = 0

    def sim_survival(self, t_grid) -> SurvivalCurves:
        self.survival_ = sim_survival(self.curves, self.input_data, t_grid, self.n_samples)
        return self.survival_

    def sim_stateprobs(self) -> StateProbs:
        if self.survival_ is None:
            raise RuntimeError("call sim_survival() first")
        self.stateprobs_, self.crossings_ = stateprobs_from_survival(self.survival_)
        return self.stateprobs_

    def _need_stateprobs(self) -> StateProbs:
        if self.stateprobs_ is None:
            self.sim_stateprobs()
        return self.stateprobs_

    def sim_qalys(self, dr=(0.03,), lys: bool = True) -> pd.DataFrame:
        return qalys_frame(self._need_stateprobs(), self.utility, dr, self.method, lys)

    def sim_costs(self, dr=(0.03,)) -> pd.DataFrame:
        return costs_frame(self._need_stateprobs(), self.costs, dr, self.method)
