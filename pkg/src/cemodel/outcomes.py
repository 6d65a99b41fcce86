"""Containers shared by the three model families."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class StateProbs:
    """State occupancy probabilities over a time grid.

    ``probs`` has shape ``(n_samples, n_strategies, n_units, n_times,
    n_states)`` where the last state is death.  Units are patients for cohort
    models and groups for the individual simulation (already averaged).
    """

    probs: np.ndarray
    times: np.ndarray
    strategy_ids: np.ndarray
    unit_ids: np.ndarray
    grp_ids: np.ndarray
    weights: np.ndarray | None = None
    unit: Literal["patient", "grp"] = "patient"

    @property
    def n_states(self) -> int:
        return self.probs.shape[-1]

    def by_group(self) -> "StateProbs":
        """Average patients within each group using normalized weights."""
        if self.unit == "grp":
            return self
        w = np.ones(len(self.unit_ids)) if self.weights is None else np.asarray(self.weights, dtype=float)
        grps = np.unique(self.grp_ids)
        out = np.empty(self.probs.shape[:2] + (len(grps),) + self.probs.shape[3:])
        for i, g in enumerate(grps):
            sel = self.grp_ids == g
            tot = w[sel].sum()
            if tot <= 0:
                raise ValueError(f"patient weights in group {g} sum to zero")
            out[:, :, i] = np.einsum("abptk,p->abtk", self.probs[:, :, sel], w[sel] / tot)
        return StateProbs(out, self.times, self.strategy_ids, grps, grps, None, unit="grp")

    def to_frame(self) -> pd.DataFrame:
        n_s, n_st, n_u, n_t, n_h = self.probs.shape
        shape = (n_s, n_st, n_u, n_h, n_t)
        grid = np.indices(shape).reshape(5, -1)
        cols = {
            "sample": grid[0] + 1,
            "strategy_id": self.strategy_ids[grid[1]],
        }
        if self.unit == "patient":
            cols["patient_id"] = self.unit_ids[grid[2]]
        cols["grp_id"] = self.grp_ids[grid[2]]
        if self.unit == "patient" and self.weights is not None:
            cols["patient_wt"] = self.weights[grid[2]]
        cols["state_id"] = grid[3] + 1
        cols["t"] = self.times[grid[4]]
        cols["prob"] = self.probs.transpose(0, 1, 2, 4, 3).reshape(-1)
        return pd.DataFrame(cols)


def values_frame(
    arr: np.ndarray,
    strategy_ids: np.ndarray,
    unit_ids: np.ndarray,
    grp_ids: np.ndarray,
    weights: np.ndarray | None,
    drs,
    name: str,
    unit: str = "patient",
) -> pd.DataFrame:
    """Tidy frame from an ``(sample, strategy, unit, state, dr)`` array."""
    n_s, n_st, n_u, n_h, n_d = arr.shape
    grid = np.indices((n_s, n_st, n_u, n_d, n_h)).reshape(5, -1)
    cols = {"sample": grid[0] + 1, "strategy_id": np.asarray(strategy_ids)[grid[1]]}
    if unit == "patient":
        cols["patient_id"] = np.asarray(unit_ids)[grid[2]]
    cols["grp_id"] = np.asarray(grp_ids)[grid[2]]
    if unit == "patient" and weights is not None:
        cols["patient_wt"] = np.asarray(weights)[grid[2]]
    cols["state_id"] = grid[4] + 1
    cols["dr"] = np.asarray(drs, dtype=float)[grid[3]]
    cols[name] = arr.transpose(0, 1, 2, 4, 3).reshape(-1)
    return pd.DataFrame(cols)


def check_discount_rates(dr) -> list[float]:
    drs = [float(r) for r in np.atleast_1d(dr)]
    if any(r < 0 for r in drs):
        raise ValueError("discount rates must be nonnegative")
    return drs
