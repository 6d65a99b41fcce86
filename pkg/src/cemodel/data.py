"""Model context: strategies, patients, health states and transitions.

Tables are pandas DataFrames keyed by integer identifiers.  The death state
is never listed in the states table; it is appended implicitly and always
receives the highest state id.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

ID_COLUMNS = ("strategy_id", "patient_id", "state_id", "grp_id", "patient_wt")
NAME_COLUMNS = ("strategy_name", "state_name", "grp_name")
DEATH_LABEL = "Death"


def _check_contiguous(df: pd.DataFrame, col: str, table: str) -> None:
    ids = df[col].to_numpy()
    if not np.issubdtype(ids.dtype, np.integer):
        if not np.all(np.mod(ids, 1) == 0):
            raise ValueError(f"{table}.{col} must be integer valued")
    if len(np.unique(ids)) != len(ids):
        raise ValueError(f"{table}.{col} values must be unique")
    if not np.array_equal(np.sort(ids), np.arange(1, len(ids) + 1)):
        raise ValueError(f"{table}.{col} must be contiguous integers starting at 1")


def _check_covariates(df: pd.DataFrame, table: str) -> None:
    for col in df.columns:
        if col in ID_COLUMNS or col in NAME_COLUMNS:
            continue
        if not pd.api.types.is_numeric_dtype(df[col]):
            raise ValueError(
                f"covariate {table}.{col} is not numeric; encode it as indicator columns"
            )


class TransitionMatrix:
    """Square matrix of transition numbers; 0 marks a forbidden transition.

    The last row/column is the death state.  Transition numbers must run
    1..n in row-major order and the death row must be empty.

    >>> tmat = TransitionMatrix([[None, 1, 2], [None, None, 3], [None, None, None]])
    >>> tmat.n_transitions
    3
    >>> tmat.from_state(1)
    [(1, 2), (2, 3)]
    """

    def __init__(self, matrix, names: Sequence[str] | None = None):
        m = np.array(
            [[0 if (v is None or (isinstance(v, float) and np.isnan(v))) else v for v in row]
             for row in matrix],
            dtype=float,
        )
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ValueError("transition matrix must be square with at least 2 states")
        if np.any(m < 0) or np.any(np.mod(m, 1) != 0):
            raise ValueError("transition numbers must be positive integers")
        m = m.astype(np.int64)
        present = m[m > 0]
        if not np.array_equal(present, np.arange(1, len(present) + 1)):
            raise ValueError("transitions must be numbered 1..n in row-major order")
        if np.any(np.diag(m) > 0):
            raise ValueError("transition matrix diagonal must be empty")
        if np.any(m[-1] > 0):
            raise ValueError("no transitions are allowed out of the death state")
        self.matrix = m
        self.matrix.setflags(write=False)
        self.names = list(names) if names is not None else None

    @property
    def n_states(self) -> int:
        """Number of states including death."""
        return self.matrix.shape[0]

    @property
    def n_transitions(self) -> int:
        return int(self.matrix.max())

    def transitions(self) -> list[tuple[int, int, int]]:
        """(transition number, from state, to state) with 1-based state ids."""
        rows, cols = np.nonzero(self.matrix)
        return sorted(
            (int(self.matrix[r, c]), int(r) + 1, int(c) + 1) for r, c in zip(rows, cols)
        )

    def from_state(self, state: int) -> list[tuple[int, int]]:
        """(transition number, destination) pairs out of ``state``, by destination."""
        row = self.matrix[state - 1]
        return [(int(row[c]), int(c) + 1) for c in np.nonzero(row)[0]]

    def is_absorbing(self, state: int) -> bool:
        return not np.any(self.matrix[state - 1] > 0)

    def __eq__(self, other):
        return isinstance(other, TransitionMatrix) and np.array_equal(self.matrix, other.matrix)

    def __repr__(self):
        return f"TransitionMatrix({self.matrix.tolist()})"

    @classmethod
    def from_csv(cls, path) -> "TransitionMatrix":
        """Read a matrix with a header of state names; blanks or NA are absent."""
        df = pd.read_csv(path, index_col=0, keep_default_na=True)
        return cls(df.to_numpy(dtype=float), names=list(df.columns))


@dataclass(frozen=True)
class ModelContext:
    """Strategies, patients and states of a model; immutable after construction."""

    strategies: pd.DataFrame
    patients: pd.DataFrame
    states: pd.DataFrame
    tmat: TransitionMatrix | None = None

    def __post_init__(self):
        for name in ("strategies", "patients", "states"):
            df = getattr(self, name)
            if len(df) == 0:
                raise ValueError(f"{name} table is empty")
        strategies = self.strategies.sort_values("strategy_id").reset_index(drop=True)
        _check_contiguous(strategies, "strategy_id", "strategies")
        _check_covariates(strategies, "strategies")

        patients = self.patients.copy()
        if "patient_id" not in patients:
            raise ValueError("patients table needs a patient_id column")
        if patients["patient_id"].duplicated().any():
            raise ValueError("patients.patient_id values must be unique")
        if "grp_id" not in patients:
            patients["grp_id"] = 1
        if "patient_wt" not in patients:
            patients["patient_wt"] = 1.0 / len(patients)
        if np.any(patients["patient_wt"].to_numpy() < 0):
            raise ValueError("patients.patient_wt must be nonnegative")
        grps = np.unique(patients["grp_id"].to_numpy())
        if not np.array_equal(grps, np.arange(1, len(grps) + 1)):
            raise ValueError("patients.grp_id must be contiguous integers starting at 1")
        patients = patients.sort_values("patient_id").reset_index(drop=True)
        _check_covariates(patients, "patients")

        states = self.states.sort_values("state_id").reset_index(drop=True)
        _check_contiguous(states, "state_id", "states")

        if self.tmat is not None and self.tmat.n_states != len(states) + 1:
            raise ValueError(
                f"transition matrix has {self.tmat.n_states} states; expected "
                f"{len(states) + 1} (non-death states plus death)"
            )
        object.__setattr__(self, "strategies", strategies)
        object.__setattr__(self, "patients", patients)
        object.__setattr__(self, "states", states)

    @property
    def n_strategies(self) -> int:
        return len(self.strategies)

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def n_states(self) -> int:
        """Number of non-death states."""
        return len(self.states)

    @property
    def n_grps(self) -> int:
        return int(self.patients["grp_id"].max())

    @property
    def death_state(self) -> int:
        return self.n_states + 1

    def patient_index(self, patient_ids) -> np.ndarray:
        ids = self.patients["patient_id"].to_numpy()
        idx = np.searchsorted(ids, patient_ids)
        idx = np.clip(idx, 0, len(ids) - 1)
        if not np.array_equal(ids[idx], np.asarray(patient_ids)):
            raise ValueError("unknown patient_id")
        return idx

    def grp_weights(self) -> np.ndarray:
        """Relative size of each group: sum of raw patient weights, normalized."""
        w = self.patients.groupby("grp_id")["patient_wt"].sum().to_numpy(dtype=float)
        if w.sum() <= 0:
            raise ValueError("patient weights sum to zero")
        return w / w.sum()


def normalized_weights(patients: pd.DataFrame) -> np.ndarray:
    """Patient weights rescaled to sum to 1 within each grp_id."""
    w = patients["patient_wt"].to_numpy(dtype=float)
    totals = patients.groupby("grp_id")["patient_wt"].transform("sum").to_numpy(dtype=float)
    if np.any(totals <= 0):
        raise ValueError("patient weights within a group sum to zero")
    return w / totals


def expand(ctx: ModelContext, by: Iterable[str] = ("strategies", "patients")) -> pd.DataFrame:
    """Cartesian product of the named tables with covariates merged.

    Rows are ordered by ``(strategy_id, patient_id)``; every downstream array
    relies on this ordering.
    """
    by = list(by)
    unknown = set(by) - {"strategies", "patients"}
    if unknown:
        raise ValueError(f"cannot expand by {sorted(unknown)}")
    if not by:
        raise ValueError("expand needs at least one table")
    tables = [getattr(ctx, name) for name in ("strategies", "patients") if name in by]
    for name in by:
        if len(getattr(ctx, name)) == 0:
            raise ValueError(f"{name} table is empty")
    if len(tables) == 2:
        shared = (set(tables[0].columns) & set(tables[1].columns)) - set(ID_COLUMNS)
        if shared:
            raise ValueError(f"duplicate covariate names across tables: {sorted(shared)}")
        out = tables[0].merge(tables[1], how="cross")
    else:
        out = tables[0].copy()
    keys = [k for k in ("strategy_id", "patient_id") if k in out]
    out = out.sort_values(keys, kind="stable").reset_index(drop=True)
    front = [c for c in ("strategy_id", "patient_id", "grp_id", "patient_wt") if c in out]
    return out[front + [c for c in out.columns if c not in front]]


def add_intercept(input_data: pd.DataFrame) -> pd.DataFrame:
    """Return a copy with an ``(Intercept)`` column of ones."""
    out = input_data.copy()
    out["(Intercept)"] = 1.0
    return out


def get_labels(ctx: ModelContext) -> dict[str, dict[str, int]]:
    """Name -> id maps for strategy_id, state_id (death included) and grp_id."""

    def _map(df: pd.DataFrame, id_col: str, name_col: str) -> dict[str, int]:
        pairs = df[[id_col, name_col]].drop_duplicates()
        if pairs[id_col].duplicated().any():
            raise ValueError(f"{id_col} has more than one {name_col}")
        if pairs[name_col].duplicated().any():
            raise ValueError(f"duplicate {name_col} values")
        return {str(n): int(i) for i, n in zip(pairs[id_col], pairs[name_col])}

    labels: dict[str, dict[str, int]] = {}
    if "strategy_name" in ctx.strategies:
        labels["strategy_id"] = _map(ctx.strategies, "strategy_id", "strategy_name")
    if "state_name" in ctx.states:
        states = _map(ctx.states, "state_id", "state_name")
        if DEATH_LABEL in states:
            raise ValueError(f"state name {DEATH_LABEL!r} is reserved for the death state")
        states[DEATH_LABEL] = ctx.death_state
        labels["state_id"] = states
    if "grp_name" in ctx.patients:
        labels["grp_id"] = _map(ctx.patients, "grp_id", "grp_name")
    return labels


def read_table(path, name: str) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{name} file not found: {path}")
    return pd.read_csv(path)


def load_context(strategies, patients, states, tmat=None) -> ModelContext:
    """Build a :class:`ModelContext` from CSV paths."""
    tm = None
    if tmat is not None:
        if not Path(tmat).is_file():
            raise FileNotFoundError(f"transition matrix file not found: {tmat}")
        tm = TransitionMatrix.from_csv(tmat)
    return ModelContext(
        strategies=read_table(strategies, "strategies"),
        patients=read_table(patients, "patients"),
        states=read_table(states, "states"),
        tmat=tm,
    )
