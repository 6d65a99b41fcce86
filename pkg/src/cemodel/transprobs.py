"""Transition probability matrices for cohort models.

``expmat`` converts intensity matrices to probability matrices with the
scaling-and-squaring Pade method (Higham 2005), vectorized over stacks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .data import TransitionMatrix
from .params import MlogitParams, SurvivalParams

ROW_TOL = 1e-9
QROW_TOL = 1e-6

# Pade degrees and the 1-norm bounds below which each is accurate to unit roundoff
_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1, 7: 9.504178996162932e-1,
          9: 2.097847961257068e0, 13: 5.371920351148152e0}
_PADE = {
    3: [120, 60, 12, 1],
    5: [30240, 15120, 3360, 420, 30, 1],
    7: [17297280, 8648640, 1995840, 277200, 25200, 1512, 56, 1],
    9: [17643225600, 8821612800, 2075673600, 302702400, 30270240, 2162160, 110880, 3960, 90, 1],
    13: [64764752532480000, 32382376266240000, 7771770303897600, 1187353796428800,
         129060195264000, 10559470521600, 670442572800, 33522128640, 1323241920,
         40840800, 960960, 16380, 182, 1],
}


def _pade(a: np.ndarray, m: int) -> np.ndarray:
    """Degree-m diagonal Pade approximant of exp for a stack of matrices."""
    b = [float(c) for c in _PADE[m]]
    eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    a2 = a @ a
    if m == 13:
        a4 = a2 @ a2
        a6 = a4 @ a2
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * eye)
        v = a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * eye
    else:
        powers = [eye, a2]
        for _ in range(2, (m + 1) // 2):
            powers.append(powers[-1] @ a2)
        u = sum(b[2 * j + 1] * powers[j] for j in range((m + 1) // 2))
        u = a @ u
        v = sum(b[2 * j] * powers[j] for j in range((m + 1) // 2))
    return np.linalg.solve(v - u, v + u)


def _expm(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    norms = np.abs(a).sum(axis=-2).max(axis=-1)
    degree = np.full(norms.shape, 13)
    for m in (9, 7, 5, 3):
        degree[norms <= _THETA[m]] = m
    squarings = np.zeros(norms.shape, dtype=int)
    big = norms > _THETA[13]
    squarings[big] = np.ceil(np.log2(norms[big] / _THETA[13])).astype(int)
    for m in np.unique(degree):
        for s in np.unique(squarings[degree == m]):
            sel = (degree == m) & (squarings == s)
            r = _pade(a[sel] / 2.0**s, int(m))
            for _ in range(int(s)):
                r = r @ r
            out[sel] = r
    return out


def expmat(q, t: float = 1.0) -> np.ndarray:
    """Transition probabilities ``Exp(t Q)`` for one or a stack of intensity matrices.

    Parameters
    ----------
    q : array_like, shape (H, H) or (n, H, H)
        Intensity matrices: nonnegative off-diagonal entries, rows summing to 0.
    t : float
        Time step (cycle length).

    Returns
    -------
    ndarray with the same shape as ``q``; rows sum to 1.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 2
    q = q[None] if single else q
    if q.shape[-1] != q.shape[-2]:
        raise ValueError("intensity matrices must be square")
    if t < 0:
        raise ValueError("t must be nonnegative")
    h = q.shape[-1]
    off = ~np.eye(h, dtype=bool)
    if np.any(q[:, off] < 0):
        raise ValueError("off-diagonal intensities must be nonnegative")
    if np.any(np.abs(q.sum(axis=2)) > QROW_TOL):
        raise ValueError("intensity matrix rows must sum to 0")
    # intensities given to a few digits do not balance exactly; rebuild the diagonal so rows sum to exactly 0
    q = q.copy()
    idx = np.arange(h)
    q[:, idx, idx] = 0.0
    q[:, idx, idx] = -q.sum(axis=2)
    p = _expm(q * t)
    if np.any(p < -ROW_TOL) or np.any(p > 1 + ROW_TOL):
        raise ValueError("matrix exponential left [0, 1] beyond tolerance")
    p = np.clip(p, 0.0, 1.0)
    return p[0] if single else p


def check_stochastic(p: np.ndarray, tol: float = ROW_TOL) -> None:
    if np.any(p < -tol) or np.any(p > 1 + tol):
        raise ValueError("transition probabilities must lie in [0, 1]")
    bad = np.abs(p.sum(axis=-1) - 1) > tol
    if np.any(bad):
        raise ValueError(f"{int(bad.sum())} transition matrix rows do not sum to 1")


def tpmatrix_id(input_data: pd.DataFrame, n_samples: int, time_start: Sequence[float] | None = None) -> pd.DataFrame:
    """Identifiers for a stack of transition matrices.

    Ordered by sample (outermost), then input row (strategy, patient), then
    time interval (innermost).
    """
    cols = [c for c in ("strategy_id", "patient_id", "grp_id", "patient_wt") if c in input_data]
    base = input_data[cols].reset_index(drop=True)
    n_rows = len(base)
    out = base.iloc[np.tile(np.arange(n_rows), n_samples)].reset_index(drop=True)
    out.insert(0, "sample", np.repeat(np.arange(1, n_samples + 1), n_rows))
    if time_start is not None:
        starts = np.asarray(time_start, dtype=float)
        if starts[0] != 0 or np.any(np.diff(starts) <= 0):
            raise ValueError("time_start must begin at 0 and increase strictly")
        k = len(starts)
        out = out.iloc[np.repeat(np.arange(len(out)), k)].reset_index(drop=True)
        out["time_id"] = np.tile(np.arange(1, k + 1), len(out) // k)
        out["time_start"] = np.tile(starts, len(out) // k)
        out["time_stop"] = np.tile(np.append(starts[1:], np.inf), len(out) // k)
    return out


@dataclass(frozen=True)
class TransProbArray:
    """Stack of H x H transition matrices with a matching id table."""

    values: np.ndarray
    ids: pd.DataFrame

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3 or values.shape[1] != values.shape[2]:
            raise ValueError("values must have shape (n, H, H)")
        if len(self.ids) != values.shape[0]:
            raise ValueError(f"{len(self.ids)} id rows for {values.shape[0]} matrices")
        check_stochastic(values)
        object.__setattr__(self, "values", values)

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    @property
    def time_start(self) -> np.ndarray:
        if "time_start" not in self.ids:
            return np.array([0.0])
        return np.unique(self.ids["time_start"].to_numpy(float))

    def to_frame(self) -> pd.DataFrame:
        """Long format: one row per matrix entry (from, to, prob)."""
        n, h, _ = self.values.shape
        ids = self.ids.iloc[np.repeat(np.arange(n), h * h)].reset_index(drop=True)
        ids["from"] = np.tile(np.repeat(np.arange(1, h + 1), h), n)
        ids["to"] = np.tile(np.arange(1, h + 1), n * h)
        ids["prob"] = self.values.reshape(-1)
        return ids

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "TransProbArray":
        """Inverse of :meth:`to_frame`; rows must be complete per matrix."""
        keys = [c for c in ("sample", "strategy_id", "patient_id", "time_start") if c in df]
        df = df.sort_values(keys + ["from", "to"], kind="stable")
        h = int(df["to"].max())
        if len(df) % (h * h):
            raise ValueError("transition probability table is incomplete")
        values = df["prob"].to_numpy(float).reshape(-1, h, h)
        ids = df.iloc[:: h * h].drop(columns=["from", "to", "prob"]).reset_index(drop=True)
        return cls(values, ids)


def apply_rr(p: np.ndarray, rr, index: Sequence[tuple[int, int]], complement: Sequence[int] | None = None) -> np.ndarray:
    """Multiply selected entries by relative risks and rebalance each row.

    Parameters
    ----------
    p : ndarray, shape (n, H, H)
    rr : array_like
        Either ``(n, len(index))`` or flat of length ``n * len(index)`` ordered
        pair by pair (all matrices for the first pair, then the second).
    index : sequence of (row, col)
        1-based matrix positions receiving the relative risks.
    complement : sequence of int, optional
        1-based column absorbing the change in each row; defaults to the
        diagonal.

    Returns
    -------
    ndarray, a new stack of matrices.
    """
    p = np.array(p, dtype=float, copy=True)
    if p.ndim == 2:
        p = p[None]
    n, h, _ = p.shape
    index = [(int(r), int(c)) for r, c in index]
    rr = np.asarray(rr, dtype=float)
    if rr.ndim == 1:
        if rr.size != n * len(index):
            raise ValueError(f"rr has {rr.size} values; expected {n * len(index)}")
        rr = rr.reshape(len(index), n).T
    if rr.shape != (n, len(index)):
        raise ValueError(f"rr must have shape ({n}, {len(index)})")
    comp = list(range(1, h + 1)) if complement is None else [int(c) for c in complement]
    if len(comp) != h:
        raise ValueError("complement needs one column per row")
    for k, (r, c) in enumerate(index):
        if not (1 <= r <= h and 1 <= c <= h):
            raise ValueError(f"index {(r, c)} outside a {h}x{h} matrix")
        if c == comp[r - 1]:
            raise ValueError(f"index {(r, c)} is the complement column of row {r}")
        p[:, r - 1, c - 1] *= rr[:, k]
    for r in sorted({r for r, _ in index}):
        cc = comp[r - 1] - 1
        others = np.delete(p[:, r - 1, :], cc, axis=1).sum(axis=1)
        new = 1.0 - others
        if np.any(new < -ROW_TOL):
            raise ValueError("relative risk makes row infeasible")
        # rows whose risks are all exactly 1 keep their original bits
        touched = np.any(rr[:, [k for k, (rk, _) in enumerate(index) if rk == r]] != 1.0, axis=1)
        p[:, r - 1, cc] = np.where(touched, np.maximum(new, 0.0), p[:, r - 1, cc])
    return p


def qmatrix(tmat: TransitionMatrix, rates: dict[int, np.ndarray]) -> np.ndarray:
    """Intensity matrices from per-transition constant hazards.

    ``rates`` maps transition number to an array of rates; the result stacks
    one matrix per rate element in flattened order.
    """
    shape = np.broadcast_shapes(*(np.shape(r) for r in rates.values()))
    n = int(np.prod(shape))
    h = tmat.n_states
    q = np.zeros((n, h, h))
    for trans, frm, to in tmat.transitions():
        if trans not in rates:
            raise ValueError(f"missing rate for transition {trans}")
        q[:, frm - 1, to - 1] = np.broadcast_to(rates[trans], shape).reshape(-1)
    idx = np.arange(h)
    q[:, idx, idx] = -q.sum(axis=2)
    return q


def transprobs_from_rates(
    tmat: TransitionMatrix,
    params: dict[int, SurvivalParams],
    input_data: pd.DataFrame,
    cycle_length: float,
) -> TransProbArray:
    """Probability matrices from exponential (constant-hazard) transition models."""
    n_samples = {p.n_samples for p in params.values()}
    if len(n_samples) != 1:
        raise ValueError("transition models disagree on n_samples")
    n = n_samples.pop()
    rates = {}
    for trans, sp in params.items():
        if sp.family != "exponential":
            raise ValueError(f"transition {trans}: cohort intensities need an exponential model")
        rates[trans] = sp.predict(input_data)["rate"]
    p = expmat(qmatrix(tmat, rates), cycle_length)
    return TransProbArray(p, tpmatrix_id(input_data, n))


def transprobs_from_mlogit(
    tmat: TransitionMatrix,
    params: dict[int, MlogitParams],
    input_data: pd.DataFrame,
) -> TransProbArray:
    """Probability matrices from one multinomial logit per non-death state.

    Categories for state r are "stay in r" followed by the permitted
    destinations of row r in ascending order.
    """
    h = tmat.n_states
    n_samples = {p.n_samples for p in params.values()}
    if len(n_samples) != 1:
        raise ValueError("multinomial logits disagree on n_samples")
    n = n_samples.pop()
    rows = len(input_data)
    p = np.zeros((n, rows, h, h))
    for r in range(1, h + 1):
        dest = [to for _, to in tmat.from_state(r)]
        if not dest:
            p[:, :, r - 1, r - 1] = 1.0
            continue
        if r not in params:
            raise ValueError(f"missing multinomial logit for state {r}")
        mp = params[r]
        cats = [r] + dest
        if mp.n_categories != len(cats):
            raise ValueError(
                f"state {r}: {mp.n_categories} categories but {len(cats)} destinations (incl. stay)"
            )
        x = input_data[list(mp.terms)].to_numpy(dtype=float)
        probs = mp.predict(x)
        for j, to in enumerate(cats):
            p[:, :, r - 1, to - 1] = probs[:, :, j]
    return TransProbArray(p.reshape(n * rows, h, h), tpmatrix_id(input_data, n))
