"""Cost-effectiveness analysis of simulated QALYs and costs.

Net monetary benefit at willingness to pay ``k`` is ``k * qalys - costs``.
Confidence intervals use linear (type 7) quantiles of the PSA samples.
Ties for the maximum net benefit share probability equally, and the
acceptability curve counts samples with strictly positive incremental
net benefit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

QALY_KEYS = ["sample", "strategy_id", "grp_id", "dr"]
TOTAL = "total"
CEA_FILES = ("icer.csv", "mce.csv", "ceaf.csv", "evpi.csv", "ceac.csv", "delta.csv")


@dataclass(frozen=True)
class CEOutput:
    """Totals per (sample, strategy, group, discount rate).

    ``costs`` carries a ``category`` column that includes ``"total"``.
    """

    qalys: pd.DataFrame
    costs: pd.DataFrame

    def __post_init__(self):
        for name, df, cols in (
            ("qalys", self.qalys, QALY_KEYS + ["qalys"]),
            ("costs", self.costs, QALY_KEYS + ["category", "costs"]),
        ):
            missing = [c for c in cols if c not in df]
            if missing:
                raise ValueError(f"{name} table lacks columns {missing}")
        if TOTAL not in set(self.costs["category"]):
            raise ValueError("costs table needs a 'total' category")
        q_ids = self.qalys[["sample", "strategy_id", "grp_id"]].drop_duplicates()
        c_ids = self.costs[["sample", "strategy_id", "grp_id"]].drop_duplicates()
        merged = q_ids.merge(c_ids, how="outer", indicator=True)
        if (merged["_merge"] != "both").any():
            raise ValueError("qalys and costs cover different (sample, strategy, group) combinations")

    @classmethod
    def from_csv(cls, qalys_path, costs_path) -> "CEOutput":
        for p in (qalys_path, costs_path):
            if not Path(p).is_file():
                raise FileNotFoundError(f"cost-effectiveness table not found: {p}")
        return cls(pd.read_csv(qalys_path), pd.read_csv(costs_path))


def _collapse(df: pd.DataFrame, value_cols: list[str], keys: list[str], grp_weights) -> pd.DataFrame:
    """Sum over states, average over patients, then optionally pool groups."""
    unit_keys = keys + (["patient_id"] if "patient_id" in df else [])
    agg = df.groupby(unit_keys, sort=True)[value_cols].sum().reset_index()
    if "patient_id" in df:
        wt = df.drop_duplicates(unit_keys).set_index(unit_keys)["patient_wt"] if "patient_wt" in df else None
        w = np.ones(len(agg)) if wt is None else wt.reindex(pd.MultiIndex.from_frame(agg[unit_keys])).to_numpy(float)
        agg["_w"] = w
        tot = agg.groupby(keys)["_w"].transform("sum").to_numpy()
        if np.any(tot <= 0):
            raise ValueError("patient weights within a group sum to zero")
        for c in value_cols:
            agg[c] = agg[c] * w / tot
        agg = agg.groupby(keys, sort=True)[value_cols].sum().reset_index()
    if grp_weights is None:
        return agg
    gw = pd.Series(grp_weights, dtype=float)
    if gw.sum() <= 0:
        raise ValueError("group weights sum to zero")
    missing = set(agg["grp_id"]) - set(gw.index)
    if missing:
        raise ValueError(f"no weight for groups {sorted(missing)}")
    gw = gw / gw.loc[sorted(set(agg["grp_id"]))].sum()
    for c in value_cols:
        agg[c] = agg[c] * agg["grp_id"].map(gw).to_numpy()
    pooled_keys = [k for k in keys if k != "grp_id"]
    agg = agg.groupby(pooled_keys, sort=True)[value_cols].sum().reset_index()
    agg.insert(agg.columns.get_loc("strategy_id") + 1, "grp_id", 1)
    return agg


def _default_grp_weights(qalys: pd.DataFrame) -> dict:
    if "patient_id" not in qalys or "patient_wt" not in qalys:
        grps = np.unique(qalys["grp_id"])
        if len(grps) > 1:
            raise ValueError("group weights are required to pool group-level outputs")
        return {int(grps[0]): 1.0}
    pat = qalys.drop_duplicates("patient_id")
    return pat.groupby("grp_id")["patient_wt"].sum().to_dict()


def summarize_ce(
    qalys: pd.DataFrame,
    costs: pd.DataFrame,
    by_grp: bool = True,
    grp_weights: Mapping[int, float] | Sequence[float] | None = None,
) -> CEOutput:
    """Aggregate model outputs into a :class:`CEOutput`.

    Values are summed over states, then averaged over patients with
    ``patient_wt`` normalized within each group.  With ``by_grp=False``
    groups are pooled using ``grp_weights`` (default: total raw patient
    weight per group) and reported as group 1.
    """
    pool = None
    if not by_grp:
        if grp_weights is None:
            pool = _default_grp_weights(qalys)
        elif isinstance(grp_weights, Mapping):
            pool = dict(grp_weights)
        else:
            pool = {i + 1: float(w) for i, w in enumerate(grp_weights)}
    qcols = ["qalys"] + (["lys"] if "lys" in qalys else [])
    q = _collapse(qalys, qcols, QALY_KEYS, pool)
    c = _collapse(costs, ["costs"], QALY_KEYS + ["category"], pool)
    tot = c.groupby(QALY_KEYS, sort=True)["costs"].sum().reset_index()
    tot["category"] = TOTAL
    c = pd.concat([c[c["category"] != TOTAL], tot[c.columns]], ignore_index=True)
    c = c.sort_values(QALY_KEYS + ["category"], kind="stable").reset_index(drop=True)
    return CEOutput(q, c)


def _arrays(ce: CEOutput, dr_qalys: float, dr_costs: float):
    """QALYs and total costs as ``(sample, strategy, group)`` arrays."""
    q = ce.qalys[np.isclose(ce.qalys["dr"], dr_qalys, rtol=0, atol=1e-12)]
    c = ce.costs[(ce.costs["category"] == TOTAL) & np.isclose(ce.costs["dr"], dr_costs, rtol=0, atol=1e-12)]
    if q.empty:
        raise ValueError(f"no QALYs at discount rate {dr_qalys}")
    if c.empty:
        raise ValueError(f"no costs at discount rate {dr_costs}")
    samples = np.unique(q["sample"])
    strategies = np.unique(q["strategy_id"])
    grps = np.unique(q["grp_id"])
    shape = (len(samples), len(strategies), len(grps))
    out = []
    for df, col in ((q, "qalys"), (c, "costs")):
        df = df.sort_values(["sample", "strategy_id", "grp_id"])
        if len(df) != np.prod(shape) or df.duplicated(["sample", "strategy_id", "grp_id"]).any():
            raise ValueError("every sample must contain the same strategies and groups")
        full = pd.MultiIndex.from_product([samples, strategies, grps])
        if not full.equals(pd.MultiIndex.from_frame(df[["sample", "strategy_id", "grp_id"]])):
            raise ValueError("every sample must contain the same strategies and groups")
        out.append(df[col].to_numpy(float).reshape(shape))
    return out[0], out[1], strategies, grps


def _k_grid(k) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if k.ndim != 1 or k.size == 0:
        raise ValueError("willingness-to-pay grid must be a non-empty 1-d sequence")
    return k


@dataclass(frozen=True)
class CEAResult:
    mce: pd.DataFrame
    ceaf: pd.DataFrame
    evpi: pd.DataFrame
    nmb: pd.DataFrame


def cea(ce: CEOutput, k, dr_qalys: float = 0.03, dr_costs: float = 0.03) -> CEAResult:
    """Probability each strategy is most cost-effective, the frontier, and EVPI."""
    e, c, strategies, grps = _arrays(ce, dr_qalys, dr_costs)
    ks = _k_grid(k)
    nmb = ks[:, None, None, None] * e[None] - c[None]  # (k, sample, strategy, grp)
    top = nmb.max(axis=2, keepdims=True)
    is_max = nmb == top
    share = is_max / is_max.sum(axis=2, keepdims=True)
    prob = share.mean(axis=1)  # (k, strategy, grp)
    enmb = nmb.mean(axis=1)
    best = enmb.argmax(axis=1)  # (k, grp)
    # mean regret of the expected-best strategy; same as E[max] - max E, less cancellation
    chosen = np.take_along_axis(nmb, best[:, None, None, :], axis=2)[:, :, 0]
    evpi = np.maximum((top[:, :, 0] - chosen).mean(axis=1), 0.0)

    n_k, n_j, n_g = prob.shape
    kk, jj, gg = (a.reshape(-1) for a in np.indices((n_k, n_j, n_g)))
    mce = pd.DataFrame({
        "k": ks[kk],
        "strategy_id": strategies[jj],
        "grp_id": grps[gg],
        "prob": prob.reshape(-1),
        "best": (best[kk, gg] == jj).astype(np.int64),
    })
    kg, gk = (a.reshape(-1) for a in np.indices((n_k, n_g)))
    ceaf = pd.DataFrame({
        "k": ks[kg],
        "grp_id": grps[gk],
        "strategy_id": strategies[best[kg, gk]],
        "prob": prob[kg, best[kg, gk], gk],
    })
    evpi_df = pd.DataFrame({"k": ks[kg], "grp_id": grps[gk], "evpi": evpi.reshape(-1)})
    nmb_df = pd.DataFrame({
        "k": ks[kk],
        "strategy_id": strategies[jj],
        "grp_id": grps[gg],
        "enmb": enmb.reshape(-1),
        "lower": np.quantile(nmb, 0.025, axis=1).reshape(-1),
        "upper": np.quantile(nmb, 0.975, axis=1).reshape(-1),
    })
    return CEAResult(mce, ceaf, evpi_df, nmb_df)


@dataclass(frozen=True)
class CEAPairwiseResult:
    delta: pd.DataFrame
    ceac: pd.DataFrame
    inmb: pd.DataFrame
    comparator: int


def cea_pw(ce: CEOutput, comparator: int, k, dr_qalys: float = 0.03, dr_costs: float = 0.03) -> CEAPairwiseResult:
    """Each strategy against ``comparator``: per-sample deltas and the CEAC."""
    e, c, strategies, grps = _arrays(ce, dr_qalys, dr_costs)
    hits = np.nonzero(strategies == comparator)[0]
    if not len(hits):
        raise ValueError(f"comparator strategy {comparator} is not in the results")
    ref = hits[0]
    others = np.array([j for j in range(len(strategies)) if j != ref], dtype=np.int64)
    de = e[:, others] - e[:, [ref]]
    dc = c[:, others] - c[:, [ref]]
    ks = _k_grid(k)
    n_s, n_j, n_g = de.shape
    ss, jj, gg = (a.reshape(-1) for a in np.indices((n_s, n_j, n_g)))
    delta = pd.DataFrame({
        "sample": ss + 1,
        "strategy_id": strategies[others][jj],
        "grp_id": grps[gg],
        "iqalys": de.reshape(-1),
        "icosts": dc.reshape(-1),
    })
    inmb = ks[:, None, None, None] * de[None] - dc[None]
    kk, jk, gk = (a.reshape(-1) for a in np.indices((len(ks), n_j, n_g)))
    ceac = pd.DataFrame({
        "k": ks[kk],
        "strategy_id": strategies[others][jk],
        "grp_id": grps[gk],
        "prob": (inmb > 0).mean(axis=1).reshape(-1),
    })
    inmb_df = pd.DataFrame({
        "k": ks[kk],
        "strategy_id": strategies[others][jk],
        "grp_id": grps[gk],
        "einmb": inmb.mean(axis=1).reshape(-1),
        "lower": np.quantile(inmb, 0.025, axis=1).reshape(-1),
        "upper": np.quantile(inmb, 0.975, axis=1).reshape(-1),
    })
    return CEAPairwiseResult(delta, ceac, inmb_df, int(comparator))


def icer_label(mean_dq: float, mean_dc: float) -> tuple[float, str]:
    """ICER estimate and its cost-effectiveness plane quadrant."""
    if mean_dq == 0:
        return np.nan, "undefined"
    # zero incremental cost counts as weak dominance
    if mean_dq > 0 and mean_dc <= 0:
        return np.nan, "dominates"
    if mean_dq < 0 and mean_dc >= 0:
        return np.nan, "dominated"
    ratio = mean_dc / mean_dq
    return ratio, ("more costly and more effective" if mean_dq > 0 else "less costly and less effective")


def icer_summary(pw: CEAPairwiseResult, k: float, prob: float = 0.95) -> pd.DataFrame:
    """Incremental QALYs, costs, INMB at ``k`` and the ICER per strategy and group."""
    a = (1 - prob) / 2
    rows = []
    for (strategy, grp), d in pw.delta.groupby(["strategy_id", "grp_id"], sort=True):
        dq = d["iqalys"].to_numpy(float)
        dc = d["icosts"].to_numpy(float)
        inmb = k * dq - dc
        for outcome, x in (("iqalys", dq), ("icosts", dc), ("inmb", inmb)):
            lo, hi = np.quantile(x, [a, 1 - a])
            rows.append((grp, strategy, outcome, x.mean(), lo, hi, ""))
        est, label = icer_label(dq.mean(), dc.mean())
        rows.append((grp, strategy, "icer", est, np.nan, np.nan, label))
    return pd.DataFrame(rows, columns=["grp_id", "strategy_id", "outcome", "estimate", "lower", "upper", "label"])


def write_cea_tables(
    out_dir,
    res: CEAResult,
    pw: CEAPairwiseResult,
    icer: pd.DataFrame,
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = {
        "icer.csv": icer,
        "mce.csv": res.mce,
        "ceaf.csv": res.ceaf,
        "evpi.csv": res.evpi,
        "ceac.csv": pw.ceac,
        "delta.csv": pw.delta,
    }
    paths = []
    for name in CEA_FILES:
        p = out / name
        tables[name].to_csv(p, index=False, lineterminator="\n")
        paths.append(p)
    return paths
