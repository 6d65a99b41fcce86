import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from cemodel.data import ModelContext
from cemodel.statevals import (
    MeanValueParams,
    StateValTable,
    ValueQuery,
    predict_stateval,
    stateval_draw,
)


@pytest.fixture
def ctx():
    return ModelContext(
        pd.DataFrame({"strategy_id": [1, 2, 3]}),
        pd.DataFrame({"patient_id": [1, 2, 3, 4], "grp_id": [1, 1, 2, 2]}),
        pd.DataFrame({"state_id": [1, 2], "state_name": ["Stable", "Progression"]}),
    )


def utility_table():
    return StateValTable(pd.DataFrame({"state_id": [1, 2], "mean": [0.8, 0.6], "se": [0.02, 0.05]}), "beta")


def drug_table():
    return StateValTable(pd.DataFrame({
        "strategy_id": [1, 1, 1, 2, 2, 2, 3, 3, 3],
        "state_id": [1, 2, 2] * 3,
        "time_start": [0, 0, 0.25] * 3,
        "est": [2000, 1500, 1200, 12000, 1500, 1200, 15000, 1500, 1200],
    }))


def test_utility_broadcast(ctx):
    mv = stateval_draw(utility_table(), ctx, 200, rng=np.random.default_rng(0))
    assert mv.values.shape == (200, 3, 4, 2, 1)
    assert np.all(mv.values == mv.values[:, :1, :1])
    assert np.std(mv.values[:, 0, 0, 0]) > 0
    assert abs(mv.values[:, 0, 0, 0].mean() - 0.8) < 0.01
    q = ValueQuery(sample=7, strategy_id=3, patient_id=2, state_id=1, time=12.0)
    assert predict_stateval(mv, q) == mv.values[6, 0, 0, 0, 0]


def test_drug_cost_intervals(ctx):
    mv = stateval_draw(drug_table(), ctx, 3, time_reset=True)
    assert mv.time_start.tolist() == [0.0, 0.25]
    assert np.all(mv.values[:, :, :, 1, 0] == 1500)
    assert np.all(mv.values[:, :, :, 1, 1] == 1200)
    assert np.all(mv.values[:, 1, :, 0, :] == 12000)

    def q(t, origin="state-entry"):
        return predict_stateval(mv, ValueQuery(1, 2, 1, 2, t, origin))

    assert q(0.1) == 1500 and q(0.5) == 1200
    assert q(0.25) == 1200  # right-continuous at the boundary
    assert q(1e6) == 1200
    with pytest.raises(ValueError, match="state-entry"):
        q(0.1, "model")


def test_fixed_draws_ignore_rng(ctx):
    a = stateval_draw(drug_table(), ctx, 5, rng=np.random.default_rng(1))
    b = stateval_draw(drug_table(), ctx, 5, rng=np.random.default_rng(2))
    c = stateval_draw(drug_table(), ctx, 5)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.values, c.values)
    assert np.all(a.values == a.values[:1])


def test_missing_keys_listed(ctx):
    tbl = StateValTable(pd.DataFrame({"strategy_id": [1, 2], "state_id": [1, 1], "est": [1.0, 2.0]}))
    with pytest.raises(ValueError, match="missing keys"):
        stateval_draw(tbl, ctx, 2)


def test_random_dist_needs_rng(ctx):
    with pytest.raises(ValueError, match="random generator"):
        stateval_draw(utility_table(), ctx, 2)


def test_group_values(ctx):
    tbl = StateValTable(pd.DataFrame({"grp_id": [1, 1, 2, 2], "state_id": [1, 2, 1, 2], "est": [1.0, 2.0, 3.0, 4.0]}))
    mv = stateval_draw(tbl, ctx, 1)
    assert mv.values[0, 0, :, 0, 0].tolist() == [1.0, 1.0, 3.0, 3.0]


def test_presimulated_values(ctx):
    rows = [{"state_id": h, "sample": s, "value": 10 * h + s} for h in (1, 2) for s in (1, 2, 3)]
    mv = stateval_draw(StateValTable(pd.DataFrame(rows)), ctx, 3)
    assert mv.values[:, 0, 0, 1, 0].tolist() == [21.0, 22.0, 23.0]
    with pytest.raises(ValueError, match="samples 1..4"):
        stateval_draw(StateValTable(pd.DataFrame(rows)), ctx, 4)


def test_query_ranges(ctx):
    mv = stateval_draw(drug_table(), ctx, 2)
    for bad in (ValueQuery(3, 1, 1, 1, 0.0), ValueQuery(1, 4, 1, 1, 0.0), ValueQuery(1, 1, 9, 1, 0.0),
                ValueQuery(1, 1, 1, 3, 0.0), ValueQuery(1, 1, 1, 1, -1.0)):
        with pytest.raises(ValueError):
            predict_stateval(mv, bad)


@given(st.lists(st.floats(0.01, 50.0), min_size=1, max_size=6, unique=True), st.floats(0.0, 100.0))
def test_interval_lookup_right_continuous(widths, t):
    starts = np.concatenate([[0.0], np.cumsum(widths)])
    mv = MeanValueParams(np.arange(len(starts), dtype=float).reshape(1, 1, 1, 1, -1), starts, np.array([1]), np.array([1]))
    got = predict_stateval(mv, ValueQuery(1, 1, 1, 1, t))
    assert got == np.sum(starts <= t) - 1
    for m, s in enumerate(starts):
        assert predict_stateval(mv, ValueQuery(1, 1, 1, 1, float(s))) == m
