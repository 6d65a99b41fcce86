import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from cemodel.data import (
    ModelContext,
    TransitionMatrix,
    expand,
    get_labels,
    load_context,
    normalized_weights,
)


def onc_ctx(n_patients=4, **patient_cols):
    return ModelContext(
        pd.DataFrame({"strategy_id": [1, 2, 3], "strategy_name": ["SOC", "New 1", "New 2"]}),
        pd.DataFrame({"patient_id": np.arange(1, n_patients + 1), **patient_cols}),
        pd.DataFrame({"state_id": [1, 2], "state_name": ["Stable", "Progression"]}),
    )


def test_expand_orders_by_strategy_then_patient():
    df = expand(onc_ctx(1000))
    assert len(df) == 3000
    assert (df.loc[0, "strategy_id"], df.loc[0, "patient_id"]) == (1, 1)
    assert (df.loc[1, "strategy_id"], df.loc[1, "patient_id"]) == (1, 2)


def test_expand_carries_groups_and_weights():
    df = expand(onc_ctx(4, grp_id=[1, 1, 2, 2], patient_wt=[0.25] * 4))
    assert len(df) == 12
    assert list(df.columns[:4]) == ["strategy_id", "patient_id", "grp_id", "patient_wt"]
    assert df["grp_id"].tolist()[:4] == [1, 1, 2, 2]


def test_expand_single_row_and_repeatable():
    ctx = ModelContext(pd.DataFrame({"strategy_id": [1]}), pd.DataFrame({"patient_id": [1]}), pd.DataFrame({"state_id": [1]}))
    assert len(expand(ctx)) == 1
    big = onc_ctx(50, age=np.arange(50.0))
    pd.testing.assert_frame_equal(expand(big), expand(big))


def test_expand_rejects_duplicate_covariates():
    ctx = ModelContext(
        pd.DataFrame({"strategy_id": [1], "age": [1.0]}),
        pd.DataFrame({"patient_id": [1], "age": [50.0]}),
        pd.DataFrame({"state_id": [1]}),
    )
    with pytest.raises(ValueError, match="duplicate covariate"):
        expand(ctx)


def test_defaults_single_group_equal_weights():
    ctx = onc_ctx(4)
    assert ctx.patients["grp_id"].tolist() == [1] * 4
    np.testing.assert_allclose(ctx.patients["patient_wt"], 0.25)


@pytest.mark.parametrize(
    "tables,match",
    [
        ((pd.DataFrame({"strategy_id": []}), pd.DataFrame({"patient_id": [1]}), pd.DataFrame({"state_id": [1]})), "strategies table is empty"),
        ((pd.DataFrame({"strategy_id": [1, 3]}), pd.DataFrame({"patient_id": [1]}), pd.DataFrame({"state_id": [1]})), "contiguous"),
        ((pd.DataFrame({"strategy_id": [1]}), pd.DataFrame({"patient_id": [1, 1]}), pd.DataFrame({"state_id": [1]})), "unique"),
        ((pd.DataFrame({"strategy_id": [1]}), pd.DataFrame({"patient_id": [1], "sex": ["f"]}), pd.DataFrame({"state_id": [1]})), "not numeric"),
    ],
)
def test_context_validation(tables, match):
    with pytest.raises(ValueError, match=match):
        ModelContext(*tables)


def test_labels_for_oncology_context():
    labels = get_labels(onc_ctx())
    assert labels["state_id"] == {"Stable": 1, "Progression": 2, "Death": 3}
    assert labels["strategy_id"] == {"SOC": 1, "New 1": 2, "New 2": 3}
    assert "grp_id" not in labels


def test_duplicate_labels_rejected():
    ctx = ModelContext(
        pd.DataFrame({"strategy_id": [1, 2], "strategy_name": ["A", "A"]}),
        pd.DataFrame({"patient_id": [1]}),
        pd.DataFrame({"state_id": [1]}),
    )
    with pytest.raises(ValueError):
        get_labels(ctx)


def test_transition_matrix():
    tm = TransitionMatrix([[None, 1, 2], [None, None, 3], [None, None, None]])
    assert tm.n_states == 3 and tm.n_transitions == 3
    assert tm.transitions() == [(1, 1, 2), (2, 1, 3), (3, 2, 3)]
    assert tm.from_state(2) == [(3, 3)]
    assert tm.is_absorbing(3) and not tm.is_absorbing(1)


@pytest.mark.parametrize(
    "m",
    [
        [[None, 2, 1], [None, None, 3], [None, None, None]],  # not row-major
        [[1, None], [None, None]],  # diagonal
        [[None, 1], [2, None]],  # out of death
    ],
)
def test_transition_matrix_validation(m):
    with pytest.raises(ValueError):
        TransitionMatrix(m)


def test_transition_matrix_from_csv(tmp_path):
    p = tmp_path / "tmat.csv"
    p.write_text(",Stable,Progression,Death\nStable,,1,2\nProgression,,,3\nDeath,,,\n")
    tm = TransitionMatrix.from_csv(p)
    assert tm == TransitionMatrix([[None, 1, 2], [None, None, 3], [None, None, None]])
    assert tm.names == ["Stable", "Progression", "Death"]


def test_tmat_must_match_states():
    with pytest.raises(ValueError, match="expected 3"):
        ModelContext(
            pd.DataFrame({"strategy_id": [1]}),
            pd.DataFrame({"patient_id": [1]}),
            pd.DataFrame({"state_id": [1, 2]}),
            TransitionMatrix([[None, 1], [None, None]]),
        )


def test_load_context_names_missing_file(tmp_path):
    (tmp_path / "s.csv").write_text("strategy_id\n1\n")
    with pytest.raises(FileNotFoundError, match="patients"):
        load_context(tmp_path / "s.csv", tmp_path / "p.csv", tmp_path / "x.csv")


@given(st.lists(st.tuples(st.integers(1, 4), st.floats(0.01, 100)), min_size=1, max_size=40))
def test_normalized_weights_sum_to_one_per_group(rows):
    grps, wts = zip(*rows)
    used = sorted(set(grps))
    remap = {g: i + 1 for i, g in enumerate(used)}
    patients = pd.DataFrame({"patient_id": np.arange(1, len(rows) + 1), "grp_id": [remap[g] for g in grps], "patient_wt": wts})
    w = normalized_weights(patients)
    sums = pd.Series(w).groupby(patients["grp_id"]).sum()
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)
