import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from cemodel.data import ModelContext, TransitionMatrix, add_intercept, expand
from cemodel.indiv import (
    DISPROG_COLUMNS,
    DiseaseProgress,
    IndivCtstm,
    TransitionModel,
    sim_disease,
    sim_stateprobs_indiv,
    sim_values_indiv,
)
from cemodel.params import SurvivalParams
from cemodel.statevals import MeanValueParams

from conftest import analytic_occupancy, const_params, exp_model, illness_death


def single_row_dp(rows, n_states=3, max_t=100.0):
    df = pd.DataFrame(rows, columns=DISPROG_COLUMNS)
    weights = pd.DataFrame({"strategy_id": [1], "patient_id": [1], "grp_id": [1], "patient_wt": [1.0]})
    return DiseaseProgress(df, weights, n_states, 1, max_t, np.array([1]))


def values(arr, starts=(0.0,), time_reset=False):
    arr = np.asarray(arr, dtype=float)
    return MeanValueParams(arr.reshape(1, 1, 1, -1, len(starts)), list(starts), np.array([1]), np.array([1]), time_reset)


def check_trajectories(df, death):
    keys = ["sample", "strategy_id", "patient_id"]
    g = df.groupby(keys, sort=False)
    assert (g["time_start"].first() == 0).all()
    assert (g["final"].sum() == 1).all()
    assert (g["final"].last() == 1).all()
    prev_stop = g["time_stop"].shift()
    same = prev_stop.notna()
    assert np.array_equal(df.loc[same, "time_start"].to_numpy(), prev_stop[same].to_numpy())
    prev_to = g["to"].shift()
    assert np.array_equal(df.loc[same, "from"].to_numpy(), prev_to[same].to_numpy())
    assert (df["time_stop"] >= df["time_start"]).all()
    last = df[df["final"] == 1]
    assert ((last["to"] == death) | (last["to"] == last["from"])).all()


def test_exponential_mean_time():
    tmat = TransitionMatrix([[None, 1], [None, None]])
    ctx = ModelContext(pd.DataFrame({"strategy_id": [1]}), pd.DataFrame({"patient_id": np.arange(1, 100_001)}),
                       pd.DataFrame({"state_id": [1]}), tmat)
    lam = 0.5
    tm = TransitionModel(tmat, {1: const_params("exponential", rate=lam)}, max_t=1e9)
    dp = sim_disease(tm, add_intercept(expand(ctx)), 1, seed=11)
    t = dp.data["time_stop"].to_numpy()
    se = (1 / lam) / np.sqrt(t.size)
    assert abs(t.mean() - 1 / lam) < 3 * se


def test_patient_at_max_age_dies_immediately(input_data_factory):
    data = input_data_factory(2, age=[100.0, 60.0])
    tm = TransitionModel(illness_death(), exp_model(), start_age="age", max_age=100.0)
    df = sim_disease(tm, data, 1, seed=1).data
    first = df[df["patient_id"] == 1]
    assert len(first) == 1
    assert first[["to", "final", "time_start", "time_stop"]].iloc[0].tolist() == [3, 1, 0.0, 0.0]
    other = df[df["patient_id"] == 2]
    assert other["time_stop"].max() <= 40.0


def test_zero_progression_hazard(input_data_factory):
    tm = TransitionModel(illness_death(), {
        1: SurvivalParams("exponential", {"rate": pd.DataFrame({"(Intercept)": [-np.inf]})}),
        **{k: const_params("exponential", rate=r) for k, r in ((2, 0.2), (3, 0.1))},
    })
    df = sim_disease(tm, input_data_factory(500), 2, seed=3).data
    assert len(df) == 1000
    assert (df["from"] == 1).all() and (df["to"] == 3).all()


def test_unknown_parameters_rejected(input_data_factory):
    params = exp_model()
    params[3].coefs["rate"]["(Intercept)"] = [np.nan]
    tm = TransitionModel(illness_death(), params)
    with pytest.raises(ValueError):
        sim_disease(tm, input_data_factory(3), 1, seed=0)


def test_transition_model_validation():
    with pytest.raises(ValueError, match="one model per transition"):
        TransitionModel(illness_death(), {1: const_params("exponential", rate=0.1)})
    with pytest.raises(ValueError, match="start_age"):
        TransitionModel(illness_death(), exp_model(), max_age=100.0)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["reset", "forward"]))
def test_trajectory_invariants(seed, clock):
    ctx = ModelContext(pd.DataFrame({"strategy_id": [1, 2]}), pd.DataFrame({"patient_id": np.arange(1, 51)}),
                       pd.DataFrame({"state_id": [1, 2]}), illness_death())
    params = {k: const_params("weibull", shape=s, scale=sc) for k, s, sc in ((1, 1.3, 4.0), (2, 0.8, 30.0), (3, 1.1, 6.0))}
    tm = TransitionModel(illness_death(), params, clock=clock, max_t=15.0)
    df = sim_disease(tm, add_intercept(expand(ctx)), 3, seed=seed).data
    assert list(df.columns) == DISPROG_COLUMNS
    check_trajectories(df, 3)
    assert df["time_stop"].max() <= 15.0


def test_stateprobs_match_analytic(input_data_factory):
    tm = TransitionModel(illness_death(), exp_model())
    dp = sim_disease(tm, input_data_factory(10_000), 1, seed=2024)
    grid = np.arange(0, 20.5, 0.5)
    sp = sim_stateprobs_indiv(dp, grid)
    oracle = np.array([analytic_occupancy(t) for t in grid])
    assert np.abs(sp.probs[0, 0, 0] - oracle).max() < 0.015
    np.testing.assert_allclose(sp.probs[0, 0, 0, 0], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(sp.probs.sum(axis=-1), 1.0, atol=1e-9)


def test_stateprobs_dead_and_censored():
    dead = single_row_dp([(1, 1, 1, 1, 1, 3, 1, 0.0, 5.0)])
    np.testing.assert_array_equal(sim_stateprobs_indiv(dead, [0, 5, 10]).probs[0, 0, 0], [[1, 0, 0], [0, 0, 1], [0, 0, 1]])
    cens = single_row_dp([(1, 1, 1, 1, 1, 2, 0, 0.0, 2.0), (1, 1, 1, 1, 2, 2, 1, 2.0, 4.0)], max_t=4.0)
    np.testing.assert_array_equal(sim_stateprobs_indiv(cens, [0, 2, 4]).probs[0, 0, 0], [[1, 0, 0], [0, 1, 0], [0, 1, 0]])


def test_values_hand_examples():
    dp = single_row_dp([(1, 1, 1, 1, 1, 3, 1, 0.0, 1.0)])
    got = sim_values_indiv(dp, values([1.0, 1.0]), [0.03, 0.0])
    assert abs(got[0, 0, 0, 0, 0] - (-np.expm1(-0.03)) / 0.03) < 1e-12
    assert got[0, 0, 0, 0, 1] == 1.0
    five = single_row_dp([(1, 1, 1, 1, 1, 3, 1, 0.0, 5.0)])
    assert sim_values_indiv(five, values([1.0, 1.0]), [0.0])[0, 0, 0, 0, 0] == 5.0


def test_drug_cost_time_reset():
    dp = single_row_dp([(1, 1, 1, 1, 1, 2, 0, 0.0, 2.0), (1, 1, 1, 1, 2, 3, 1, 2.0, 3.0)])
    drug = values([[0.0, 0.0], [1500.0, 1200.0]], starts=(0.0, 0.25), time_reset=True)
    got = sim_values_indiv(dp, drug, [0.0])
    assert abs(got[0, 0, 0, 1, 0] - 1275.0) < 1e-9
    model_time = values([[0.0, 0.0], [1500.0, 1200.0]], starts=(0.0, 0.25))
    assert sim_values_indiv(dp, model_time, [0.0])[0, 0, 0, 1, 0] == 1200.0


def test_negative_discount_rejected():
    dp = single_row_dp([(1, 1, 1, 1, 1, 3, 1, 0.0, 1.0)])
    with pytest.raises(ValueError, match="nonnegative"):
        sim_values_indiv(dp, values([1.0, 1.0]), [-0.03])


def test_unit_utility_equals_mean_survival(input_data_factory):
    data = input_data_factory(300, 2)
    tm = TransitionModel(illness_death(), exp_model(4), max_t=30.0)
    ones = MeanValueParams(np.ones((4, 2, 300, 2, 1)), [0.0], np.array([1, 2]), np.arange(1, 301))
    model = IndivCtstm(tm, data, 4, seed=5, utility=ones)
    dp = model.sim_disease()
    q = model.sim_qalys(dr=[0.0], lys=True)
    total = q.groupby(["sample", "strategy_id"])["qalys"].sum().to_numpy()
    surv = dp.data[dp.data["final"] == 1].groupby(["sample", "strategy_id"])["time_stop"].mean().to_numpy()
    np.testing.assert_allclose(total, surv, rtol=1e-12)
    np.testing.assert_allclose(q["qalys"], q["lys"], rtol=1e-12)


def test_clock_forward_matches_reset_for_exponential(input_data_factory):
    data = input_data_factory(10_000)
    grid = np.arange(0, 15.5, 0.5)
    probs = []
    for clock in ("reset", "forward"):
        dp = sim_disease(TransitionModel(illness_death(), exp_model(), clock=clock), data, 1, seed=99)
        probs.append(sim_stateprobs_indiv(dp, grid).probs)
    assert np.abs(probs[0] - probs[1]).max() < 0.025


def test_thread_count_does_not_change_output(input_data_factory):
    data = input_data_factory(1000)
    tm = TransitionModel(illness_death(), exp_model(300))
    a = sim_disease(tm, data, 300, seed=8, threads=1).data
    b = sim_disease(tm, data, 300, seed=8, threads=4).data
    pd.testing.assert_frame_equal(a, b, check_exact=True)
    c = sim_disease(tm, data, 300, seed=9, threads=1).data
    assert not a["time_stop"].equals(c["time_stop"])


def test_cured_gompertz_censors_at_max_t(input_data_factory):
    params = {
        1: const_params("gompertz", shape=-1.0, rate=0.05),
        2: const_params("gompertz", shape=-1.0, rate=0.01),
        3: const_params("exponential", rate=0.1),
    }
    dp = sim_disease(TransitionModel(illness_death(), params, max_t=20.0), input_data_factory(2000), 1, seed=4)
    final = dp.data[dp.data["final"] == 1]
    censored = final[final["to"] != 3]
    assert len(censored) > 0
    assert (censored["time_stop"] == 20.0).all()
    assert (censored["to"] == censored["from"]).all()
