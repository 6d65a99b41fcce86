import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from cemodel.cohort import CohortDtstm, CohortSettings, integrate_statevals, sim_stateprobs_cohort
from cemodel.outcomes import StateProbs
from cemodel.statevals import MeanValueParams
from cemodel.transprobs import TransProbArray, tpmatrix_id, transprobs_from_rates

from conftest import analytic_occupancy, exp_model, illness_death

ONE = pd.DataFrame({"strategy_id": [1], "patient_id": [1]})


def constant_tp(p, n_samples=1):
    p = np.asarray(p, dtype=float)
    return TransProbArray(np.stack([p] * n_samples), tpmatrix_id(ONE, n_samples))


def ones_values(n_states, n_samples=1, value=1.0):
    return MeanValueParams(np.full((n_samples, 1, 1, n_states, 1), value), [0.0], np.array([1]), np.array([1]))


def alive_probs(alive, times):
    alive = np.asarray(alive, dtype=float)
    probs = np.stack([alive, 1 - alive], axis=-1)[None, None, None]
    return StateProbs(probs, np.asarray(times, dtype=float), np.array([1]), np.array([1]), np.array([1]))


def test_two_cycle_hand_example():
    sp = sim_stateprobs_cohort(constant_tp([[0.9, 0.1], [0, 1]]), [1, 0], CohortSettings(1.0, 2))
    np.testing.assert_allclose(sp.probs[0, 0, 0, 2], [0.81, 0.19], atol=1e-15)


def test_identity_keeps_initial_state():
    sp = sim_stateprobs_cohort(constant_tp(np.eye(3)), [0.2, 0.3, 0.5], CohortSettings(0.5, 7))
    assert np.all(sp.probs[0, 0, 0] == [0.2, 0.3, 0.5])


def test_matches_matrix_exponential():
    data = pd.DataFrame({"strategy_id": [1], "patient_id": [1], "(Intercept)": [1.0]})
    tp = transprobs_from_rates(illness_death(), exp_model(2), data, 0.25)
    sp = sim_stateprobs_cohort(tp, settings=CohortSettings(0.25, 80))
    oracle = np.array([analytic_occupancy(t) for t in sp.times])
    for s in range(2):
        np.testing.assert_allclose(sp.probs[s, 0, 0], oracle, atol=1e-8, rtol=0)


def test_time_varying_matrices_selected_by_cycle_start():
    ids = tpmatrix_id(ONE, 1, time_start=[0, 1])
    tp = TransProbArray(np.stack([np.eye(2), [[0.5, 0.5], [0, 1]]]), ids)
    sp = sim_stateprobs_cohort(tp, settings=CohortSettings(0.5, 4))
    np.testing.assert_allclose(sp.probs[0, 0, 0, :, 0], [1, 1, 1, 0.5, 0.25])


def test_interval_gap_is_an_error():
    ids = tpmatrix_id(ONE, 1, time_start=[0, 1])
    ids["time_start"] = [0.5, 1.0]
    tp = TransProbArray(np.stack([np.eye(2)] * 2), ids)
    with pytest.raises(ValueError, match="no transition matrix covering time"):
        sim_stateprobs_cohort(tp, settings=CohortSettings(0.5, 4))


def test_bad_initial_state():
    with pytest.raises(ValueError, match="x0"):
        sim_stateprobs_cohort(constant_tp(np.eye(2)), [0.5, 0.6], CohortSettings(1.0, 1))


@pytest.mark.parametrize("method,expected", [("left", 0.25), ("right", 0.75), ("trapezoid", 0.5)])
def test_riemann_rules_on_linear_integrand(method, expected):
    sp = alive_probs([0.0, 0.5, 1.0], [0.0, 0.5, 1.0])
    got = integrate_statevals(sp, ones_values(1), [0.0], method)
    assert got.shape == (1, 1, 1, 1, 1)
    assert abs(got.item() - expected) < 1e-15


def test_unit_integrand_and_discounting():
    t = np.linspace(0, 10, 41)
    assert abs(integrate_statevals(alive_probs(np.ones_like(t), t), ones_values(1), [0.0]).item() - 10.0) < 1e-12
    t = np.arange(1001) * 1e-3
    got = integrate_statevals(alive_probs(np.ones_like(t), t), ones_values(1), [0.03]).item()
    assert abs(got - (-np.expm1(-0.03)) / 0.03) < 1e-5


def test_validation():
    t = np.array([0.0, 1.0])
    sp = alive_probs([1.0, 1.0], t)
    with pytest.raises(ValueError, match="missing state values"):
        integrate_statevals(sp, ones_values(2), [0.0])
    with pytest.raises(ValueError, match="nonnegative"):
        integrate_statevals(sp, ones_values(1), [-0.01])
    reset = MeanValueParams(np.ones((1, 1, 1, 1, 1)), [0.0], np.array([1]), np.array([1]), time_reset=True)
    with pytest.raises(ValueError, match="time in state"):
        integrate_statevals(sp, reset, [0.0])
    with pytest.raises(ValueError):
        CohortSettings(0.0, 10)


def _survival_integral(lam, r, u, method):
    n = int(round(10 / u))
    t = np.arange(n + 1) * u
    return integrate_statevals(alive_probs(np.exp(-lam * t), t), ones_values(1), [r], method).item()


@given(st.floats(0.01, 1.0), st.floats(0.0, 0.1))
def test_trapezoid_between_left_and_right(lam, r):
    left, right, trap = (_survival_integral(lam, r, 0.5, m) for m in ("left", "right", "trapezoid"))
    assert right <= trap <= left


def test_trapezoid_second_order():
    lam, r = 0.4, 0.03
    exact = -np.expm1(-(lam + r) * 10) / (lam + r)
    errs = [abs(_survival_integral(lam, r, u, "trapezoid") - exact) for u in (0.5, 0.25, 0.125)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.1))
def test_cohort_invariants(seed, r):
    rng = np.random.default_rng(seed)
    rates = dict(zip((1, 2, 3), rng.uniform(0.0, 1.0, 3)))
    q = np.array([[-(rates[1] + rates[2]), rates[1], rates[2]], [0, -rates[3], rates[3]], [0, 0, 0]])
    settings = CohortSettings(0.25, 40)
    sp = sim_stateprobs_cohort(constant_tp(expm(0.25 * q)), settings=settings)
    np.testing.assert_allclose(sp.probs.sum(axis=-1), 1.0, atol=1e-8)
    assert np.all(np.diff(sp.probs[..., -1], axis=-1) >= -1e-12)
    lys = integrate_statevals(sp, ones_values(2), [r]).sum()
    assert lys <= 10.0 + 1e-12


def test_model_wrapper_frames():
    data = pd.DataFrame({"strategy_id": [1], "patient_id": [1], "(Intercept)": [1.0]})
    tp = transprobs_from_rates(illness_death(), exp_model(1), data, 0.25)
    u = MeanValueParams(np.array([0.8, 0.6]).reshape(1, 1, 1, 2, 1), [0.0], np.array([1]), np.array([1]))
    c = MeanValueParams(np.array([2000.0, 9500.0]).reshape(1, 1, 1, 2, 1), [0.0], np.array([1]), np.array([1]))
    model = CohortDtstm(tp, CohortSettings(0.25, 40), utility=u, costs={"medical": c})
    q = model.sim_qalys(dr=[0.0, 0.03])
    assert list(q.columns) == ["sample", "strategy_id", "patient_id", "grp_id", "patient_wt", "state_id", "dr", "qalys", "lys"]
    assert len(q) == 4
    assert np.all(q["qalys"] < q["lys"])
    costs = model.sim_costs(dr=[0.03])
    assert costs["category"].unique().tolist() == ["medical"]
