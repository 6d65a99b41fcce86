import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

from cemodel.data import ModelContext, TransitionMatrix, add_intercept, expand
from cemodel.params import SurvivalParams

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# constant hazards of a three-state progressive model
RATES = {1: 0.28, 2: 0.013, 3: 0.10}


def illness_death() -> TransitionMatrix:
    return TransitionMatrix([[None, 1, 2], [None, None, 3], [None, None, None]])


def make_ctx(n_patients=1, n_strategies=1, tmat=None, **patient_cols) -> ModelContext:
    patients = pd.DataFrame({"patient_id": np.arange(1, n_patients + 1), **patient_cols})
    return ModelContext(
        pd.DataFrame({"strategy_id": np.arange(1, n_strategies + 1)}),
        patients,
        pd.DataFrame({"state_id": [1, 2]}),
        tmat if tmat is not None else illness_death(),
    )


def const_params(family: str, n_samples: int = 1, **values) -> SurvivalParams:
    """Intercept-only coefficients reproducing the natural-scale ``values``."""
    from cemodel.dists import LINKS

    coefs = {}
    for name, v in values.items():
        link = LINKS[family][name]
        b = np.log(v) if link == "log" else v
        coefs[name] = pd.DataFrame({"(Intercept)": np.full(n_samples, b)})
    return SurvivalParams(family, coefs)


def exp_model(n_samples=1, rates=RATES):
    return {k: const_params("exponential", n_samples, rate=r) for k, r in rates.items()}


def analytic_occupancy(t, rates=RATES):
    from scipy.linalg import expm

    l12, l13, l23 = rates[1], rates[2], rates[3]
    q = np.array([[-(l12 + l13), l12, l13], [0, -l23, l23], [0, 0, 0]])
    return expm(t * q)[0]


@pytest.fixture
def tmat():
    return illness_death()


@pytest.fixture
def input_data_factory():
    def make(n_patients=1, n_strategies=1, **cols):
        return add_intercept(expand(make_ctx(n_patients, n_strategies, **cols)))

    return make
