"""Health economic simulation: cohort, individual-level and partitioned survival models."""

from .cea import CEOutput, cea, cea_pw, icer_summary, summarize_ce
from .cohort import CohortDtstm, CohortSettings, integrate_statevals, sim_stateprobs_cohort
from .data import ModelContext, TransitionMatrix, add_intercept, expand, get_labels, load_context
from .dists import Distribution, dist_eval, dist_sample, dist_sample_truncated
from .indiv import DiseaseProgress, IndivCtstm, TransitionModel, sim_disease, sim_stateprobs_indiv, sim_values_indiv
from .outcomes import StateProbs
from .params import MlogitParams, SurvivalParams, mom_beta, mom_gamma, mom_lognormal, predict_mlogit, xbeta
from .psm import Psm, SurvivalCurves, sim_survival, stateprobs_from_survival
from .statevals import MeanValueParams, StateValTable, ValueQuery, predict_stateval, stateval_draw
from .transprobs import TransProbArray, apply_rr, expmat, qmatrix, tpmatrix_id

__all__ = [
    "CEOutput", "cea", "cea_pw", "icer_summary", "summarize_ce",
    "CohortDtstm", "CohortSettings", "integrate_statevals", "sim_stateprobs_cohort",
    "ModelContext", "TransitionMatrix", "add_intercept", "expand", "get_labels", "load_context",
    "Distribution", "dist_eval", "dist_sample", "dist_sample_truncated",
    "DiseaseProgress", "IndivCtstm", "TransitionModel", "sim_disease", "sim_stateprobs_indiv", "sim_values_indiv",
    "StateProbs",
    "MlogitParams", "SurvivalParams", "mom_beta", "mom_gamma", "mom_lognormal", "predict_mlogit", "xbeta",
    "Psm", "SurvivalCurves", "sim_survival", "stateprobs_from_survival",
    "MeanValueParams", "StateValTable", "ValueQuery", "predict_stateval", "stateval_draw",
    "TransProbArray", "apply_rr", "expmat", "qmatrix", "tpmatrix_id",
]
