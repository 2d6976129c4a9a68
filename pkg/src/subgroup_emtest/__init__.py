"""Penalized EM test for the number of latent subgroups in finite mixtures
of generalized linear models, calibrated by a chi-bar-square limit."""

__version__ = "0.1.0"

from .emtest import EmTestConfig, EmTestResult, beta_update, em_statistic, partition_eta, penalty_p
from .errors import (
    ConvergenceError,
    DegenerateComponentError,
    DegenerateLikelihoodError,
    DegeneratePartitionError,
    EmTestError,
    InvalidInputError,
    NumericalError,
    SeparationError,
    SingularFitError,
)
from .glm import Dataset, Family, LinearConstraint, eta_derivative_ratios, fit_weighted_glm, log_density
from .mixture import FitConfig, MixingDistribution, NullFit, canonical_order, fit_null, mixture_loglik
from .nnqp import brute_force_nnqp, solve_nnqp
from .nulldist import ChiBarWeights, chibar_pvalue, estimate_chibar_weights, score_vectors, tilde_b22
from .predict import PredictReport, predict_cv
from .procedure import SequentialResult, TestConfig, TestReport, run_test, sequential_test, tune_c
from .simgen import (
    ScenarioSpec,
    generate_scenario,
    get_scenario,
    list_builtin_scenarios,
    monte_carlo_rejection,
)
