"""Bayesian-optimization dose finding for multi-agent trials.

Subpackages cover the Gaussian-process surrogate (:mod:`dosebo.gp`),
acquisition functions (:mod:`dosebo.acquisition`), the sequential trial
engine (:mod:`dosebo.design`), simulation truth functions
(:mod:`dosebo.scenarios`), the Monte Carlo harness
(:mod:`dosebo.simulate`), and a small HTTP service for conducting a
live trial (:mod:`dosebo.server`).
"""

__version__ = "0.1.0"

from dosebo.gp import (
    FitConfig,
    GpHyperparameters,
    GpModel,
    InsufficientDataError,
    NumericalError,
    build_covariance,
    fit,
    kernel,
    kernel_matrix,
    marginal_log_likelihood,
)
from dosebo.acquisition import (
    AcquisitionContext,
    augmented_expected_improvement,
    effective_best,
    expected_improvement,
    suggest_next_dose,
)
from dosebo.design import (
    DesignConfig,
    TrialEngine,
    make_grid,
    recommend,
    run_trial,
    snap_to_grid,
    sobol_initial_design,
    update_stopping,
)
from dosebo.scenarios import (
    GaussianBump,
    ScenarioSpec,
    ScenarioValidationError,
    StratumObjective,
    builtin_scenarios,
    get_scenario,
    load_scenario,
    save_scenario,
    validate_truth,
)
from dosebo.simulate import (
    DeltaCalibration,
    McResult,
    MetricRecord,
    abs_deviation,
    calibrate_delta,
    dose_units_error,
    root_posterior_squared_error_loss,
    run_mc,
    write_run_dir,
)

__all__ = [
    "__version__",
    "FitConfig",
    "GpHyperparameters",
    "GpModel",
    "InsufficientDataError",
    "NumericalError",
    "build_covariance",
    "fit",
    "kernel",
    "kernel_matrix",
    "marginal_log_likelihood",
    "AcquisitionContext",
    "augmented_expected_improvement",
    "effective_best",
    "expected_improvement",
    "suggest_next_dose",
    "DesignConfig",
    "TrialEngine",
    "make_grid",
    "recommend",
    "run_trial",
    "snap_to_grid",
    "sobol_initial_design",
    "update_stopping",
    "GaussianBump",
    "ScenarioSpec",
    "ScenarioValidationError",
    "StratumObjective",
    "builtin_scenarios",
    "get_scenario",
    "load_scenario",
    "save_scenario",
    "validate_truth",
    "DeltaCalibration",
    "McResult",
    "MetricRecord",
    "abs_deviation",
    "calibrate_delta",
    "dose_units_error",
    "root_posterior_squared_error_loss",
    "run_mc",
    "write_run_dir",
]
