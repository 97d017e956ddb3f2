"""Probabilistic modeling and deferral-threshold tuning for model cascades."""

from .calibration import Calibrator, EceReport, ece, fit_calibrator, transform
from .cascade import (
    CascadeModel,
    FrontierPoint,
    OperatingPoint,
    ThresholdVector,
    fit_from_dataset,
    load_model,
    save_model,
)
from .copula import GumbelCopula, copula_cdf, fit_theta, kendall_tau, sample_pairs
from .dataset import (
    AlignedDataset,
    PriceSheet,
    QueryRecord,
    balanced_subsample,
    expected_cost_per_model,
    load_dataset,
    split,
    write_dataset,
)
from .evaluation import ErrorCostCurve, auc, compare_frontiers, replay
from .gof import GofResult, kendall_transform_cvm, marginal_cvm, tau_matrix
from .gridsearch import GridSpec, grid_search, pareto_filter
from .marginal import MarginalModel, fit_marginal
from .synth import SynthSpec, emit_dataset, ground_truth_model, sample_chain
from .tuner import TuneConfig, adaptive_infill, solve_single, sweep, tune_with_model_selection

__version__ = "0.1.0"
