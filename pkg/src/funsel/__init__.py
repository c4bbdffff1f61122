"""Sparse scalar-on-function regression with kernel-eigenbasis regularization."""

from .dataset import (
    FunctionalDataset,
    ScoreTensor,
    StandardizationRecord,
    apply_standardization,
    load_curves,
    project_scores,
    rolling_windows,
    standardize,
)
from .errors import FunselError
from .function_space import Grid, GridFunction, l2_inner, l2_norm, trapezoid_grid, uniform_grid
from .kernels import EigenBasis, KernelSpec, build_basis, kernel_eval, truncate_basis
from .model_selection import CvResult, CvSpec, cross_validate, make_folds
from .simulation import (
    Scenario,
    SelectionMetrics,
    generate_predictors,
    generate_response,
    run_scenario,
    selection_metrics,
    true_betas,
)
from .solver import (
    AdaptiveFit,
    Coefficients,
    FitOptions,
    FitResult,
    PathSpec,
    adaptive_fit,
    coordinate_descent,
    descent_objective,
    fit_dataset,
    fit_lambda_path,
    kkt_check,
    lambda_max,
    lambda_path,
    objective_value,
    oracle_fit,
    partial_target,
    predict,
    reconstruct_curve,
    rkhs_norm,
    shrink_update,
)

__version__ = "0.1.0"
