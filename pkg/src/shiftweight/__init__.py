"""Importance-weight estimation under covariate shift.

The package estimates the density ratio p_test(x) / p_train(x) with five
estimators (LR, KMM, EKMM, KDE, KLIEP), optionally routed through a
feature transform that injects model predictions, and ships a benchmark
harness that injects controlled covariate shift into datasets, scores
importance-weighted cross-validation against the actual test error, and
ranks estimator variants with Friedman/Nemenyi statistics.
"""

from .core import (
    Dataset,
    RngStream,
    ScalingRecord,
    ShiftWeightError,
    SplitPair,
    Task,
    read_dataset_csv,
    standardize,
    validate_dataset,
    write_dataset_csv,
)
from .estimators import EnsembleAxis, EstimatorSpec, Method, estimate
from .evaluate import EvalResult, actual_error, evaluate_pair, weighted_cv
from .inject import (
    SigmoidSplitConfig,
    dhondt_allocate,
    inject_classification,
    inject_regression,
    sample_prevalences,
)
from .kernels import KernelConfig, KernelFamily, gaussian_kernel, kernel_matrix
from .learners import LearnerConfig, LinearModel, fit_logistic, fit_ridge
from .phi import PhiMapper, PhiMode, apply_phi, fit_phi
from .stats import friedman_ranks, friedman_statistic, nemenyi_cd, significance_marks

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EnsembleAxis",
    "EstimatorSpec",
    "EvalResult",
    "KernelConfig",
    "KernelFamily",
    "LearnerConfig",
    "LinearModel",
    "Method",
    "PhiMapper",
    "PhiMode",
    "RngStream",
    "ScalingRecord",
    "ShiftWeightError",
    "SigmoidSplitConfig",
    "SplitPair",
    "Task",
    "actual_error",
    "apply_phi",
    "dhondt_allocate",
    "estimate",
    "evaluate_pair",
    "fit_logistic",
    "fit_phi",
    "fit_ridge",
    "friedman_ranks",
    "friedman_statistic",
    "gaussian_kernel",
    "inject_classification",
    "inject_regression",
    "kernel_matrix",
    "nemenyi_cd",
    "read_dataset_csv",
    "sample_prevalences",
    "significance_marks",
    "standardize",
    "validate_dataset",
    "weighted_cv",
    "write_dataset_csv",
    "__version__",
]
