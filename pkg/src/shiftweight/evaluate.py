"""Importance-weighted error estimation.

Weighted cross-validation collects per-example errors across held-out
folds, multiplies each by the corresponding training-row importance, and
normalizes by the weight total so the estimate is invariant to the scale
of the weights.  The quality of an estimator variant is the absolute
distance between that estimate and the error actually measured on the
shifted test set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, DimensionMismatchError, RngStream, ShiftWeightError, SplitPair, Task
from .estimators import EstimatorSpec, estimate
from .learners import LearnerConfig, fit_model, per_example_error

__all__ = [
    "ErrorEstimate",
    "EvalResult",
    "FoldTooSmallError",
    "assign_folds",
    "weighted_cv",
    "actual_error",
    "evaluate_pair",
]


class FoldTooSmallError(ShiftWeightError):
    """Fold layout would leave some training fold-complement without a
    class (a class has fewer than two examples, or more folds than rows)."""


@dataclass(frozen=True)
class ErrorEstimate:
    weighted: float
    unweighted: float
    fold_count: int
    per_example: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class EvalResult:
    actual_error: float
    distance_weighted: float
    distance_unweighted: float
    weighted_estimate: float
    unweighted_estimate: float


def assign_folds(train: Dataset, k: int, rng: RngStream) -> np.ndarray:
    """Fold index per row.  Classification folds are stratified (each
    class dealt round-robin after a shuffle) so every training
    fold-complement keeps all classes."""
    if not 2 <= k <= train.n:
        raise FoldTooSmallError(f"fold count {k} outside [2, {train.n}]")
    g = rng.generator()
    folds = np.empty(train.n, dtype=np.int64)
    if train.task is Task.CLASSIFICATION:
        labels = train.labels()
        offset = 0
        for c in range(train.class_count):
            members = np.where(labels == c)[0]
            if members.shape[0] < 2:
                raise FoldTooSmallError(
                    f"class {c} has {members.shape[0]} example(s); it would "
                    "vanish from the training side of its own fold"
                )
            members = g.permutation(members)
            folds[members] = (offset + np.arange(members.shape[0])) % k
            offset += members.shape[0]
    else:
        folds[g.permutation(train.n)] = np.arange(train.n) % k
    return folds


def weighted_cv(
    train: Dataset,
    weights: np.ndarray,
    k: int = 10,
    learner: LearnerConfig | None = None,
    rng: RngStream | None = None,
) -> ErrorEstimate:
    """k-fold cross-validation with importance-weighted aggregation.

    Per-example errors come from the model fitted on the other k-1 folds;
    the weighted estimate is sum(ee * w) / sum(w) and the unweighted one
    is the plain mean, so uniform weights make the two coincide exactly.
    """
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape[0] != train.n:
        raise DimensionMismatchError(
            f"{weights.shape[0]} weights for {train.n} training rows"
        )
    if rng is None:
        rng = RngStream(0)
    folds = assign_folds(train, k, rng)
    errors = np.empty(train.n)
    for fold in range(k):
        held = folds == fold
        model = fit_model(train.take(np.where(~held)[0]), learner)
        errors[held] = per_example_error(model, train.take(np.where(held)[0]))
    total = float(weights.sum())
    if total <= 0:
        raise ShiftWeightError("importance weights sum to zero; cannot normalize")
    return ErrorEstimate(
        weighted=float((errors * weights).sum() / total),
        unweighted=float(errors.mean()),
        fold_count=k,
        per_example=errors,
        weights=weights,
    )


def actual_error(train: Dataset, test: Dataset, learner: LearnerConfig | None = None) -> float:
    """Fit on the full training set; mean 0/1 loss (classification) or
    mean squared error (regression) on the test set."""
    if train.task is not test.task:
        raise ShiftWeightError("train and test disagree on task kind")
    model = fit_model(train, learner)
    return float(per_example_error(model, test).mean())


def evaluate_pair(
    pair: SplitPair,
    spec: EstimatorSpec,
    learner: LearnerConfig | None = None,
    rng: RngStream | None = None,
    folds: int = 10,
    cv_rng: RngStream | None = None,
    error_learner: LearnerConfig | None = None,
) -> EvalResult:
    """Full pipeline for one (split, estimator variant) cell.

    ``cv_rng`` pins the fold layout independently of the estimator stream
    so every variant on the same training split is scored on identical
    folds.  ``error_learner`` decouples the error-estimation model from
    the one used inside the feature transform; by default both use the
    same configuration.
    """
    if rng is None:
        rng = RngStream(pair.seed)
    if cv_rng is None:
        cv_rng = rng.child("cv-folds")
    if error_learner is None:
        error_learner = learner
    w = estimate(spec, pair.train, pair.test.covariates, rng.child("estimate"), learner)
    est = weighted_cv(pair.train, w, folds, error_learner, cv_rng)
    actual = actual_error(pair.train, pair.test, error_learner)
    return EvalResult(
        actual_error=actual,
        distance_weighted=abs(est.weighted - actual),
        distance_unweighted=abs(est.unweighted - actual),
        weighted_estimate=est.weighted,
        unweighted_estimate=est.unweighted,
    )
