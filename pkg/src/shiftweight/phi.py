"""Feature transforms that feed the importance estimators.

Three modes: pass covariates through unchanged, replace them with a fitted
model's pre-threshold predictions, or concatenate both.  The same fitted
mapper is applied to train and test covariates; targets are only read at
fit time, never at apply time.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Dataset, DimensionMismatchError, ShiftWeightError
from .learners import LearnerConfig, LinearModel, fit_model, predict_raw

__all__ = ["PhiMode", "PhiMapper", "fit_phi", "apply_phi"]


class PhiMode(Enum):
    COVARIATES = "C"
    PREDICTIONS = "P"
    BOTH = "CP"


@dataclass(frozen=True)
class PhiMapper:
    mode: PhiMode
    input_dim: int
    output_dim: int
    model: LinearModel | None = None

    def __post_init__(self):
        if (self.model is None) != (self.mode is PhiMode.COVARIATES):
            raise ShiftWeightError(
                f"mode {self.mode.value} and model presence are inconsistent"
            )


def fit_phi(
    train: Dataset,
    mode: PhiMode,
    learner: LearnerConfig | None = None,
) -> PhiMapper:
    """Fit the transform on the full training split.

    For prediction-bearing modes this trains the task-appropriate learner
    on all training covariates and targets; the identity mode needs no
    fitting at all.
    """
    if mode is PhiMode.COVARIATES:
        return PhiMapper(mode=mode, input_dim=train.d, output_dim=train.d)
    model = fit_model(train, learner)
    k = model.output_dim
    out = k if mode is PhiMode.PREDICTIONS else train.d + k
    return PhiMapper(mode=mode, input_dim=train.d, output_dim=out, model=model)


def apply_phi(mapper: PhiMapper, X: np.ndarray) -> np.ndarray:
    """Map a covariate matrix into the estimator feature space.

    Identity mode returns the input unchanged; prediction mode returns the
    model's pre-threshold scores; the combined mode returns
    ``[X | scores]`` with the original columns first.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != mapper.input_dim:
        raise DimensionMismatchError(
            f"mapper expects {mapper.input_dim} columns, got {X.shape[1]}"
        )
    if mapper.mode is PhiMode.COVARIATES:
        return X
    scores = predict_raw(mapper.model, X)
    if mapper.mode is PhiMode.PREDICTIONS:
        return scores
    return np.hstack([X, scores])
