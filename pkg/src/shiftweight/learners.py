"""In-repo base learners: ridge regression and one-vs-rest logistic regression.

These provide (a) the model whose pre-threshold predictions feed the
feature transform and (b) the per-example errors consumed by weighted
cross-validation.  Both are linear models with an unpenalized bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Dataset, DimensionMismatchError, ShiftWeightError, Task

__all__ = [
    "ModelKind",
    "LinearModel",
    "LearnerConfig",
    "SingularSystemError",
    "DegenerateClassError",
    "fit_ridge",
    "fit_logistic",
    "fit_model",
    "predict_raw",
    "per_example_error",
]

_PROB_LO = np.nextafter(0.0, 1.0)
_PROB_HI = np.nextafter(1.0, 0.0)


class SingularSystemError(ShiftWeightError):
    """Ridge normal equations are singular (rank-deficient design at zero
    regularization)."""


class DegenerateClassError(ShiftWeightError):
    """A class is absent from the training data."""


class ModelKind(Enum):
    RIDGE = "ridge"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters shared by both learner families."""

    regularization: float = 1.0
    max_iter: int = 20_000
    tol: float = 1e-6

    def to_dict(self) -> dict:
        return {
            "regularization": self.regularization,
            "max_iter": self.max_iter,
            "tol": self.tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerConfig":
        return cls(**d)


@dataclass(frozen=True)
class LinearModel:
    """weights [d x k] and bias [k]; k = 1 for ridge, k = class count for
    one-vs-rest logistic."""

    weights: np.ndarray
    bias: np.ndarray
    kind: ModelKind
    regularization: float

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(
            self, "bias", np.asarray(self.bias, dtype=np.float64).ravel()
        )
        self.weights.setflags(write=False)
        self.bias.setflags(write=False)

    @property
    def output_dim(self) -> int:
        return self.weights.shape[1]

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind.value,
                "regularization": self.regularization,
                "weights": self.weights.tolist(),
                "bias": self.bias.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        d = json.loads(text)
        return cls(
            weights=np.array(d["weights"], dtype=np.float64),
            bias=np.array(d["bias"], dtype=np.float64),
            kind=ModelKind(d["kind"]),
            regularization=float(d["regularization"]),
        )


def fit_ridge(train: Dataset, regularization: float = 1.0) -> LinearModel:
    """Solve the ridge normal equations with an unpenalized bias.

    Minimizes ||X w + b - y||^2 + regularization * ||w||^2 exactly via the
    (d+1)-dimensional linear system; the gradient residual of the solution
    is checked to 1e-8 (relative) and a SingularSystemError is raised when
    the system cannot be solved to that accuracy.
    """
    if train.task is not Task.REGRESSION:
        raise ShiftWeightError("fit_ridge requires a regression dataset")
    lam = float(regularization)
    if lam < 0:
        raise ShiftWeightError("regularization must be >= 0")
    X, y = train.covariates, train.targets
    n, d = X.shape
    ones = np.ones(n)
    # [X^T X + lam I, X^T 1; 1^T X, n] [w; b] = [X^T y; 1^T y]
    lhs = np.empty((d + 1, d + 1))
    lhs[:d, :d] = X.T @ X + lam * np.eye(d)
    lhs[:d, d] = X.T @ ones
    lhs[d, :d] = ones @ X
    lhs[d, d] = n
    rhs = np.concatenate([X.T @ y, [y.sum()]])
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    residual = lhs @ sol - rhs
    scale = max(1.0, float(np.abs(rhs).max()))
    if np.abs(residual).max() > 1e-8 * scale:
        raise SingularSystemError(
            "normal equations solved to residual "
            f"{np.abs(residual).max():.3e} (> 1e-8 relative); the design is "
            "rank-deficient at this regularization"
        )
    return LinearModel(
        weights=sol[:d].reshape(d, 1),
        bias=sol[d:],
        kind=ModelKind.RIDGE,
        regularization=lam,
    )


def logistic_objective_grad(X, targets01, w, b, lam):
    """Regularized binary cross-entropy (sum form) and its gradient.

    objective = sum_i [softplus(z_i) - t_i z_i] + lam/2 ||w||^2 with
    z = X w + b; the bias is unpenalized.  Exposed at module level so the
    gradient can be verified against finite differences.
    """
    z = X @ w + b
    # softplus(z) = max(z, 0) + log1p(exp(-|z|)), stable for large |z|
    obj = float(
        np.sum(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - targets01 * z)
        + 0.5 * lam * (w @ w)
    )
    p = _sigmoid(z)
    resid = p - targets01
    grad_w = X.T @ resid + lam * w
    grad_b = float(resid.sum())
    return obj, grad_w, grad_b


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _fit_binary_logistic(X, targets01, lam, max_iter, tol):
    """Gradient descent with backtracking; objective is non-increasing."""
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    obj, gw, gb = logistic_objective_grad(X, targets01, w, b, lam)
    step = 1.0
    for _ in range(max_iter):
        gnorm_inf = max(float(np.abs(gw).max(initial=0.0)), abs(gb))
        if gnorm_inf <= tol:
            break
        g2 = float(gw @ gw) + gb * gb
        step = min(step * 2.0, 1.0e6)
        while True:
            w_new = w - step * gw
            b_new = b - step * gb
            obj_new, gw_new, gb_new = logistic_objective_grad(
                X, targets01, w_new, b_new, lam
            )
            if obj_new <= obj - 1.0e-4 * step * g2:
                break
            step *= 0.5
            if step < 1.0e-20:
                # gradient direction yields no decrease at float precision
                return w, b
        assert obj_new <= obj + 1e-10 * (1.0 + abs(obj)), "objective increased"
        w, b, obj, gw, gb = w_new, b_new, obj_new, gw_new, gb_new
    return w, b


def fit_logistic(train: Dataset, regularization: float = 1.0,
                 max_iter: int = 20_000, tol: float = 1e-6) -> LinearModel:
    """One-vs-rest L2-regularized logistic regression.

    Each class gets its own binary model (class vs rest) fit by gradient
    descent with a backtracking line search; training stops when the
    gradient infinity-norm falls below ``tol`` or at ``max_iter``.
    """
    if train.task is not Task.CLASSIFICATION:
        raise ShiftWeightError("fit_logistic requires a classification dataset")
    lam = float(regularization)
    if lam < 0:
        raise ShiftWeightError("regularization must be >= 0")
    m = train.class_count
    labels = train.labels()
    counts = np.bincount(labels, minlength=m)
    missing = np.where(counts == 0)[0]
    if missing.size:
        raise DegenerateClassError(f"classes {missing.tolist()} absent from train")
    X = train.covariates
    W = np.zeros((train.d, m))
    B = np.zeros(m)
    for c in range(m):
        t = (labels == c).astype(np.float64)
        W[:, c], B[c] = _fit_binary_logistic(X, t, lam, max_iter, tol)
    return LinearModel(weights=W, bias=B, kind=ModelKind.LOGISTIC, regularization=lam)


def fit_model(train: Dataset, cfg: LearnerConfig | None = None) -> LinearModel:
    """Fit the task-appropriate learner: ridge for regression, one-vs-rest
    logistic for classification."""
    cfg = cfg or LearnerConfig()
    if train.task is Task.REGRESSION:
        return fit_ridge(train, cfg.regularization)
    return fit_logistic(train, cfg.regularization, cfg.max_iter, cfg.tol)


def predict_raw(model: LinearModel, X: np.ndarray) -> np.ndarray:
    """Pre-threshold scores, one row per example.

    Ridge returns the linear outputs (n x 1).  Logistic returns per-class
    one-vs-rest probabilities (n x m), each the sigmoid of its own logit,
    deliberately not renormalized across classes; values are clamped to
    the open interval (0, 1) so downstream ratios stay finite.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.weights.shape[0]:
        raise DimensionMismatchError(
            f"model expects {model.weights.shape[0]} columns, got {X.shape[1]}"
        )
    scores = X @ model.weights + model.bias
    if model.kind is ModelKind.LOGISTIC:
        scores = np.clip(_sigmoid(scores), _PROB_LO, _PROB_HI)
    return scores


def per_example_error(model: LinearModel, data: Dataset) -> np.ndarray:
    """Per-row loss: 0/1 on the argmax class for classification, squared
    error for regression."""
    scores = predict_raw(model, data.covariates)
    if model.kind is ModelKind.LOGISTIC:
        if data.task is not Task.CLASSIFICATION:
            raise ShiftWeightError("logistic model applied to a regression dataset")
        predicted = np.argmax(scores, axis=1)
        return (predicted != data.labels()).astype(np.float64)
    if data.task is not Task.REGRESSION:
        raise ShiftWeightError("ridge model applied to a classification dataset")
    return (scores[:, 0] - data.targets) ** 2
