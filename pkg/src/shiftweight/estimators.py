"""The five importance estimators.

Every estimator consumes a pair of feature matrices (train rows, test
rows) that already went through the feature transform, and returns one
nonnegative weight per training row: the estimated density ratio
p_test / p_train evaluated at that row.

* LR: a logistic discriminator separating test rows from train rows; the
  weight comes from the posterior odds scaled by the sample sizes.
* KMM: a box/slab-constrained QP minimizing the maximum mean discrepancy
  between the reweighted train kernel mean and the test kernel mean.
* EKMM: ensemble of KMM solves over a random partition (of the test rows
  in the size-weighted-sum variant, or of the train rows where each row
  keeps the weight from its own shard's solve).
* KDE: ratio of two kernel density estimates.
* KLIEP: likelihood ascent on a nonnegative combination of Gaussian basis
  functions centered at test rows, with mean weight pinned to one over the
  training rows; the bandwidth is chosen by 3-fold likelihood
  cross-validation over the test rows.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .core import Dataset, RngStream, ScalingRecord, ShiftWeightError, validate_dataset
from .kernels import KernelConfig, KernelFamily, kernel_matrix
from .learners import LearnerConfig, fit_logistic, predict_raw
from .phi import PhiMode, apply_phi, fit_phi
from .solver import (
    DegenerateBasisError,
    NotConvergedError,
    QpProblem,
    kliep_ascent,
    solve_box_sum_qp,
)
from .core import Task

__all__ = [
    "Method",
    "EnsembleAxis",
    "EstimatorSpec",
    "PartitionTooFineError",
    "ZeroDensityError",
    "MemoryBudgetError",
    "lr_weight_from_probability",
    "lr_importance",
    "kmm_importance",
    "ekmm_importance",
    "kde_importance",
    "kde_densities",
    "kliep_importance",
    "estimate",
    "write_importance_csv",
]

LR_PROBABILITY_FLOOR = 1e-6
KDE_DENSITY_FLOOR = 1e-300
KLIEP_SIGMA_GRID = (0.01, 0.1, 0.25, 0.5, 0.75, 1.0)


class PartitionTooFineError(ShiftWeightError):
    """More ensemble components requested than rows available."""


class ZeroDensityError(ShiftWeightError):
    """A training row has zero estimated training density (cannot happen
    for a kernel estimate that includes the row itself)."""


class MemoryBudgetError(ShiftWeightError):
    """The kernel matrices for a solve would exceed the configured budget."""


class Method(Enum):
    LR = "LR"
    KMM = "KMM"
    EKMM = "EKMM"
    KDE = "KDE"
    KLIEP = "KLIEP"


class EnsembleAxis(Enum):
    TEST_PARTITION = "test"
    TRAIN_PARTITION = "train"


@dataclass(frozen=True)
class EstimatorSpec:
    """A fully serializable description of one estimator variant.

    ``epsilon=None`` means the sum slack defaults to
    (sqrt(n) - 1) / sqrt(n) for the n of each individual KMM solve.
    """

    method: Method = Method.KLIEP
    phi_mode: PhiMode = PhiMode.COVARIATES
    kernel: KernelConfig = field(default_factory=KernelConfig)
    standardize: bool = True
    # KMM / EKMM
    upper_bound: float = 1000.0
    epsilon: float | None = None
    qp_tol: float = 1e-5
    qp_max_iter: int = 4000
    memory_budget_mb: float | None = None
    # EKMM
    partitions: int = 20
    ensemble_axis: EnsembleAxis = EnsembleAxis.TRAIN_PARTITION
    # KLIEP
    basis_count: int = 100
    sigma_grid: tuple = KLIEP_SIGMA_GRID
    solver_tol: float = 1e-8
    solver_max_iter: int = 2000
    # LR
    lr_regularization: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sigma_grid", tuple(self.sigma_grid))
        if self.partitions < 1:
            raise ShiftWeightError("partitions must be >= 1")
        if self.basis_count < 1:
            raise ShiftWeightError("basis_count must be >= 1")
        if not self.sigma_grid or any(s <= 0 for s in self.sigma_grid):
            raise ShiftWeightError("sigma_grid must be non-empty and positive")

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "phi_mode": self.phi_mode.value,
            "kernel": {
                "family": self.kernel.family.value,
                "bandwidth": self.kernel.bandwidth,
            },
            "standardize": self.standardize,
            "upper_bound": self.upper_bound,
            "epsilon": self.epsilon,
            "qp_tol": self.qp_tol,
            "qp_max_iter": self.qp_max_iter,
            "memory_budget_mb": self.memory_budget_mb,
            "partitions": self.partitions,
            "ensemble_axis": self.ensemble_axis.value,
            "basis_count": self.basis_count,
            "sigma_grid": list(self.sigma_grid),
            "solver_tol": self.solver_tol,
            "solver_max_iter": self.solver_max_iter,
            "lr_regularization": self.lr_regularization,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorSpec":
        d = dict(d)
        kernel = d.pop("kernel", None)
        kwargs = {
            "method": Method(d.pop("method", "KLIEP")),
            "phi_mode": PhiMode(d.pop("phi_mode", "C")),
            "ensemble_axis": EnsembleAxis(d.pop("ensemble_axis", "train")),
        }
        if kernel is not None:
            kwargs["kernel"] = KernelConfig(
                family=KernelFamily(kernel.get("family", "gaussian")),
                bandwidth=float(kernel.get("bandwidth", 1.0)),
            )
        if "sigma_grid" in d:
            kwargs["sigma_grid"] = tuple(d.pop("sigma_grid"))
        kwargs.update(d)
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EstimatorSpec":
        return cls.from_dict(json.loads(text))


def lr_weight_from_probability(p_test: np.ndarray, n_tr: int, n_te: int) -> np.ndarray:
    """Importance from the discriminator posterior:
    (n_tr * P(test|x)) / (n_te * P(train|x)), with the train-side
    probability floored at 1e-6 before dividing."""
    p_test = np.asarray(p_test, dtype=np.float64)
    p_train = np.maximum(1.0 - p_test, LR_PROBABILITY_FLOOR)
    return (n_tr * p_test) / (n_te * p_train)


def lr_importance(
    V_tr: np.ndarray, V_te: np.ndarray, regularization: float = 1.0
) -> np.ndarray:
    """Discriminative importance: train a logistic model to tell test rows
    (positive) from train rows (negative) and convert its posterior into
    the density ratio."""
    V_tr = np.atleast_2d(np.asarray(V_tr, dtype=np.float64))
    V_te = np.atleast_2d(np.asarray(V_te, dtype=np.float64))
    n_tr, n_te = V_tr.shape[0], V_te.shape[0]
    stacked = Dataset(
        np.vstack([V_tr, V_te]),
        np.concatenate([np.zeros(n_tr), np.ones(n_te)]),
        Task.CLASSIFICATION,
        class_count=2,
    )
    model = fit_logistic(stacked, regularization)
    p_test = predict_raw(model, V_tr)[:, 1]
    return lr_weight_from_probability(p_test, n_tr, n_te)


def _auto_epsilon(n: int) -> float:
    return (math.sqrt(n) - 1.0) / math.sqrt(n)


def kmm_importance(V_tr: np.ndarray, V_te: np.ndarray, spec: EstimatorSpec) -> np.ndarray:
    """Kernel mean matching: weights minimizing the discrepancy between the
    reweighted train kernel mean and the test kernel mean, subject to
    0 <= w <= upper_bound and |sum w - n_tr| <= n_tr * epsilon."""
    V_tr = np.atleast_2d(np.asarray(V_tr, dtype=np.float64))
    V_te = np.atleast_2d(np.asarray(V_te, dtype=np.float64))
    n_tr, n_te = V_tr.shape[0], V_te.shape[0]
    if spec.memory_budget_mb is not None:
        needed_mb = 8.0 * (n_tr * n_tr + n_tr * n_te) / 2**20
        if needed_mb > spec.memory_budget_mb:
            raise MemoryBudgetError(
                f"kernel matrices need {needed_mb:.1f} MiB "
                f"(budget {spec.memory_budget_mb:.1f} MiB)"
            )
    H = kernel_matrix(V_tr, V_tr, spec.kernel)
    c = (n_tr / n_te) * kernel_matrix(V_tr, V_te, spec.kernel).sum(axis=1)
    eps = spec.epsilon if spec.epsilon is not None else _auto_epsilon(n_tr)
    problem = QpProblem(
        H=H, c=c, upper=spec.upper_bound, sum_target=float(n_tr), sum_slack=eps
    )
    report = solve_box_sum_qp(problem, tol=spec.qp_tol, max_iter=spec.qp_max_iter)
    if not report.converged:
        raise NotConvergedError(
            f"KMM projected gradient stalled at residual {report.kkt_residual:.3e} "
            f"after {report.iterations} iterations (tol {spec.qp_tol:g})"
        )
    return np.maximum(report.solution, 0.0)


def _partition(n: int, parts: int, rng: RngStream) -> list[np.ndarray]:
    """Random disjoint partition into ``parts`` non-empty index groups,
    each sorted ascending so downstream kernel sums are order-stable."""
    if parts > n:
        raise PartitionTooFineError(f"cannot split {n} rows into {parts} parts")
    perm = rng.generator().permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, parts)]


def ekmm_importance(
    V_tr: np.ndarray, V_te: np.ndarray, spec: EstimatorSpec, rng: RngStream
) -> np.ndarray:
    """Ensemble KMM over a random partition.

    Test-partition mode solves KMM against each test shard and fuses the
    component weights by shard size.  Train-partition mode solves KMM for
    each train shard against the full test set and keeps, for every train
    row, the weight from the one shard containing it.
    """
    V_tr = np.atleast_2d(np.asarray(V_tr, dtype=np.float64))
    V_te = np.atleast_2d(np.asarray(V_te, dtype=np.float64))
    n_tr, n_te = V_tr.shape[0], V_te.shape[0]
    if spec.ensemble_axis is EnsembleAxis.TEST_PARTITION:
        parts = _partition(n_te, spec.partitions, rng)
        w = np.zeros(n_tr)
        for part in parts:
            component = kmm_importance(V_tr, V_te[part], spec)
            w += (part.shape[0] / n_te) * component
        return w
    parts = _partition(n_tr, spec.partitions, rng)
    w = np.empty(n_tr)
    for part in parts:
        w[part] = kmm_importance(V_tr[part], V_te, spec)
    return w


def _density_normalizer(cfg: KernelConfig, d: int) -> float:
    if cfg.family is KernelFamily.GAUSSIAN:
        return (2.0 * math.pi * cfg.bandwidth**2) ** (d / 2.0)
    return cfg.bandwidth**d


def kde_densities(
    V_eval: np.ndarray, V_source: np.ndarray, cfg: KernelConfig
) -> np.ndarray:
    """Kernel density estimate fitted on ``V_source`` rows, evaluated at
    ``V_eval`` rows."""
    V_eval = np.atleast_2d(np.asarray(V_eval, dtype=np.float64))
    V_source = np.atleast_2d(np.asarray(V_source, dtype=np.float64))
    n, d = V_source.shape
    K = kernel_matrix(V_eval, V_source, cfg)
    return K.sum(axis=1) / (n * _density_normalizer(cfg, d))


def kde_importance(V_tr: np.ndarray, V_te: np.ndarray, spec: EstimatorSpec) -> np.ndarray:
    """Ratio of kernel density estimates at the training rows."""
    p_tr = kde_densities(V_tr, V_tr, spec.kernel)
    p_te = kde_densities(V_tr, V_te, spec.kernel)
    if spec.kernel.family is KernelFamily.EPANECHNIKOV and np.any(p_tr == 0.0):
        raise ZeroDensityError(
            "training density vanished at a training row; the kernel no "
            "longer covers its own center"
        )
    return p_te / np.maximum(p_tr, KDE_DENSITY_FLOOR)


def _kliep_fit(basis_tr, basis_te, spec):
    return kliep_ascent(
        basis_tr, basis_te, tol=spec.solver_tol, max_iter=spec.solver_max_iter
    )


def kliep_importance(
    V_tr: np.ndarray, V_te: np.ndarray, spec: EstimatorSpec, rng: RngStream
) -> np.ndarray:
    """KLIEP with Gaussian basis functions centered at sampled test rows.

    The bandwidth is picked from ``spec.sigma_grid`` by 3-fold likelihood
    cross-validation over the test rows (score: mean held-out log weight);
    exact score ties go to the smallest bandwidth.  The returned weights
    average to one over the training rows by construction.
    """
    V_tr = np.atleast_2d(np.asarray(V_tr, dtype=np.float64))
    V_te = np.atleast_2d(np.asarray(V_te, dtype=np.float64))
    n_te = V_te.shape[0]
    b = min(spec.basis_count, n_te)
    g = rng.generator()
    centers = V_te[np.sort(g.choice(n_te, size=b, replace=False))]
    n_folds = min(3, n_te)
    folds = [np.sort(f) for f in np.array_split(g.permutation(n_te), n_folds)]

    best_sigma = None
    best_score = -np.inf
    for sigma in sorted(spec.sigma_grid):
        cfg = KernelConfig(KernelFamily.GAUSSIAN, sigma)
        basis_tr = kernel_matrix(V_tr, centers, cfg)
        basis_te = kernel_matrix(V_te, centers, cfg)
        scores = []
        for fold in folds:
            held = np.zeros(n_te, dtype=bool)
            held[fold] = True
            fit_rows = basis_te[~held] if n_folds > 1 else basis_te
            try:
                alpha, _ = _kliep_fit(basis_tr, fit_rows, spec)
            except DegenerateBasisError:
                scores.append(-np.inf)
                continue
            held_w = basis_te[held] @ alpha
            if held_w.min(initial=np.inf) <= 0.0:
                scores.append(-np.inf)
            else:
                scores.append(float(np.mean(np.log(held_w))))
        score = float(np.mean(scores))
        if score > best_score:
            best_score = score
            best_sigma = sigma
    if best_sigma is None or best_score == -np.inf:
        raise DegenerateBasisError(
            "every candidate bandwidth left some held-out test row with "
            "zero likelihood"
        )
    cfg = KernelConfig(KernelFamily.GAUSSIAN, best_sigma)
    basis_tr = kernel_matrix(V_tr, centers, cfg)
    basis_te = kernel_matrix(V_te, centers, cfg)
    alpha, _ = _kliep_fit(basis_tr, basis_te, spec)
    return basis_tr @ alpha


def estimate(
    spec: EstimatorSpec,
    train: Dataset,
    test_covariates: np.ndarray,
    rng: RngStream,
    learner: LearnerConfig | None = None,
) -> np.ndarray:
    """The single public entry point: transform, standardize, dispatch.

    Fits the feature transform on the training split, applies it to both
    sides, z-scores the transformed matrices with train-fitted statistics
    (unless ``spec.standardize`` is off), and runs the requested method.
    Test targets are never seen: only a covariate matrix is accepted.
    """
    validate_dataset(train)
    mapper = fit_phi(train, spec.phi_mode, learner)
    V_tr = apply_phi(mapper, train.covariates)
    V_te = apply_phi(mapper, np.atleast_2d(np.asarray(test_covariates, dtype=np.float64)))
    if spec.standardize:
        record = ScalingRecord.fit(V_tr)
        V_tr = record.transform(V_tr)
        V_te = record.transform(V_te)
    if spec.method is Method.LR:
        return lr_importance(V_tr, V_te, spec.lr_regularization)
    if spec.method is Method.KMM:
        return kmm_importance(V_tr, V_te, spec)
    if spec.method is Method.EKMM:
        return ekmm_importance(V_tr, V_te, spec, rng.child("partition"))
    if spec.method is Method.KDE:
        return kde_importance(V_tr, V_te, spec)
    if spec.method is Method.KLIEP:
        return kliep_importance(V_tr, V_te, spec, rng.child("basis"))
    raise ShiftWeightError(f"unknown method {spec.method!r}")


def write_importance_csv(path, weights: np.ndarray) -> None:
    """Single-column CSV with header ``w``; floats written with repr so the
    file round-trips exactly."""
    weights = np.asarray(weights, dtype=np.float64).ravel()
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["w"])
        for value in weights:
            writer.writerow([repr(float(value))])
