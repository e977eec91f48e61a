"""Controlled covariate-shift injection.

Classification: one stratified split reserves a base test pool; every
variant resamples that pool with replacement, class by class, so the
class-conditional covariate distribution is untouched while the class mix
follows a freshly drawn prevalence vector discretized with the D'Hondt
method.  Regression: a probabilistic split where the chance of landing in
the test set follows a sigmoid of the (min-max normalized) target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, RngStream, ShiftWeightError, SplitPair, Task, validate_dataset

__all__ = [
    "PrevalenceVector",
    "SigmoidSplitConfig",
    "InfeasibleConstraintsError",
    "ClassMissingInPoolError",
    "DegenerateSplitError",
    "sample_prevalences",
    "dhondt_allocate",
    "split_probability",
    "inject_classification",
    "inject_regression",
]

PREVALENCE_MIN = 0.05
PREVALENCE_MAX = 0.95
REJECTION_BUDGET = 100_000


class InfeasibleConstraintsError(ShiftWeightError):
    """Rejection sampling exhausted its budget without a valid prevalence
    vector."""


class ClassMissingInPoolError(ShiftWeightError):
    """A class cannot be represented in the base test pool."""


class DegenerateSplitError(ShiftWeightError):
    """The probabilistic split left one side empty after all retries."""


@dataclass(frozen=True)
class PrevalenceVector:
    probabilities: np.ndarray
    min_separation: float

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "probabilities", p)
        p.setflags(write=False)


@dataclass(frozen=True)
class SigmoidSplitConfig:
    steepness: float = 5.0
    test_fraction: float = 0.33

    def __post_init__(self):
        if self.steepness == 0:
            raise ShiftWeightError("steepness must be nonzero")
        if not 0.0 < self.test_fraction < 1.0:
            raise ShiftWeightError("test_fraction must lie in (0, 1)")


def default_min_separation(class_count: int) -> float:
    return 1.0 / (10.0 * class_count)


def sample_prevalences(
    class_count: int, min_separation: float | None, rng: RngStream
) -> PrevalenceVector:
    """Draw a class-prevalence vector uniformly from the simplex, rejecting
    draws with any entry outside [0.05, 0.95] or any pairwise gap below
    ``min_separation`` (default 1 / (10 * class_count))."""
    if class_count < 2:
        raise ShiftWeightError("need at least two classes")
    if min_separation is None:
        min_separation = default_min_separation(class_count)
    if min_separation < 0:
        raise ShiftWeightError("min_separation must be >= 0")
    g = rng.generator()
    for _ in range(REJECTION_BUDGET):
        p = g.dirichlet(np.ones(class_count))
        if p.min() < PREVALENCE_MIN or p.max() > PREVALENCE_MAX:
            continue
        gaps = np.abs(p[:, None] - p[None, :])
        off_diagonal = gaps[~np.eye(class_count, dtype=bool)]
        if off_diagonal.min() >= min_separation:
            return PrevalenceVector(p, min_separation)
    raise InfeasibleConstraintsError(
        f"no prevalence vector found for m={class_count}, "
        f"min_separation={min_separation} in {REJECTION_BUDGET} draws"
    )


def dhondt_allocate(prevalences: np.ndarray, seats: int) -> np.ndarray:
    """Highest-averages apportionment: award each seat to the class with
    the largest quotient p_c / (awarded_c + 1); quotient ties go to the
    lowest class index.  The result always sums to ``seats``."""
    p = np.asarray(prevalences, dtype=np.float64)
    if seats < 1:
        raise ShiftWeightError("seats must be >= 1")
    if p.min() <= 0:
        raise ShiftWeightError("prevalences must be positive")
    awarded = np.zeros(p.shape[0], dtype=np.int64)
    for _ in range(seats):
        quotients = p / (awarded + 1)
        awarded[int(np.argmax(quotients))] += 1  # argmax takes lowest index on ties
    return awarded


def _stratified_pool_split(labels: np.ndarray, class_count: int,
                           test_fraction: float, rng: RngStream):
    """Per-class split of row indices into (train, base test pool)."""
    g = rng.generator()
    train_idx, pool_idx = [], []
    for c in range(class_count):
        members = np.where(labels == c)[0]
        if members.shape[0] < 2:
            raise ClassMissingInPoolError(
                f"class {c} has {members.shape[0]} example(s); cannot appear "
                "in both train and the base test pool"
            )
        members = g.permutation(members)
        n_test = int(round(test_fraction * members.shape[0]))
        n_test = min(max(n_test, 1), members.shape[0] - 1)
        pool_idx.append(np.sort(members[:n_test]))
        train_idx.append(np.sort(members[n_test:]))
    return np.sort(np.concatenate(train_idx)), pool_idx


def inject_classification(
    source: Dataset,
    test_fraction: float,
    n_variants: int,
    min_separation: float | None,
    rng: RngStream,
) -> tuple[Dataset, list[SplitPair]]:
    """Build one unchanged train set plus ``n_variants`` resampled test sets.

    Every variant has the same size as the base pool; its per-class counts
    are the D'Hondt allocation of a freshly sampled prevalence vector, and
    its rows are drawn with replacement from the pool rows of the same
    class, which preserves the class-conditional covariate distribution.
    """
    validate_dataset(source)
    if source.task is not Task.CLASSIFICATION:
        raise ShiftWeightError("inject_classification needs a classification dataset")
    labels = source.labels()
    train_rows, pool_by_class = _stratified_pool_split(
        labels, source.class_count, test_fraction, rng.child("base-split")
    )
    train = source.take(train_rows)
    pool_size = sum(p.shape[0] for p in pool_by_class)

    pairs = []
    for k in range(n_variants):
        variant_rng = rng.child("variant", k)
        prevalences = sample_prevalences(
            source.class_count, min_separation, variant_rng.child("prevalence")
        )
        allocation = dhondt_allocate(prevalences.probabilities, pool_size)
        g = variant_rng.child("resample").generator()
        chosen = []
        for c in range(source.class_count):
            pool_c = pool_by_class[c]
            take = int(allocation[c])
            if take > 0:
                chosen.append(pool_c[g.integers(0, pool_c.shape[0], size=take)])
        test = source.take(np.concatenate(chosen))
        pairs.append(
            SplitPair(
                train=train,
                test=test,
                seed=rng.seed,
                provenance={
                    "kind": "classification",
                    "variant": k,
                    "prevalences": prevalences.probabilities.tolist(),
                    "allocation": allocation.tolist(),
                    "pool_size": pool_size,
                },
            )
        )
    return train, pairs


def split_probability(normalized_target: np.ndarray, steepness: float) -> np.ndarray:
    """P(example lands in the test set) = 1 / (1 + exp(-steepness * y))
    for a target already normalized into [-1, 1]."""
    y = np.asarray(normalized_target, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-steepness * y))


def normalize_targets(targets: np.ndarray) -> np.ndarray:
    """Min-max map onto [-1, +1]; used only to drive the split."""
    y = np.asarray(targets, dtype=np.float64)
    lo, hi = y.min(), y.max()
    if hi == lo:
        raise ShiftWeightError("regression targets are all identical")
    return 2.0 * (y - lo) / (hi - lo) - 1.0


def inject_regression(
    source: Dataset, cfg: SigmoidSplitConfig, rng: RngStream
) -> SplitPair:
    """Probabilistic split: each example goes to the test side with
    probability sigmoid(steepness * normalized target).  Stored targets are
    the original values; the normalization only drives the assignment.
    Resamples up to 100 times if a side comes out empty.
    """
    validate_dataset(source)
    if source.task is not Task.REGRESSION:
        raise ShiftWeightError("inject_regression needs a regression dataset")
    y_norm = normalize_targets(source.targets)
    prob_test = split_probability(y_norm, cfg.steepness)
    g = rng.generator()
    for attempt in range(100):
        to_test = g.random(source.n) < prob_test
        if to_test.any() and (~to_test).any():
            return SplitPair(
                train=source.take(np.where(~to_test)[0]),
                test=source.take(np.where(to_test)[0]),
                seed=rng.seed,
                provenance={
                    "kind": "regression",
                    "steepness": cfg.steepness,
                    "attempt": attempt,
                },
            )
    raise DegenerateSplitError(
        "probabilistic split produced an empty side 100 times in a row"
    )
