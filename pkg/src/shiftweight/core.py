"""Shared domain types: datasets, scaling, seeded randomness, CSV ingestion.

Everything downstream (kernels, estimators, the benchmark harness) consumes
the types defined here.  All of them are immutable after construction and
safe to share between threads or worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "Task",
    "Dataset",
    "SplitPair",
    "RngStream",
    "ScalingRecord",
    "ShiftWeightError",
    "NonFiniteError",
    "EmptyDatasetError",
    "BadLabelError",
    "DimensionMismatchError",
    "validate_dataset",
    "standardize",
    "read_dataset_csv",
    "write_dataset_csv",
]


class ShiftWeightError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteError(ShiftWeightError):
    """Covariates or targets contain NaN or infinity."""


class EmptyDatasetError(ShiftWeightError):
    """Dataset has no rows or no columns."""


class BadLabelError(ShiftWeightError):
    """A classification label is negative or >= the declared class count."""


class DimensionMismatchError(ShiftWeightError):
    """Two operands disagree on a shared dimension."""


class Task(Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


def _as_float_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


@dataclass(frozen=True)
class Dataset:
    """A covariate matrix with one target per row.

    Classification targets are dense integer codes ``0..class_count-1``
    (stored as float64 for uniformity); regression targets are reals.
    """

    covariates: np.ndarray
    targets: np.ndarray
    task: Task
    class_count: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", _as_float_matrix(self.covariates))
        object.__setattr__(
            self, "targets", np.asarray(self.targets, dtype=np.float64).ravel()
        )
        self.covariates.setflags(write=False)
        self.targets.setflags(write=False)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def labels(self) -> np.ndarray:
        """Targets as integer class codes (classification only)."""
        return self.targets.astype(np.int64)

    def replace_covariates(self, covariates: np.ndarray) -> "Dataset":
        return Dataset(covariates, self.targets, self.task, self.class_count)

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.covariates[idx], self.targets[idx], self.task, self.class_count
        )


@dataclass(frozen=True)
class SplitPair:
    """A train/test pair produced by shift injection.

    ``provenance`` records how the pair was built (prevalences or the
    sigmoid steepness) so any split can be regenerated or audited.
    """

    train: Dataset
    test: Dataset
    seed: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.train.d != self.test.d:
            raise DimensionMismatchError(
                f"train has {self.train.d} covariates, test has {self.test.d}"
            )
        if self.train.task is not self.test.task:
            raise DimensionMismatchError("train and test disagree on task kind")
        if self.train.class_count != self.test.class_count:
            raise DimensionMismatchError("train and test disagree on class count")


def _key_to_int(key) -> int:
    """Map a child-stream key to a stable 64-bit integer.

    Strings are hashed with sha256 so derivation does not depend on
    Python's per-process hash seed.
    """
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"rng keys must be int or str, got {type(key).__name__}")


class RngStream:
    """An immutable, splittable source of randomness.

    A stream is identified by a root seed plus a path of derivation keys.
    ``generator()`` returns a *fresh* PCG64 generator every call, so a
    stream can be re-derived anywhere (including in worker processes) and
    always yields the same draws.  Distinct sub-tasks must use distinct
    child streams; reusing one stream for two draws repeats the draw.
    """

    ALGORITHM = "pcg64"

    def __init__(self, seed: int, _path: tuple = ()):
        self.seed = int(seed)
        self._path = tuple(_path)

    def child(self, *keys) -> "RngStream":
        return self.__class__(
            self.seed, self._path + tuple(_key_to_int(k) for k in keys)
        )

    def generator(self) -> np.random.Generator:
        entropy = [_key_to_int(self.seed), *self._path]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self._path})"

    def __eq__(self, other):
        return (
            isinstance(other, RngStream)
            and self.seed == other.seed
            and self._path == other._path
        )

    def __hash__(self):
        return hash((self.seed, self._path))


def validate_dataset(data: Dataset) -> Dataset:
    """Check all dataset invariants; return the dataset unchanged if valid.

    Raises
    ------
    EmptyDatasetError
        No rows or no covariate columns.
    NonFiniteError
        NaN or infinity anywhere in covariates or targets.
    BadLabelError
        Classification label outside ``0..class_count-1`` or non-integral,
        or the class count is missing/invalid.
    """
    if data.n < 1 or data.d < 1:
        raise EmptyDatasetError(f"dataset has shape {data.covariates.shape}")
    if data.targets.shape[0] != data.n:
        raise DimensionMismatchError(
            f"{data.n} rows but {data.targets.shape[0]} targets"
        )
    if not np.all(np.isfinite(data.covariates)):
        raise NonFiniteError("covariates contain NaN or infinite entries")
    if not np.all(np.isfinite(data.targets)):
        raise NonFiniteError("targets contain NaN or infinite entries")
    if data.task is Task.CLASSIFICATION:
        if data.class_count is None or data.class_count < 1:
            raise BadLabelError("classification dataset needs a positive class_count")
        labels = data.targets
        if np.any(labels != np.round(labels)):
            raise BadLabelError("classification targets must be integers")
        if labels.min() < 0 or labels.max() >= data.class_count:
            raise BadLabelError(
                f"labels must lie in 0..{data.class_count - 1}, "
                f"found range [{labels.min():g}, {labels.max():g}]"
            )
    return data


@dataclass(frozen=True)
class ScalingRecord:
    """Per-column shift/scale fitted on a training matrix.

    Columns with zero train variance keep unit scale (flagged in
    ``unit_scale``) so the transform stays invertible.
    """

    mean: np.ndarray
    scale: np.ndarray
    unit_scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "ScalingRecord":
        X = _as_float_matrix(X)
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        unit = sd == 0.0
        scale = np.where(unit, 1.0, sd)
        return cls(mean=mean, scale=scale, unit_scale=unit)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = _as_float_matrix(X)
        if X.shape[1] != self.mean.shape[0]:
            raise DimensionMismatchError(
                f"scaler fitted on {self.mean.shape[0]} columns, got {X.shape[1]}"
            )
        return (X - self.mean) / self.scale

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        Z = _as_float_matrix(Z)
        if Z.shape[1] != self.mean.shape[0]:
            raise DimensionMismatchError(
                f"scaler fitted on {self.mean.shape[0]} columns, got {Z.shape[1]}"
            )
        return Z * self.scale + self.mean


def standardize(train: Dataset, test: Dataset):
    """Z-score both datasets' covariates with statistics fitted on train.

    Returns ``(train_std, test_std, record)``; the record inverts the
    transform exactly (up to float rounding).
    """
    if train.d != test.d:
        raise DimensionMismatchError(
            f"train has {train.d} covariates, test has {test.d}"
        )
    record = ScalingRecord.fit(train.covariates)
    return (
        train.replace_covariates(record.transform(train.covariates)),
        test.replace_covariates(record.transform(test.covariates)),
        record,
    )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _parse_task(value: str) -> Task:
    try:
        return Task(value.lower())
    except ValueError:
        raise BadLabelError(f"unknown task kind {value!r}") from None


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def read_dataset_csv(
    path,
    task: Task | str | None = None,
    class_count: int | None = None,
    has_header: bool | None = None,
) -> Dataset:
    """Load a dataset from CSV: covariate columns, then one target column.

    The task kind (and class count for classification) comes from the
    arguments or, when omitted, from a sidecar JSON manifest next to the
    file (same name, ``.json`` suffix) with keys ``task`` and
    ``class_count``.  String class labels are mapped to dense integer
    codes in sorted order.  When ``has_header`` is None the first row is
    treated as a header iff any covariate cell fails to parse as a number.
    """
    path = Path(path)
    if task is None:
        sidecar = path.with_suffix(".json")
        if not sidecar.exists():
            raise ShiftWeightError(
                f"no task given and no sidecar manifest at {sidecar}"
            )
        manifest = json.loads(sidecar.read_text())
        task = manifest["task"]
        class_count = manifest.get("class_count", class_count)
    if isinstance(task, str):
        task = _parse_task(task)

    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise EmptyDatasetError(f"{path} is empty")

    if has_header is None:
        has_header = not all(_is_float(cell) for cell in rows[0][:-1])
    if has_header:
        rows = rows[1:]
    if not rows:
        raise EmptyDatasetError(f"{path} contains a header but no data rows")

    width = len(rows[0])
    if width < 2:
        raise EmptyDatasetError(f"{path} rows need >= 2 columns (covariates + target)")
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ShiftWeightError(f"{path} row {i + 1} has {len(row)} cells, expected {width}")

    covariates = np.array([[float(c) for c in row[:-1]] for row in rows])
    raw_targets = [row[-1] for row in rows]

    if task is Task.REGRESSION:
        targets = np.array([float(t) for t in raw_targets])
        return validate_dataset(Dataset(covariates, targets, task))

    if all(_is_float(t) for t in raw_targets):
        targets = np.array([float(t) for t in raw_targets])
    else:
        mapping = {lab: i for i, lab in enumerate(sorted(set(raw_targets)))}
        targets = np.array([mapping[t] for t in raw_targets], dtype=np.float64)
    if class_count is None:
        class_count = int(targets.max()) + 1
    return validate_dataset(Dataset(covariates, targets, task, class_count))


def write_dataset_csv(path, data: Dataset, header: bool = True) -> None:
    """Write a dataset in the layout `read_dataset_csv` expects.

    Floats are written with `repr` so a write/read round trip is exact and
    rerunning a pipeline reproduces byte-identical files.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow([f"x{j}" for j in range(data.d)] + ["y"])
        integral_targets = data.task is Task.CLASSIFICATION
        for i in range(data.n):
            row = [repr(float(v)) for v in data.covariates[i]]
            if integral_targets:
                row.append(str(int(data.targets[i])))
            else:
                row.append(repr(float(data.targets[i])))
            writer.writerow(row)
