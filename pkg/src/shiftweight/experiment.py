"""Reproducible benchmark harness.

Ties together injection, estimation, weighted cross-validation, and
ranking into file-based experiments: every randomized stage draws from a
stream derived deterministically from (seed, dataset, variant, method,
phi mode), so rerunning a config reproduces every output byte for byte,
regardless of worker count.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import (
    Dataset,
    RngStream,
    ShiftWeightError,
    SplitPair,
    Task,
    read_dataset_csv,
    write_dataset_csv,
)
from .estimators import EstimatorSpec, Method, estimate, kde_densities
from .evaluate import evaluate_pair
from .inject import SigmoidSplitConfig, inject_classification, inject_regression
from .kernels import KernelConfig
from .learners import LearnerConfig
from .phi import PhiMode, apply_phi, fit_phi
from .stats import (
    RankTable,
    format_rank_table,
    friedman_ranks,
    friedman_statistic,
    nemenyi_cd,
)
from .core import ScalingRecord

__all__ = [
    "DatasetConfig",
    "ExperimentConfig",
    "InsufficientDataError",
    "REPORT_COLUMNS",
    "inject_command",
    "run_command",
    "rank_command",
    "toy_table",
    "TOY_COLUMNS",
    "write_toy_csv",
]

REPORT_COLUMNS = [
    "dataset",
    "seed",
    "variant",
    "method",
    "phi_mode",
    "status",
    "distance_weighted",
    "distance_unweighted",
    "actual_error",
    "weighted_estimate",
    "unweighted_estimate",
    "message",
]

DEFAULT_SEEDS = (2032, 2033, 2034, 2035, 2036)
DEFAULT_PHI_MODES = ("C", "P", "CP")
DEFAULT_METHODS = ("LR", "KMM", "EKMM", "KDE", "KLIEP")


class InsufficientDataError(ShiftWeightError):
    """The report lacks the datasets or variant coverage ranking needs."""


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    path: str
    task: str
    class_count: int | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "path": self.path,
            "task": self.task,
            "class_count": self.class_count,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple = ()
    output_dir: str = "out"
    seeds: tuple = DEFAULT_SEEDS
    variants: int = 20
    test_fraction: float = 0.33
    min_separation: float | None = None
    steepness: float = 5.0
    methods: tuple = DEFAULT_METHODS
    phi_modes: tuple = DEFAULT_PHI_MODES
    folds: int = 10
    workers: int = 1
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "phi_modes", tuple(self.phi_modes))
        if not self.seeds:
            raise ShiftWeightError("need at least one seed")
        if not self.methods:
            raise ShiftWeightError("need at least one method")

    def spec_for(self, method: str, phi_mode: str) -> EstimatorSpec:
        return replace(
            self.estimator, method=Method(method), phi_mode=PhiMode(phi_mode)
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        datasets = tuple(
            DatasetConfig(
                name=ds["name"],
                path=ds["path"],
                task=ds["task"],
                class_count=ds.get("class_count"),
            )
            for ds in d.pop("datasets", [])
        )
        learner = LearnerConfig.from_dict(d.pop("learner", {})) if "learner" in d else LearnerConfig()
        estimator = (
            EstimatorSpec.from_dict(d.pop("estimator"))
            if "estimator" in d
            else EstimatorSpec()
        )
        return cls(datasets=datasets, learner=learner, estimator=estimator, **d)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Injection to files
# ---------------------------------------------------------------------------

def _split_dir(config: ExperimentConfig, name: str, seed: int) -> Path:
    return Path(config.output_dir) / name / f"seed_{seed}"


def _write_manifest(directory: Path, manifest: dict) -> None:
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def inject_command(config: ExperimentConfig) -> list[Path]:
    """Write train/test CSVs plus a manifest per (dataset, seed).

    Classification gets one shared ``train.csv`` and ``variants`` resampled
    ``test_<k>.csv`` files; regression gets an independent probabilistic
    split (``train_<k>.csv`` / ``test_<k>.csv``) per variant.
    """
    written = []
    for ds_cfg in config.datasets:
        source = read_dataset_csv(ds_cfg.path, ds_cfg.task, ds_cfg.class_count)
        for seed in config.seeds:
            directory = _split_dir(config, ds_cfg.name, seed)
            directory.mkdir(parents=True, exist_ok=True)
            rng = RngStream(seed).child("inject", ds_cfg.name)
            manifest = {
                "dataset": ds_cfg.name,
                "task": source.task.value,
                "class_count": source.class_count,
                "seed": seed,
                "test_fraction": config.test_fraction,
                "variants": [],
            }
            if source.task is Task.CLASSIFICATION:
                train, pairs = inject_classification(
                    source,
                    config.test_fraction,
                    config.variants,
                    config.min_separation,
                    rng,
                )
                write_dataset_csv(directory / "train.csv", train)
                for k, pair in enumerate(pairs):
                    write_dataset_csv(directory / f"test_{k:02d}.csv", pair.test)
                    manifest["variants"].append(pair.provenance)
            else:
                split_cfg = SigmoidSplitConfig(
                    steepness=config.steepness, test_fraction=config.test_fraction
                )
                for k in range(config.variants):
                    pair = inject_regression(source, split_cfg, rng.child("variant", k))
                    write_dataset_csv(directory / f"train_{k:02d}.csv", pair.train)
                    write_dataset_csv(directory / f"test_{k:02d}.csv", pair.test)
                    manifest["variants"].append(pair.provenance)
            _write_manifest(directory, manifest)
            written.append(directory)
    return written


@lru_cache(maxsize=64)
def _load_manifest(directory: str) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise ShiftWeightError(f"no manifest at {path}; run the inject command first")
    return json.loads(path.read_text())


@lru_cache(maxsize=256)
def _load_csv_cached(path: str, task: str, class_count: int | None) -> Dataset:
    return read_dataset_csv(path, task, class_count)


def load_split(config: ExperimentConfig, name: str, seed: int, variant: int) -> SplitPair:
    """Rebuild a SplitPair from the files written by `inject_command`."""
    directory = _split_dir(config, name, seed)
    manifest = _load_manifest(str(directory))
    task, m = manifest["task"], manifest.get("class_count")
    if Task(task) is Task.CLASSIFICATION:
        train_path = directory / "train.csv"
    else:
        train_path = directory / f"train_{variant:02d}.csv"
    train = _load_csv_cached(str(train_path), task, m)
    test = _load_csv_cached(str(directory / f"test_{variant:02d}.csv"), task, m)
    provenance = manifest["variants"][variant]
    return SplitPair(train=train, test=test, seed=seed, provenance=provenance)


# ---------------------------------------------------------------------------
# Batch runner
# ---------------------------------------------------------------------------

def _cells(config: ExperimentConfig):
    for ds_cfg in config.datasets:
        for seed in config.seeds:
            for variant in range(config.variants):
                for method in config.methods:
                    for phi_mode in config.phi_modes:
                        yield (ds_cfg.name, seed, variant, method, phi_mode)


def _cell_key(row: dict) -> tuple:
    return (
        row["dataset"],
        str(row["seed"]),
        str(row["variant"]),
        row["method"],
        row["phi_mode"],
    )


def _format_value(value) -> str:
    return "" if value is None else repr(float(value))


def run_cell(config: ExperimentConfig, name: str, seed: int, variant: int,
             method: str, phi_mode: str) -> dict:
    """Evaluate one report cell; failures become rows, not exceptions.

    Fold layout is derived from (seed, dataset) only, so every variant and
    estimator on the same training split is scored on identical folds.
    """
    row = {
        "dataset": name,
        "seed": seed,
        "variant": variant,
        "method": method,
        "phi_mode": phi_mode,
        "status": "ok",
        "distance_weighted": None,
        "distance_unweighted": None,
        "actual_error": None,
        "weighted_estimate": None,
        "unweighted_estimate": None,
        "message": "",
    }
    try:
        pair = load_split(config, name, seed, variant)
        spec = config.spec_for(method, phi_mode)
        base = RngStream(seed)
        result = evaluate_pair(
            pair,
            spec,
            learner=config.learner,
            rng=base.child(name, "variant", variant, method, phi_mode),
            folds=config.folds,
            cv_rng=base.child(name, "cv-folds"),
        )
        row.update(
            distance_weighted=result.distance_weighted,
            distance_unweighted=result.distance_unweighted,
            actual_error=result.actual_error,
            weighted_estimate=result.weighted_estimate,
            unweighted_estimate=result.unweighted_estimate,
        )
    except Exception as exc:  # failed cells are first-class report rows
        row["status"] = "failed"
        row["message"] = f"{type(exc).__name__}: {exc}"
    return row


def _run_cell_star(args):
    return run_cell(*args)


def read_report(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))


def run_command(config: ExperimentConfig, report_path=None) -> Path:
    """Run every (dataset, seed, variant, method, phi mode) cell and append
    one row each to the report CSV.

    Resumable: rows already present are skipped, so an interrupted run
    continued later matches an uninterrupted one.  With ``workers > 1``
    cells execute in separate processes but rows are written in the fixed
    cell order, keeping the report byte-identical to a single-worker run.
    """
    report_path = Path(report_path or Path(config.output_dir) / "report.csv")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    present = set()
    fresh = not report_path.exists()
    if not fresh:
        present = {_cell_key(row) for row in read_report(report_path)}
    todo = [
        cell
        for cell in _cells(config)
        if (cell[0], str(cell[1]), str(cell[2]), cell[3], cell[4]) not in present
    ]
    with open(report_path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(REPORT_COLUMNS)
            fh.flush()

        def emit(row: dict):
            writer.writerow(
                [
                    row["dataset"],
                    row["seed"],
                    row["variant"],
                    row["method"],
                    row["phi_mode"],
                    row["status"],
                    _format_value(row["distance_weighted"]),
                    _format_value(row["distance_unweighted"]),
                    _format_value(row["actual_error"]),
                    _format_value(row["weighted_estimate"]),
                    _format_value(row["unweighted_estimate"]),
                    row["message"],
                ]
            )
            fh.flush()

        if config.workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                args = [(config, *cell) for cell in todo]
                for row in pool.map(_run_cell_star, args):
                    emit(row)
        else:
            for cell in todo:
                emit(run_cell(config, *cell))
    return report_path


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

def _collect_method_scores(rows: list[dict], method: str, phi_modes: tuple):
    """Per dataset: matrix of distance_weighted, one row per variant where
    every phi mode succeeded, one column per phi mode."""
    by_dataset: dict = {}
    cells: dict = {}
    for row in rows:
        if row["method"] != method or row["status"] != "ok":
            continue
        key = (row["dataset"], row["seed"], row["variant"])
        cells.setdefault(key, {})[row["phi_mode"]] = float(row["distance_weighted"])
    for (dataset, _seed, _variant), values in sorted(cells.items()):
        if all(mode in values for mode in phi_modes):
            by_dataset.setdefault(dataset, []).append(
                [values[mode] for mode in phi_modes]
            )
    return {name: np.array(rows_) for name, rows_ in by_dataset.items() if rows_}


def rank_method_table(rows: list[dict], method: str, phi_modes=DEFAULT_PHI_MODES):
    """Paper-style triplet table for one method.

    Variants are ranked individually (1 = smallest distance); per-dataset
    entries are the mean rank over that dataset's variants, which is why
    fractional values appear.  Returns (RankTable, chi2, p, cd); the
    Friedman statistic is computed on the all-variants rank table while
    the critical difference uses N = number of datasets.
    """
    phi_modes = tuple(phi_modes)
    scores = _collect_method_scores(rows, method, phi_modes)
    if len(scores) < 2:
        raise InsufficientDataError(
            f"method {method}: need >= 2 datasets with complete variants, "
            f"got {len(scores)}"
        )
    names = sorted(scores)
    labels = [f"-{m}" for m in phi_modes]
    per_dataset = []
    all_variant_scores = []
    for name in names:
        table = friedman_ranks(scores[name], methods=labels)
        per_dataset.append(table.average_ranks)
        all_variant_scores.append(scores[name])
    aggregated = RankTable(
        methods=labels,
        datasets=names,
        ranks=np.vstack(per_dataset),
        average_ranks=np.vstack(per_dataset).mean(axis=0),
    )
    variant_table = friedman_ranks(np.vstack(all_variant_scores), methods=labels)
    chi2, p_value = friedman_statistic(variant_table)
    cd = nemenyi_cd(len(phi_modes), len(names), 0.05)
    return aggregated, chi2, p_value, cd


def rank_command(report_path, output_dir, phi_modes=DEFAULT_PHI_MODES) -> Path:
    """Emit the combined ranking CSV plus per-method plain-text tables."""
    rows = read_report(report_path)
    methods = sorted({row["method"] for row in rows})
    if not methods:
        raise InsufficientDataError("report is empty")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    summary_lines = []
    combined_path = output_dir / "ranking.csv"
    wrote_any = False
    with open(combined_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["method", "dataset", *[f"rank_{m}" for m in phi_modes], "best"]
        )
        for method in methods:
            try:
                table, chi2, p_value, cd = rank_method_table(rows, method, phi_modes)
            except InsufficientDataError as exc:
                summary_lines.append(f"== {method}: skipped ({exc})\n")
                continue
            wrote_any = True
            for name, rank_row in zip(table.datasets, table.ranks):
                best = table.methods[int(np.argmin(rank_row))]
                writer.writerow(
                    [method, name, *[repr(float(v)) for v in rank_row], best]
                )
            summary_lines.append(
                f"== {method} ==\n"
                + format_rank_table(table, cd)
                + f"friedman chi2 = {chi2:.4f}, p = {p_value:.6f}\n"
            )
    if not wrote_any:
        raise InsufficientDataError(
            "no method had >= 2 datasets with complete phi-mode coverage"
        )
    (output_dir / "summary.txt").write_text("\n".join(summary_lines))
    return combined_path


# ---------------------------------------------------------------------------
# Toy experiment
# ---------------------------------------------------------------------------

TOY_COLUMNS = [
    "x_relevant",
    "w_true",
    "p_train_covariates",
    "p_test_covariates",
    "w_covariates",
    "p_train_predictions",
    "p_test_predictions",
    "w_predictions",
]


def generate_toy(
    seed: int,
    n_train: int = 100,
    n_test: int = 100,
    n_covariates: int = 5,
    shift: float = 1.0,
    slope: float = 1.0,
    noise: float = 0.1,
) -> SplitPair:
    """The motivating toy: several covariates, one relevant.

    The relevant covariate is standard normal in train and mean-shifted in
    test; the rest is noise on both sides.  The target is linear in the
    relevant covariate plus Gaussian noise, so the true density ratio is
    the analytic normal ratio exp(shift * x - shift^2 / 2).
    """
    g = RngStream(seed).child("toy").generator()
    X_tr = g.standard_normal((n_train, n_covariates))
    X_te = g.standard_normal((n_test, n_covariates))
    X_te[:, 0] += shift
    y_tr = slope * X_tr[:, 0] + noise * g.standard_normal(n_train)
    y_te = slope * X_te[:, 0] + noise * g.standard_normal(n_test)
    return SplitPair(
        train=Dataset(X_tr, y_tr, Task.REGRESSION),
        test=Dataset(X_te, y_te, Task.REGRESSION),
        seed=seed,
        provenance={"kind": "toy", "shift": shift, "slope": slope, "noise": noise},
    )


def toy_table(
    seed: int,
    shift: float = 1.0,
    learner: LearnerConfig | None = None,
    spec: EstimatorSpec | None = None,
) -> np.ndarray:
    """Per-training-point toy diagnostics, one row per training example.

    Density columns are Gaussian kernel density estimates (bandwidth 1) in
    the standardized feature space; the estimated importance columns come
    from the KLIEP estimator, once on raw covariates and once on the
    fitted model's predictions.
    """
    pair = generate_toy(seed, shift=shift)
    base = spec or EstimatorSpec()
    x = pair.train.covariates[:, 0]
    w_true = np.exp(shift * x - shift**2 / 2.0)
    columns = [x, w_true]
    for mode in (PhiMode.COVARIATES, PhiMode.PREDICTIONS):
        mapper = fit_phi(pair.train, mode, learner)
        V_tr = apply_phi(mapper, pair.train.covariates)
        V_te = apply_phi(mapper, pair.test.covariates)
        record = ScalingRecord.fit(V_tr)
        V_tr, V_te = record.transform(V_tr), record.transform(V_te)
        density_cfg = KernelConfig()
        columns.append(kde_densities(V_tr, V_tr, density_cfg))
        columns.append(kde_densities(V_tr, V_te, density_cfg))
        mode_spec = replace(base, method=Method.KLIEP, phi_mode=mode)
        columns.append(
            estimate(
                mode_spec,
                pair.train,
                pair.test.covariates,
                RngStream(seed).child("toy-estimate", mode.value),
                learner,
            )
        )
    return np.column_stack(columns)


def write_toy_csv(path, table: np.ndarray) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TOY_COLUMNS)
        for row in table:
            writer.writerow([repr(float(v)) for v in row])


def toy_log_errors(table: np.ndarray, floor: float = 1e-12) -> tuple[float, float]:
    """Mean squared log-error of the two estimated importance columns
    against the analytic ratio."""
    w_true = table[:, 1]
    msle = []
    for col in (4, 7):
        w_hat = np.maximum(table[:, col], floor)
        msle.append(float(np.mean((np.log(w_hat) - np.log(w_true)) ** 2)))
    return msle[0], msle[1]
