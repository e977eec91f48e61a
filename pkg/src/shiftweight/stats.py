"""Friedman ranking and the Nemenyi post-hoc critical difference.

Methods are ranked per dataset (rank 1 = best, ties averaged); the
Friedman chi-square statistic tests whether the average ranks could have
come from equally-performing methods, and the Nemenyi critical difference
gives the minimum average-rank gap that counts as significant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaincc
from scipy.stats import rankdata

from .core import NonFiniteError, ShiftWeightError

__all__ = [
    "RankTable",
    "UnsupportedKError",
    "friedman_ranks",
    "friedman_statistic",
    "nemenyi_cd",
    "significance_marks",
    "format_rank_table",
    "write_rank_csv",
]


class UnsupportedKError(ShiftWeightError):
    """Method count outside the tabulated range of the studentized-range
    constants."""


# Critical values of the studentized range statistic divided by sqrt(2),
# infinite degrees of freedom, for K = 2..10 methods.
_Q_TABLE = {
    0.05: (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164),
    0.10: (1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920),
}


@dataclass(frozen=True)
class RankTable:
    methods: tuple
    datasets: tuple
    ranks: np.ndarray  # [n_datasets x n_methods]
    average_ranks: np.ndarray

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.float64)
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(
            self, "average_ranks", np.asarray(self.average_ranks, dtype=np.float64)
        )
        k = len(self.methods)
        expected = k * (k + 1) / 2.0
        sums = ranks.sum(axis=1)
        if not np.allclose(sums, expected, atol=1e-9):
            raise ShiftWeightError(
                f"rank rows must sum to K(K+1)/2 = {expected:g}; got {sums}"
            )


def friedman_ranks(
    scores: np.ndarray,
    methods=None,
    datasets=None,
    lower_is_better: bool = True,
) -> RankTable:
    """Rank methods within each dataset row (1 = best, ties averaged)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 2 or scores.shape[1] < 2:
        raise ShiftWeightError(f"need an N x K score matrix with N, K >= 2, got {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise NonFiniteError("scores contain NaN or infinity")
    n, k = scores.shape
    oriented = scores if lower_is_better else -scores
    ranks = np.vstack([rankdata(row, method="average") for row in oriented])
    if methods is None:
        methods = tuple(f"method_{j}" for j in range(k))
    if datasets is None:
        datasets = tuple(f"dataset_{i}" for i in range(n))
    return RankTable(
        methods=tuple(methods),
        datasets=tuple(datasets),
        ranks=ranks,
        average_ranks=ranks.mean(axis=0),
    )


def friedman_statistic(table: RankTable) -> tuple[float, float]:
    """Friedman chi-square over the rank table and its p-value.

    chi2 = 12N / (K(K+1)) * (sum_j Rbar_j^2 - K(K+1)^2 / 4), referred to a
    chi-square distribution with K-1 degrees of freedom.
    """
    n, k = table.ranks.shape
    rbar = table.average_ranks
    chi2 = 12.0 * n / (k * (k + 1)) * (float(rbar @ rbar) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)  # guard tiny negative rounding in the null case
    p_value = float(gammaincc((k - 1) / 2.0, chi2 / 2.0))
    return chi2, p_value


def nemenyi_cd(k: int, n: int, alpha: float = 0.05) -> float:
    """Critical difference q_alpha(K) * sqrt(K(K+1) / (6N))."""
    if alpha not in _Q_TABLE:
        raise UnsupportedKError(f"alpha must be one of {sorted(_Q_TABLE)}, got {alpha}")
    if not 2 <= k <= 10:
        raise UnsupportedKError(f"K must lie in [2, 10], got {k}")
    if n < 1:
        raise ShiftWeightError("N must be >= 1")
    q = _Q_TABLE[alpha][k - 2]
    return q * np.sqrt(k * (k + 1) / (6.0 * n))


def significance_marks(table: RankTable, cd: float) -> np.ndarray:
    """Boolean flag per method: average rank more than ``cd`` above the
    best (lowest) average rank."""
    best = table.average_ranks.min()
    return table.average_ranks - best > cd


def format_rank_table(table: RankTable, cd: float | None = None) -> str:
    """Aligned plain-text table, best rank per row marked with '*'."""
    header = ["dataset"] + [str(m) for m in table.methods]
    rows = [header]
    for name, row in zip(table.datasets, table.ranks):
        best = row.min()
        cells = [f"{v:.2f}*" if v == best else f"{v:.2f}" for v in row]
        rows.append([str(name)] + cells)
    avg = table.average_ranks
    best = avg.min()
    rows.append(
        ["avg. rank"] + [f"{v:.2f}*" if v == best else f"{v:.2f}" for v in avg]
    )
    widths = [max(len(r[j]) for r in rows) for j in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    if cd is not None:
        lines.append(f"critical difference (Nemenyi): {cd:.4f}")
    return "\n".join(lines) + "\n"


def write_rank_csv(path, table: RankTable, cd: float | None = None) -> None:
    """CSV form of the table; the `best` column marks the winning method
    per dataset row."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset", *[str(m) for m in table.methods], "best"])
        for name, row in zip(table.datasets, table.ranks):
            best = table.methods[int(np.argmin(row))]
            writer.writerow([name, *[repr(float(v)) for v in row], best])
        best = table.methods[int(np.argmin(table.average_ranks))]
        writer.writerow(
            ["avg_rank", *[repr(float(v)) for v in table.average_ranks], best]
        )
        if cd is not None:
            writer.writerow(["nemenyi_cd", repr(float(cd))] + [""] * len(table.methods))
