"""Kernel functions and blocked pairwise kernel matrices.

Two families are supported: the Gaussian kernel exp(-||a-b||^2 / (2 s^2))
and a product-form Epanechnikov kernel, prod_j 0.75 (1 - u_j^2) on
|u_j| <= 1 with u_j = (a_j - b_j) / s.  Matrices are built block by block
so peak memory stays bounded on large inputs; every entry is computed
independently, so the result is bit-identical for any block schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist

from .core import DimensionMismatchError, ShiftWeightError

__all__ = [
    "KernelFamily",
    "KernelConfig",
    "gaussian_kernel",
    "epanechnikov_kernel",
    "kernel_matrix",
]

DEFAULT_BLOCK = 1024


class KernelFamily(Enum):
    GAUSSIAN = "gaussian"
    EPANECHNIKOV = "epanechnikov"


@dataclass(frozen=True)
class KernelConfig:
    family: KernelFamily = KernelFamily.GAUSSIAN
    bandwidth: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ShiftWeightError(f"bandwidth must be positive, got {self.bandwidth}")


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatchError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def gaussian_kernel(a, b, bandwidth: float = 1.0) -> float:
    """exp(-||a-b||^2 / (2 bandwidth^2)), in (0, 1]."""
    a, b = _check_pair(a, b)
    diff = a - b
    return float(np.exp(-(diff @ diff) / (2.0 * bandwidth**2)))


def epanechnikov_kernel(a, b, bandwidth: float = 1.0) -> float:
    """Product Epanechnikov kernel; 0 outside the box |a_j - b_j| <= bandwidth."""
    a, b = _check_pair(a, b)
    u = (a - b) / bandwidth
    if np.any(np.abs(u) > 1.0):
        return 0.0
    return float(np.prod(0.75 * (1.0 - u * u)))


def _gaussian_block(A: np.ndarray, B: np.ndarray, bandwidth: float) -> np.ndarray:
    d2 = cdist(A, B, metric="sqeuclidean")
    return np.exp(-d2 / (2.0 * bandwidth**2))


def _epanechnikov_block(A: np.ndarray, B: np.ndarray, bandwidth: float) -> np.ndarray:
    u = (A[:, None, :] - B[None, :, :]) / bandwidth
    inside = np.all(np.abs(u) <= 1.0, axis=2)
    vals = np.prod(0.75 * (1.0 - u * u), axis=2)
    return np.where(inside, vals, 0.0)


def kernel_matrix(
    A: np.ndarray,
    B: np.ndarray,
    cfg: KernelConfig,
    block: int = DEFAULT_BLOCK,
) -> np.ndarray:
    """Pairwise kernel matrix K[i, j] = kernel(A[i], B[j], cfg.bandwidth).

    Parameters
    ----------
    A, B : matrices with a shared column count.
    cfg : kernel family and bandwidth.
    block : rows of A (and, for the Epanechnikov family, columns of B)
        processed per chunk.  Purely a memory knob; entries are independent
        of the schedule.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatchError(
            f"column counts differ: {A.shape[1]} vs {B.shape[1]}"
        )
    if block < 1:
        raise ShiftWeightError("block size must be >= 1")
    p, q = A.shape[0], B.shape[0]
    out = np.empty((p, q), dtype=np.float64)
    for i0 in range(0, p, block):
        ablk = A[i0 : i0 + block]
        if cfg.family is KernelFamily.GAUSSIAN:
            out[i0 : i0 + block] = _gaussian_block(ablk, B, cfg.bandwidth)
        else:
            # Epanechnikov broadcasting materializes block x block x d, so
            # the second axis is chunked too.
            for j0 in range(0, q, block):
                out[i0 : i0 + block, j0 : j0 + block] = _epanechnikov_block(
                    ablk, B[j0 : j0 + block], cfg.bandwidth
                )
    return out
