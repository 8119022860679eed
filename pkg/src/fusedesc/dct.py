"""Orthonormal 2D DCT-II, zig-zag coefficient selection, and coefficient stats.

The transform is the separable matrix product basis . patch . basis^T with a
precomputed orthonormal 1D basis; at patch size 64 this is plenty fast and
trivially checkable against direct summation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, DatasetError, DimensionError

STD_FLOOR = 1e-8


class DctPlan:
    """Precomputed orthonormal 1D DCT-II basis for size-N inputs."""

    def __init__(self, size: int):
        if size < 1:
            raise DimensionError(f"plan size must be positive, got {size}")
        self.size = size
        n = np.arange(size)
        k = n[:, None]
        basis = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2 * size))
        basis *= np.sqrt(2.0 / size)
        basis[0] *= np.sqrt(0.5)
        self.basis = basis  # (size, size) float64, basis @ basis.T == I


def dct2(patch: np.ndarray, plan: DctPlan) -> np.ndarray:
    """Separable orthonormal DCT-II of an N x N patch; energy preserving."""
    p = np.asarray(patch, dtype=np.float64)
    if p.shape != (plan.size, plan.size):
        raise DimensionError(
            f"patch shape {p.shape} does not match plan size {plan.size}"
        )
    return plan.basis @ p @ plan.basis.T


def idct2(coeffs: np.ndarray, plan: DctPlan) -> np.ndarray:
    """Inverse of :func:`dct2` via the transposed basis."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape != (plan.size, plan.size):
        raise DimensionError(
            f"coefficient shape {c.shape} does not match plan size {plan.size}"
        )
    return plan.basis.T @ c @ plan.basis


class ZigzagOrder:
    """Anti-diagonal scan of an N x N grid, alternating direction, from (0,0).

    Odd diagonals run with increasing row, even ones with decreasing row, so
    the walk matches the classic JPEG coefficient ordering.
    """

    def __init__(self, size: int):
        if size < 1:
            raise DimensionError(f"zig-zag size must be positive, got {size}")
        self.size = size
        pairs = []
        for d in range(2 * size - 1):
            lo = max(0, d - size + 1)
            hi = min(d, size - 1)
            rows = range(lo, hi + 1) if d % 2 else range(hi, lo - 1, -1)
            pairs.extend((r, d - r) for r in rows)
        self.pairs = pairs
        self.flat_indices = np.array([r * size + c for r, c in pairs], dtype=np.int64)


def zigzag_select(coeffs: np.ndarray, order: ZigzagOrder, count: int) -> np.ndarray:
    """First ``count`` coefficients in zig-zag order; element 0 is the DC term."""
    c = np.asarray(coeffs)
    if c.shape != (order.size, order.size):
        raise DimensionError(
            f"coefficient shape {c.shape} does not match zig-zag size {order.size}"
        )
    if count > order.size * order.size:
        raise BoundsError(
            f"requested {count} coefficients but the matrix holds {order.size ** 2}"
        )
    return c.reshape(-1)[order.flat_indices[:count]]


@dataclass
class DctStats:
    """Per-coefficient mean/std used to normalize selected DCT features."""

    mean: np.ndarray
    std: np.ndarray
    count: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise DimensionError("mean and std must be matching 1-d vectors")


def fit_dct_stats(coeff_vectors, global_stats: bool = False) -> DctStats:
    """Mean and (n-1)-denominator std per coefficient over a training set.

    ``global_stats`` collapses the statistics to a single mean/std pair over
    the entire coefficient population, broadcast back to every position.
    """
    mat = np.asarray(list(coeff_vectors), dtype=np.float64)
    if mat.size == 0:
        raise DatasetError("cannot fit DCT statistics on an empty coefficient set")
    if mat.ndim != 2:
        raise DimensionError(f"expected a sequence of equal-length vectors, got {mat.shape}")
    if mat.shape[0] < 2:
        raise DatasetError("need at least 2 coefficient vectors to estimate std")
    if global_stats:
        mean = np.full(mat.shape[1], mat.mean())
        std = np.full(mat.shape[1], mat.std(ddof=1))
    else:
        mean = mat.mean(axis=0)
        std = mat.std(axis=0, ddof=1)
    return DctStats(mean, np.maximum(std, STD_FLOOR), count=mat.shape[0])


def normalize_coeffs(v: np.ndarray, stats: DctStats) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != stats.mean.shape[0]:
        raise DimensionError(
            f"vector length {v.shape[-1]} != fitted coefficient count {stats.mean.shape[0]}"
        )
    return (v - stats.mean) / stats.std


def denormalize_coeffs(v: np.ndarray, stats: DctStats) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != stats.mean.shape[0]:
        raise DimensionError(
            f"vector length {v.shape[-1]} != fitted coefficient count {stats.mean.shape[0]}"
        )
    return v * stats.std + stats.mean
