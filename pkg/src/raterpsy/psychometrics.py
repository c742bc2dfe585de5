"""
Moment matrices and classical reliability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .instrument import ResponseDataset


class ArityError(ValueError):
    """Too few items for the requested statistic."""


@dataclass(frozen=True)
class MomentSummary:
    columns: tuple[str, ...]
    mean_vector: np.ndarray
    covariance: np.ndarray
    correlation: np.ndarray
    n: int

    def subset(self, columns: Sequence[str]) -> "MomentSummary":
        idx = [self.columns.index(c) for c in columns]
        return MomentSummary(
            columns=tuple(columns),
            mean_vector=self.mean_vector[idx],
            covariance=self.covariance[np.ix_(idx, idx)],
            correlation=self.correlation[np.ix_(idx, idx)],
            n=self.n,
        )


@dataclass(frozen=True)
class ReliabilityReport:
    columns: tuple[str, ...]
    alpha: float
    alpha_if_deleted: tuple[float, ...]
    item_total: tuple[float, ...]
    n: int


def cov_to_corr(cov: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def moments_from_array(x: np.ndarray, columns: Sequence[str]) -> MomentSummary:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ArityError(f"need at least 2 complete respondents, got {n}")
    cov = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    var = np.diag(cov)
    flat = np.flatnonzero(var <= 0)
    if flat.size:
        raise ValueError(f"item {columns[flat[0]]} has zero variance; correlation undefined")
    return MomentSummary(
        columns=tuple(columns),
        mean_vector=x.mean(axis=0),
        covariance=cov,
        correlation=cov_to_corr(cov),
        n=n,
    )


def moments(dataset: ResponseDataset, item_set: Sequence[str]) -> MomentSummary:
    """Sample means, covariance (divisor n-1) and correlation after listwise deletion."""
    x, _ = dataset.complete(list(item_set))
    return moments_from_array(x, list(item_set))


def _alpha_from_cov(cov: np.ndarray) -> float:
    k = cov.shape[0]
    total = cov.sum()
    if total <= 0:
        raise ValueError("total score variance must be positive")
    return k / (k - 1) * (1.0 - np.trace(cov) / total)


def cronbach_alpha(moments: MomentSummary | np.ndarray, item_set: Sequence[str] | None = None) -> float:
    """Covariance-based Cronbach's alpha.

    ``alpha = k/(k-1) * (1 - sum(var_i) / var(sum score))``.
    """
    cov = _select(moments, item_set)
    if cov.shape[0] < 2:
        raise ArityError("alpha needs at least 2 items")
    return float(_alpha_from_cov(cov))


def alpha_if_deleted(moments: MomentSummary | np.ndarray, item_set: Sequence[str] | None = None) -> list[float]:
    cov = _select(moments, item_set)
    k = cov.shape[0]
    if k < 3:
        raise ArityError("alpha-if-deleted needs at least 3 items")
    out = []
    for j in range(k):
        keep = [i for i in range(k) if i != j]
        out.append(float(_alpha_from_cov(cov[np.ix_(keep, keep)])))
    return out


def item_total_correlations(cov: np.ndarray) -> list[float]:
    """Corrected item-total correlation: item vs. sum of the remaining items."""
    k = cov.shape[0]
    out = []
    for j in range(k):
        rest = [i for i in range(k) if i != j]
        c = cov[j, rest].sum()
        v_rest = cov[np.ix_(rest, rest)].sum()
        out.append(float(c / np.sqrt(cov[j, j] * v_rest)))
    return out


def reliability(moments: MomentSummary, item_set: Sequence[str] | None = None) -> ReliabilityReport:
    cols = tuple(item_set) if item_set is not None else moments.columns
    cov = _select(moments, cols)
    return ReliabilityReport(
        columns=cols,
        alpha=cronbach_alpha(cov),
        alpha_if_deleted=tuple(alpha_if_deleted(cov)) if len(cols) >= 3 else (),
        item_total=tuple(item_total_correlations(cov)),
        n=moments.n,
    )


def _select(moments, item_set) -> np.ndarray:
    if isinstance(moments, MomentSummary):
        if item_set is None:
            return moments.covariance
        return moments.subset(list(item_set)).covariance
    cov = np.asarray(moments, dtype=float)
    if item_set is not None:
        idx = list(item_set)
        cov = cov[np.ix_(idx, idx)]
    return cov


def eigenvalues(correlation: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of a symmetric matrix."""
    a = np.asarray(correlation, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix is not symmetric")
    return np.linalg.eigvalsh(a)[::-1]


def variance_percent(eigen_or_ss: Sequence[float], p: int) -> list[float]:
    """Express per-factor sums of squares as percent of total variance ``p``."""
    return [100.0 * float(v) / p for v in eigen_or_ss]
