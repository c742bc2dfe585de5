"""
Goodness-of-fit indices and nested-model chi-square difference tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chisq import chisq_sf
from .ml import FitResult, implied_moments


class NestingError(ValueError):
    """Models passed to a difference test are not properly nested."""


@dataclass(frozen=True)
class FitIndices:
    chisq: float
    df: int
    pvalue: float
    cfi: float
    rmsea: float
    srmr: float
    aic: float
    bic: float
    loglik: float
    n_free: int
    baseline_chisq: float
    baseline_df: int
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "chisq": self.chisq,
            "df": self.df,
            "pvalue": self.pvalue,
            "cfi": self.cfi,
            "rmsea": self.rmsea,
            "srmr": self.srmr,
            "aic": self.aic,
            "bic": self.bic,
            "loglik": self.loglik,
            "n_free": self.n_free,
            "baseline_chisq": self.baseline_chisq,
            "baseline_df": self.baseline_df,
            "note": self.note,
        }


def cfi(chisq: float, df: int, base_chisq: float, base_df: int) -> float:
    num = max(chisq - df, 0.0)
    den = max(base_chisq - base_df, chisq - df, 0.0)
    if den == 0:
        return 1.0
    return 1.0 - num / den


def rmsea(chisq: float, df: int, n: int, groups: int = 1) -> float:
    if df == 0:
        return 0.0
    return math.sqrt(groups) * math.sqrt(max(chisq - df, 0.0) / (df * n))


def srmr(fit: FitResult) -> float:
    """Standardized root mean square residual, n-weighted across groups.

    Residuals are standardized by the observed standard deviations. When the
    model has a mean structure the standardized mean residuals are included.
    """
    stats = fit.stats
    if stats is None:
        raise ValueError("fit carries no sample statistics")
    p = len(fit.table.observed)
    iu = np.triu_indices(p)
    values = []
    for g in range(fit.table.n_groups):
        sigma, mu = implied_moments(fit.table, g)
        s = stats.covs[g]
        sd = np.sqrt(np.diag(s))
        res = (s - sigma) / np.outer(sd, sd)
        sq = list(res[iu] ** 2)
        if mu is not None:
            sq += list(((stats.means[g] - mu) / sd) ** 2)
        values.append(math.sqrt(float(np.mean(sq))))
    w = np.asarray(fit.n_per_group, dtype=float)
    return float(np.dot(w, values) / w.sum())


def fit_indices(fit: FitResult, baseline: FitResult) -> FitIndices:
    if baseline.n_per_group != fit.n_per_group:
        raise ValueError("fit and baseline were computed on different data")
    groups = len(fit.n_per_group)
    n = fit.n_total
    note = "just identified; RMSEA reported as 0" if fit.df == 0 else ""
    return FitIndices(
        chisq=fit.chisq,
        df=fit.df,
        pvalue=fit.pvalue,
        cfi=cfi(fit.chisq, fit.df, baseline.chisq, baseline.df),
        rmsea=rmsea(fit.chisq, fit.df, n, groups),
        srmr=srmr(fit),
        aic=fit.aic,
        bic=fit.bic,
        loglik=fit.loglik,
        n_free=fit.n_free,
        baseline_chisq=baseline.chisq,
        baseline_df=baseline.df,
        note=note,
    )


@dataclass(frozen=True)
class DiffTest:
    delta_chisq: float
    delta_df: int
    p_value: float


def chisq_diff_test(free: FitResult, constrained: FitResult, tol: float = 1e-6) -> DiffTest:
    """Likelihood-ratio test of ``constrained`` against the more general ``free``.

    Small negative differences within ``tol`` (optimizer noise) are reported
    as 0.
    """
    ddf = constrained.df - free.df
    if ddf <= 0:
        raise NestingError(f"constrained model must have more df (got {constrained.df} vs {free.df})")
    delta = constrained.chisq - free.chisq
    if delta < -tol * max(1.0, free.chisq):
        raise NestingError(
            f"constrained chi-square {constrained.chisq:.6f} below free {free.chisq:.6f}; "
            "models not nested or a fit did not converge"
        )
    delta = max(delta, 0.0)
    return DiffTest(delta, ddf, chisq_sf(delta, ddf))
