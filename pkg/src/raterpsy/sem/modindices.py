"""
Modification indices by exact one-parameter refits.

Each candidate (a cross-loading or a residual covariance) is added to the
model, the model is refitted from the current solution, and the index is
the resulting drop in chi-square.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations

from .ml import FitResult, fit
from .model import ModelSpec
from .table import build_parameter_table


@dataclass(frozen=True)
class Candidate:
    kind: str  # "loading" or "residual_covariance"
    lhs: str
    rhs: str

    def __str__(self):
        op = "=~" if self.kind == "loading" else "~~"
        return f"{self.lhs} {op} {self.rhs}"


@dataclass(frozen=True)
class ModIndex:
    candidate: Candidate
    mi: float
    delta_df: int
    converged: bool
    chisq: float


def default_candidates(spec: ModelSpec) -> list[Candidate]:
    """All absent cross-loadings, then all absent residual covariances."""
    out = []
    for f in spec.factors:
        for it in spec.observed:
            if not spec.has_loading(f, it):
                out.append(Candidate("loading", f, it))
    for a, b in combinations(spec.observed, 2):
        if not spec.has_residual_covariance(a, b):
            out.append(Candidate("residual_covariance", a, b))
    return out


def _extend(spec: ModelSpec, cand: Candidate) -> ModelSpec:
    if cand.kind == "loading":
        return spec.with_cross_loading(cand.lhs, cand.rhs)
    if cand.kind == "residual_covariance":
        return spec.with_residual_covariance(cand.lhs, cand.rhs)
    raise ValueError(f"unsupported candidate kind {cand.kind!r}")


def _is_present(spec: ModelSpec, cand: Candidate) -> bool:
    if cand.kind == "loading":
        return spec.has_loading(cand.lhs, cand.rhs)
    return spec.has_residual_covariance(cand.lhs, cand.rhs)


def modification_indices(current: FitResult, candidates=None, threads: int = 1) -> list[ModIndex]:
    """Chi-square drop for freeing each candidate, sorted descending.

    Refits that fail to converge are kept in the output with
    ``converged=False``. Candidates already in the model get ``mi = 0``.
    Order among equal indices follows candidate order, so the result does
    not depend on ``threads``.
    """
    table = current.table
    spec = table.spec
    cands = default_candidates(spec) if candidates is None else list(candidates)

    def one(cand: Candidate) -> ModIndex:
        if _is_present(spec, cand):
            return ModIndex(cand, 0.0, 0, True, current.chisq)
        new_spec = _extend(spec, cand)
        new_table = build_parameter_table(new_spec, table.n_groups, table.level, table.with_means)
        refit = fit(new_table, current.stats, start=current)
        mi = current.chisq - refit.chisq
        return ModIndex(cand, mi, current.df - refit.df, refit.converged, refit.chisq)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, cands))
    else:
        results = [one(c) for c in cands]
    order = sorted(range(len(results)), key=lambda i: (-results[i].mi, i))
    return [results[i] for i in order]
