"""
Measurement-invariance ladders: configural, weak, strong and strict fits of
one model over grouped data, with chi-square difference tests between
adjacent levels.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .instrument import (
    DegenerateGroupingError,
    GroupAssignment,
    Instrument,
    ResponseDataset,
)
from .report import SIGNIF_LEGEND, fmt_chisq, fmt_ic, fmt_p_with_code, tsv
from .sem import (
    LEVELS,
    FitResult,
    ModelSpec,
    NestingError,
    SampleStats,
    build_parameter_table,
    chisq_diff_test,
    fit,
)


@dataclass(frozen=True)
class LadderStep:
    level: str
    fit: FitResult
    delta_chisq: float | None = None
    delta_df: int | None = None
    p_value: float | None = None
    error: str = ""

    @property
    def converged(self) -> bool:
        return self.fit.converged

    @property
    def aic(self) -> float:
        return self.fit.aic

    @property
    def bic(self) -> float:
        return self.fit.bic


@dataclass(frozen=True)
class InvarianceLadder:
    name: str
    steps: tuple[LadderStep, ...]
    alpha: float = 0.05
    group_labels: tuple[str, ...] = ()

    @property
    def levels(self) -> tuple[str, ...]:
        return tuple(s.level for s in self.steps)

    @property
    def n_per_group(self) -> tuple[int, ...]:
        return self.steps[0].fit.n_per_group

    def step(self, level: str) -> LadderStep:
        for s in self.steps:
            if s.level == level:
                return s
        raise KeyError(level)

    def verdict_at(self, alpha: float) -> str:
        for s in self.steps[1:]:
            if s.p_value is not None and s.p_value < alpha:
                return s.level
        return "invariant through strict"

    @property
    def verdict(self) -> str:
        """First level whose difference test rejects at ``alpha``."""
        return self.verdict_at(self.alpha)

    @property
    def flagged(self) -> list[str]:
        return [s.level for s in self.steps if not s.converged or s.error]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "alpha": self.alpha,
            "groups": list(self.group_labels),
            "n_per_group": list(self.n_per_group),
            "verdict": self.verdict,
            "levels": [
                {
                    "level": s.level,
                    "converged": s.converged,
                    "df": s.fit.df,
                    "aic": s.aic,
                    "bic": s.bic,
                    "chisq": s.fit.chisq,
                    "loglik": s.fit.loglik,
                    "n_free": s.fit.n_free,
                    "chisq_diff": s.delta_chisq,
                    "df_diff": s.delta_df,
                    "p_value": s.p_value,
                    "error": s.error,
                }
                for s in self.steps
            ],
        }


@dataclass(frozen=True)
class SkippedSubscale:
    name: str
    notice: str

    def to_dict(self) -> dict:
        return {"name": self.name, "skipped": True, "notice": self.notice}


def run_ladder_stats(spec: ModelSpec, stats: SampleStats, alpha: float = 0.05, name: str = "") -> InvarianceLadder:
    """Ladder on precomputed group statistics; each level warm-starts from the last."""
    if stats.n_groups < 2:
        raise DegenerateGroupingError("invariance testing needs at least two groups")
    steps: list[LadderStep] = []
    prev: FitResult | None = None
    for level in LEVELS:
        res = fit(spec, stats, level=level, with_means=True, start=prev)
        if prev is None:
            steps.append(LadderStep(level, res))
        else:
            try:
                dt = chisq_diff_test(prev, res)
                steps.append(LadderStep(level, res, dt.delta_chisq, dt.delta_df, dt.p_value))
            except NestingError as exc:
                steps.append(LadderStep(level, res, res.chisq - prev.chisq, res.df - prev.df, None, str(exc)))
        prev = res
    return InvarianceLadder(name or " + ".join(spec.factors), tuple(steps), alpha, tuple(stats.group_labels))


def run_ladder(
    spec: ModelSpec,
    dataset: ResponseDataset,
    grouping: GroupAssignment,
    alpha: float = 0.05,
    name: str = "",
    likelihood: str = "normal",
) -> InvarianceLadder:
    """Configural-to-strict ladder of ``spec`` across the levels of ``grouping``."""
    _, labels = dataset.complete(spec.observed, grouping)
    counts = {lev: int(np.sum(labels == lev)) for lev in grouping.levels}
    counts = {lev: n for lev, n in counts.items() if n}
    if len(counts) < 2:
        raise DegenerateGroupingError(f"grouping {grouping.rule!r} leaves fewer than two non-empty groups")
    for lab, n in counts.items():
        if n < 2:
            raise DegenerateGroupingError(f"group {lab!r} has {n} complete respondents")
    stats = SampleStats.from_dataset(dataset, spec.observed, grouping, likelihood=likelihood)
    return run_ladder_stats(spec, stats, alpha, name)


def run_subscale_ladders(
    instrument: Instrument | None,
    final_model: ModelSpec,
    dataset: ResponseDataset,
    grouping: GroupAssignment,
    alpha: float = 0.05,
    threads: int = 1,
) -> list[InvarianceLadder | SkippedSubscale]:
    """One single-factor ladder per factor of ``final_model``.

    Subscales whose configural model has negative df (two indicators) are
    returned as :class:`SkippedSubscale` without fitting.
    """
    jobs = []
    for factor in final_model.factors:
        sub = final_model.subscale(factor)
        label = factor
        if instrument is not None:
            constructs = {instrument.construct_of(c) for c in sub.observed if c in instrument.columns}
            if len(constructs) == 1:
                label = f"{factor} ({constructs.pop()})"
        df = build_parameter_table(sub, 2, "configural", True).df
        if df < 0:
            notice = (
                f"{len(sub.observed)}-indicator single-factor model is under-identified "
                f"(configural df = {df}); not fitted"
            )
            jobs.append(SkippedSubscale(label, notice))
        else:
            jobs.append((sub, label))

    def work(job):
        if isinstance(job, SkippedSubscale):
            return job
        sub, label = job
        return run_ladder(sub, dataset, grouping, alpha, name=label)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(work, jobs))
    return [work(j) for j in jobs]


HEADER = ("", "DF", "AIC", "BIC", "Chisq", "Chisq diff", "DF diff", "Pr(>Chisq)")


def invariance_report(ladder: InvarianceLadder, title: str | None = None) -> str:
    """Tab-separated difference-test table followed by the significance legend."""
    rows = [HEADER]
    for s in ladder.steps:
        name = s.level.capitalize()
        base = [name, s.fit.df, fmt_ic(s.aic), fmt_ic(s.bic), fmt_chisq(s.fit.chisq)]
        if s.delta_chisq is None:
            rows.append(base + ["", "", ""])
        else:
            p = "" if s.p_value is None else fmt_p_with_code(s.p_value)
            rows.append(base + [fmt_chisq(s.delta_chisq), s.delta_df, p])
    out = (title + "\n\n") if title else ""
    return out + tsv(rows) + "\n" + SIGNIF_LEGEND + "\n"
