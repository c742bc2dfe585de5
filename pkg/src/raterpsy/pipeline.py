"""
Analysis stages behind the command line. Each stage returns a JSON-ready
section dict and its text rendering; numbers in the text are the section's
numbers rounded for display.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import efa as efa_mod
from .instrument import (
    GroupAssignment,
    Instrument,
    ResponseDataset,
    SchemaError,
    age_binarize,
    bfi10_scores,
    median_split,
)
from .invariance import (
    InvarianceLadder,
    SkippedSubscale,
    invariance_report,
    run_ladder,
    run_subscale_ladders,
)
from .psychometrics import moments, reliability
from .report import aligned, fmt_chisq, fmt_ic, fmt_p
from .sem import (
    ModelSpec,
    SampleStats,
    baseline_fit,
    fit,
    fit_indices,
    modification_indices,
)

SCHEMA = "raterpsy.report"
SCHEMA_VERSION = 1


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def clean(obj):
    """Make ``obj`` strict-JSON serializable (NaN/inf become None)."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class Section:
    stage: str
    data: dict
    text: str

    def to_dict(self) -> dict:
        return {"stage": self.stage, **self.data}


# -- reliability ---------------------------------------------------------------


def reliability_stage(dataset: ResponseDataset, instrument: Instrument) -> Section:
    reports = []
    lines = ["== Reliability (Cronbach's alpha, covariance based) =="]
    for construct in instrument.constructs:
        cols = [c for c in instrument.construct_columns(construct) if c in dataset.frame.columns]
        if len(cols) < 2:
            raise StageError("reliability", f"construct {construct!r} has fewer than 2 item columns in the data")
        mom = moments(dataset, cols)
        rep = reliability(mom)
        reports.append(
            {
                "construct": construct,
                "items": list(rep.columns),
                "n": rep.n,
                "alpha": rep.alpha,
                "alpha_if_deleted": list(rep.alpha_if_deleted),
                "item_total": list(rep.item_total),
            }
        )
        lines.append(f"{construct}: alpha = {rep.alpha:.3f} (k = {len(cols)}, n = {rep.n})")
        rows = []
        for j, c in enumerate(rep.columns):
            aid = f"{rep.alpha_if_deleted[j]:.3f}" if rep.alpha_if_deleted else ""
            flag = "  <- alpha rises if deleted" if rep.alpha_if_deleted and rep.alpha_if_deleted[j] > rep.alpha else ""
            rows.append([f"  {c}", f"{rep.item_total[j]:.3f}", aid + flag])
        lines.append(aligned(rows, ["  item", "item-total r", "alpha if deleted"]).rstrip("\n"))
    return Section("reliability", {"subscales": reports}, "\n".join(lines) + "\n")


# -- exploratory factor analysis ----------------------------------------------


def parallel_stage(dataset, items, replications, quantile, seed, threads=1) -> tuple[Section, efa_mod.ParallelAnalysisResult]:
    pa = efa_mod.parallel_analysis(dataset, items, replications=replications, quantile=quantile, seed=seed, threads=threads)
    rows = [
        [i + 1, f"{o:.3f}", f"{m:.3f}", f"{t:.3f}", "*" if i < pa.n_retained else ""]
        for i, (o, m, t) in enumerate(zip(pa.observed_eigenvalues, pa.mean_eigenvalues, pa.threshold_eigenvalues))
    ]
    text = (
        f"== Parallel analysis ({pa.replications} replications, quantile {pa.quantile:g}, seed {pa.seed}) ==\n"
        + aligned(rows, ["rank", "observed", "random mean", "random quantile", "retained"])
        + f"factors retained: {pa.n_retained}\n"
    )
    return Section("parallel_analysis", {"items": list(items), **pa.to_dict()}, text), pa


def efa_stage(dataset, items, k, rotation, suppress, instrument: Instrument | None) -> Section:
    mom = moments(dataset, items)
    loadings = efa_mod.rotate(efa_mod.extract_factors(mom.correlation, k, columns=items), rotation)
    dims = []
    for c in items:
        try:
            dims.append(instrument.construct_of(c) if instrument else "")
        except KeyError:
            dims.append("")
    text = (
        f"== Exploratory factor analysis (minres, {rotation}, k = {k}, |loading| < {suppress:g} blank) ==\n"
        + efa_mod.loading_report(loadings, suppress, constructs=dims)
    )
    if loadings.k > 1:
        text += "factor correlations:\n" + aligned([[f"{v:.3f}" for v in row] for row in loadings.factor_correlations])
    return Section("efa", {"k": k, "suppress": suppress, "n": mom.n, **loadings.to_dict()}, text)


# -- confirmatory factor analysis ---------------------------------------------


def cfa_section(spec: ModelSpec, stats: SampleStats, mod_indices: bool = True, top: int = 10, threads: int = 1) -> Section:
    res = fit(spec, stats)
    base = baseline_fit(stats, with_means=res.table.with_means)
    idx = fit_indices(res, base)
    data = {
        "model": spec.to_text(),
        "converged": res.converged,
        "iterations": res.iterations,
        "message": res.message,
        "n": res.n_total,
        "fmin": res.fmin,
        "indices": idx.to_dict(),
        "parameters": res.table.to_records(),
        "standardized_loadings": [
            {"factor": f, "item": it, "value": v} for (f, it), v in res.standardized_loadings().items()
        ],
    }
    lines = [
        "== Confirmatory factor analysis (ML) ==",
        f"converged: {res.converged} ({res.iterations} iterations; {res.message})",
        f"n = {res.n_total}, free parameters = {res.n_free}",
        f"Chisq = {fmt_chisq(idx.chisq)}, df = {idx.df}, p = {fmt_p(idx.pvalue)}",
        f"CFI = {idx.cfi:.3f}, RMSEA = {idx.rmsea:.3f}, SRMR = {idx.srmr:.3f}",
        f"AIC = {fmt_ic(idx.aic)}, BIC = {fmt_ic(idx.bic)}",
    ]
    if idx.note:
        lines.append(f"note: {idx.note}")
    rows = [[f, it, f"{v:.3f}"] for (f, it), v in res.standardized_loadings().items()]
    lines.append(aligned(rows, ["factor", "item", "std. loading"]).rstrip("\n"))
    if mod_indices:
        mis = modification_indices(res, threads=threads)
        data["modification_indices"] = [
            {"candidate": str(m.candidate), "kind": m.candidate.kind, "mi": m.mi, "df": m.delta_df, "converged": m.converged}
            for m in mis
        ]
        lines.append(f"modification indices (top {min(top, len(mis))} of {len(mis)}):")
        rows = [[str(m.candidate), f"{m.mi:.3f}", "" if m.converged else "refit did not converge"] for m in mis[:top]]
        lines.append(aligned(rows, ["candidate", "MI", ""]).rstrip("\n"))
    return Section("cfa", data, "\n".join(lines) + "\n")


# -- invariance -----------------------------------------------------------------


def ladder_section(ladder: InvarianceLadder | SkippedSubscale, title: str) -> tuple[dict, str]:
    if isinstance(ladder, SkippedSubscale):
        return ladder.to_dict(), f"{title}\n{ladder.notice}\n"
    doc = ladder.to_dict()
    counts = ", ".join(f"{g} n={n}" for g, n in zip(ladder.group_labels, ladder.n_per_group))
    text = invariance_report(ladder, title=f"{title} [{counts}]")
    if ladder.flagged:
        text += f"flagged levels: {', '.join(ladder.flagged)}\n"
    text += f"verdict: {ladder.verdict}\n"
    return doc, text


def invariance_stage(
    stage: str,
    spec: ModelSpec,
    dataset: ResponseDataset,
    grouping: GroupAssignment,
    alpha: float,
    subscales: bool,
    instrument: Instrument | None,
    label: str,
    threads: int = 1,
) -> Section:
    full = run_ladder(spec, dataset, grouping, alpha, name="full model")
    doc, text = ladder_section(full, f"Chi-squared difference test of {label} on the {len(spec.factors)}-factor model")
    data = {"grouping": grouping.rule, "group_counts": grouping.counts(), "full_model": doc, "subscales": []}
    parts = [text]
    if subscales:
        for lad in run_subscale_ladders(instrument, spec, dataset, grouping, alpha, threads=threads):
            sdoc, stext = ladder_section(lad, f"Chi-squared difference test of {label} on {lad.name}")
            data["subscales"].append(sdoc)
            parts.append(stext)
    return Section(stage, {"label": label, **data}, "\n".join(parts))


def personality_groupings(dataset: ResponseDataset, bfi: Instrument) -> list[tuple[str, GroupAssignment]]:
    missing = [c for c in bfi.columns if c not in dataset.frame.columns]
    if missing:
        raise SchemaError(f"dataset lacks BFI columns {missing}")
    scores, _ = bfi10_scores(dataset, bfi)
    return [(trait, median_split(dataset, trait, scores=scores[trait])) for trait in scores.columns]


def age_grouping(dataset: ResponseDataset, column: str, cut) -> GroupAssignment:
    return age_binarize(dataset, cut, column=column)
