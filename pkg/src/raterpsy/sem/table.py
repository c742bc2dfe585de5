"""
Per-group parameter tables with identification and equality constraints.

Factors are identified by fixing their variances to one and their means to
zero. Invariance levels are cumulative:

* ``configural``: every measurement parameter free in every group.
* ``weak``: loadings equal across groups; latent variances released in the
  non-reference groups.
* ``strong``: intercepts also equal; latent means released in the
  non-reference groups.
* ``strict``: residual (co)variances also equal.

Group 0 is the reference group.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

from .model import ModelSpec

LEVELS = ("configural", "weak", "strong", "strict")

KINDS = (
    "loading",
    "intercept",
    "residual_variance",
    "residual_covariance",
    "latent_variance",
    "latent_covariance",
    "latent_mean",
)


class ConstraintError(ValueError):
    """Invariance constraints requested for a single-group model."""


@dataclass(frozen=True)
class Parameter:
    kind: str
    group: int
    lhs: str
    rhs: str
    free: int
    value: float
    label: str = ""

    @property
    def status(self) -> str:
        if self.free < 0:
            return "fixed"
        return "equal" if self.label else "free"

    @property
    def key(self) -> tuple:
        return (self.kind, self.lhs, self.rhs)


@dataclass(frozen=True)
class ParameterTable:
    spec: ModelSpec
    rows: tuple[Parameter, ...]
    n_groups: int
    level: str
    with_means: bool

    @property
    def observed(self) -> list[str]:
        return self.spec.observed

    @property
    def n_free(self) -> int:
        return 1 + max((r.free for r in self.rows), default=-1)

    @property
    def n_moments(self) -> int:
        p = len(self.observed)
        per_group = p * (p + 1) // 2 + (p if self.with_means else 0)
        return self.n_groups * per_group

    @property
    def df(self) -> int:
        return self.n_moments - self.n_free

    def group_rows(self, group: int) -> list[Parameter]:
        return [r for r in self.rows if r.group == group]

    def free_values(self) -> list[float]:
        out = [0.0] * self.n_free
        for r in self.rows:
            if r.free >= 0:
                out[r.free] = r.value
        return out

    def with_free_values(self, values: Iterable[float]) -> "ParameterTable":
        values = list(values)
        rows = tuple(replace(r, value=float(values[r.free])) if r.free >= 0 else r for r in self.rows)
        return replace(self, rows=rows)

    def with_rows(self, rows) -> "ParameterTable":
        return replace(self, rows=tuple(rows))

    def lookup(self, kind: str, lhs: str, rhs: str = "", group: int = 0) -> Parameter:
        for r in self.rows:
            if r.kind == kind and r.lhs == lhs and r.rhs == rhs and r.group == group:
                return r
        raise KeyError((kind, lhs, rhs, group))

    def to_records(self) -> list[dict]:
        return [
            {
                "kind": r.kind,
                "group": r.group,
                "lhs": r.lhs,
                "rhs": r.rhs,
                "status": r.status,
                "label": r.label,
                "free_index": r.free,
                "estimate": r.value,
            }
            for r in self.rows
        ]


def build_parameter_table(spec: ModelSpec, groups: int = 1, level: str = "configural", with_means: bool | None = None) -> ParameterTable:
    """Build the parameter table for ``spec`` fitted to ``groups`` groups.

    ``with_means`` defaults to True for multigroup models and False for a
    single group. Values are placeholders (1 for free or unit-fixed
    variances, 0 otherwise); the fitter supplies starting values.
    """
    if level not in LEVELS:
        raise ValueError(f"unknown invariance level {level!r}; expected one of {LEVELS}")
    if groups < 1:
        raise ConstraintError("need at least one group")
    if groups < 2 and level != "configural":
        raise ConstraintError(f"level {level!r} needs at least two groups")
    if with_means is None:
        with_means = groups > 1
    rank = LEVELS.index(level)
    tie_loadings = rank >= 1
    tie_intercepts = rank >= 2
    tie_residuals = rank >= 3

    keys: dict = {}
    rows: list[Parameter] = []

    def add(kind, g, lhs, rhs, free, value, tied):
        if not free:
            rows.append(Parameter(kind, g, lhs, rhs, -1, value))
            return
        label = f"{kind}:{lhs}:{rhs}" if tied else ""
        key = label if tied else (kind, g, lhs, rhs)
        idx = keys.setdefault(key, len(keys))
        rows.append(Parameter(kind, g, lhs, rhs, idx, value, label))

    for g in range(groups):
        ref = g == 0
        for f, it in spec.loadings:
            add("loading", g, f, it, True, 0.0, tie_loadings)
        if with_means:
            for it in spec.observed:
                add("intercept", g, it, "", True, 0.0, tie_intercepts)
        for it in spec.observed:
            add("residual_variance", g, it, it, True, 1.0, tie_residuals)
        for a, b in spec.residual_covariances:
            add("residual_covariance", g, a, b, True, 0.0, tie_residuals)
        for f in spec.factors:
            add("latent_variance", g, f, f, rank >= 1 and not ref, 1.0, False)
        for a, b in spec.latent_covariances:
            add("latent_covariance", g, a, b, True, 0.0, False)
        if with_means:
            for f in spec.factors:
                add("latent_mean", g, f, "", rank >= 2 and not ref, 0.0, False)
    return ParameterTable(spec=spec, rows=tuple(rows), n_groups=groups, level=level, with_means=with_means)
