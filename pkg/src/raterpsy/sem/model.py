"""
Measurement-model specification and its text grammar.

One statement per line::

    # comment
    Violence =~ i1 + i3 + i4      # factor and its indicators
    i3 ~~ i4                      # residual covariance
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from itertools import combinations

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")


class ModelSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ModelSpecError(ValueError):
    """Structurally invalid model specification."""


@dataclass(frozen=True)
class ModelSpec:
    """Congeneric factor model plus optional extra paths.

    ``indicators[i]`` lists the items of ``factors[i]``. ``cross_loadings``
    and ``residual_covariances`` are only produced programmatically (for
    instance while computing modification indices) or by ``~~`` lines.
    ``extra_observed`` lets a model carry items that load on no factor.
    """

    factors: tuple[str, ...]
    indicators: tuple[tuple[str, ...], ...]
    cross_loadings: tuple[tuple[str, str], ...] = ()
    residual_covariances: tuple[tuple[str, str], ...] = ()
    extra_observed: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.factors) != len(self.indicators):
            raise ModelSpecError("factors and indicators differ in length")
        if len(set(self.factors)) != len(self.factors):
            raise ModelSpecError("duplicate factor name")
        seen: dict[str, str] = {}
        for f, items in zip(self.factors, self.indicators):
            if not items:
                raise ModelSpecError(f"factor {f!r} has no indicators")
            for it in items:
                if it in seen:
                    raise ModelSpecError(f"item {it!r} loads on both {seen[it]!r} and {f!r}")
                seen[it] = f
        for f, it in self.cross_loadings:
            if f not in self.factors:
                raise ModelSpecError(f"unknown factor {f!r}")
        obs = set(self.observed)
        for a, b in self.residual_covariances:
            if a == b or a not in obs or b not in obs:
                raise ModelSpecError(f"bad residual covariance {a} ~~ {b}")

    @property
    def observed(self) -> list[str]:
        out: dict[str, None] = {}
        for items in self.indicators:
            for it in items:
                out.setdefault(it, None)
        for _, it in self.cross_loadings:
            out.setdefault(it, None)
        for it in self.extra_observed:
            out.setdefault(it, None)
        return list(out)

    @property
    def loadings(self) -> list[tuple[str, str]]:
        pairs = [(f, it) for f, items in zip(self.factors, self.indicators) for it in items]
        return pairs + list(self.cross_loadings)

    @property
    def latent_covariances(self) -> list[tuple[str, str]]:
        return list(combinations(self.factors, 2))

    def factor_of(self, item: str) -> str:
        for f, items in zip(self.factors, self.indicators):
            if item in items:
                return f
        raise KeyError(item)

    def has_loading(self, factor: str, item: str) -> bool:
        return (factor, item) in self.loadings

    def has_residual_covariance(self, a: str, b: str) -> bool:
        return (a, b) in self.residual_covariances or (b, a) in self.residual_covariances

    def with_cross_loading(self, factor: str, item: str) -> "ModelSpec":
        if self.has_loading(factor, item):
            return self
        return replace(self, cross_loadings=self.cross_loadings + ((factor, item),))

    def with_residual_covariance(self, a: str, b: str) -> "ModelSpec":
        if self.has_residual_covariance(a, b):
            return self
        return replace(self, residual_covariances=self.residual_covariances + ((a, b),))

    def subscale(self, factor: str) -> "ModelSpec":
        """Single-factor model for one factor's own indicators."""
        i = self.factors.index(factor)
        items = set(self.indicators[i])
        rescov = tuple((a, b) for a, b in self.residual_covariances if a in items and b in items)
        return ModelSpec((factor,), (self.indicators[i],), residual_covariances=rescov)

    def to_text(self) -> str:
        lines = [f"{f} =~ " + " + ".join(items) for f, items in zip(self.factors, self.indicators)]
        lines += [f"{a} ~~ {b}" for a, b in self.residual_covariances]
        return "\n".join(lines) + "\n"


def saturated_spec(observed) -> ModelSpec:
    """No factors, every residual covariance free: reproduces S exactly."""
    observed = tuple(observed)
    return ModelSpec((), (), residual_covariances=tuple(combinations(observed, 2)), extra_observed=observed)


def _names(rhs: str, lineno: int, offset: int) -> list[str]:
    out = []
    pos = 0
    parts = rhs.split("+")
    for part in parts:
        stripped = part.strip()
        col = offset + pos + (len(part) - len(part.lstrip())) + 1
        if not stripped:
            raise ModelSyntaxError("expected an item name", lineno, col)
        if not _NAME.fullmatch(stripped):
            raise ModelSyntaxError(f"invalid name {stripped!r}", lineno, col)
        out.append(stripped)
        pos += len(part) + 1
    return out


def parse_model(text: str) -> ModelSpec:
    """Parse the ``Factor =~ item + item`` grammar into a ModelSpec."""
    factors: list[str] = []
    indicators: list[list[str]] = []
    rescov: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if "=~" in line:
            lhs, rhs = line.split("=~", 1)
            name = lhs.strip()
            col = len(lhs) - len(lhs.lstrip()) + 1
            if not _NAME.fullmatch(name):
                raise ModelSyntaxError(f"invalid factor name {name!r}", lineno, col)
            if not rhs.strip():
                raise ModelSyntaxError("factor has no indicators", lineno, len(line) + 1)
            items = _names(rhs, lineno, len(lhs) + 2)
            if name in factors:
                indicators[factors.index(name)].extend(items)
            else:
                factors.append(name)
                indicators.append(items)
        elif "~~" in line:
            lhs, rhs = line.split("~~", 1)
            a = _names(lhs, lineno, 0)
            b = _names(rhs, lineno, len(lhs) + 2)
            if len(a) != 1 or len(b) != 1:
                raise ModelSyntaxError("residual covariance takes exactly two items", lineno, 1)
            rescov.append((a[0], b[0]))
        else:
            col = len(line) - len(line.lstrip()) + 1
            raise ModelSyntaxError("expected '=~' or '~~'", lineno, col)
    if not factors:
        raise ModelSyntaxError("model defines no factors", 1, 1)
    seen: dict[str, str] = {}
    for f, items in zip(factors, indicators):
        for it in items:
            if it in seen:
                raise ModelSpecError(f"item {it!r} loads on both {seen[it]!r} and {f!r}")
            seen[it] = f
            if it in factors:
                raise ModelSpecError(f"{it!r} is a factor; structural paths are not supported")
    return ModelSpec(tuple(factors), tuple(tuple(i) for i in indicators), residual_covariances=tuple(rescov))
