"""
Text rendering shared by the analyses and the command line.

Display precision: df as integers, AIC/BIC with one decimal, chi-square
values with four decimals, p-values with four significant figures,
trailing zeros kept (scientific notation below 1e-4).
"""

from __future__ import annotations

import math

SIGNIF_LEGEND = "Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"

_CODES = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "."))


def format_pvalue_code(p: float) -> str:
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise ValueError(f"p-value {p!r} outside [0, 1]")
    for cut, code in _CODES:
        if p < cut:
            return code
    return " "


def fmt_p(p: float) -> str:
    if p < 1e-4:
        return f"{p:.3e}"
    return f"{p:#.4g}"


def fmt_chisq(x: float) -> str:
    return f"{x:.4f}"


def fmt_ic(x: float) -> str:
    return f"{x:.1f}"


def fmt_p_with_code(p: float) -> str:
    code = format_pvalue_code(p)
    return fmt_p(p) if code == " " else f"{fmt_p(p)} {code}"


def tsv(rows) -> str:
    return "".join("\t".join(str(c) for c in row) + "\n" for row in rows)


def aligned(rows, header=None) -> str:
    """Left-aligned plain text table."""
    rows = [list(map(str, r)) for r in rows]
    if header is not None:
        rows = [list(map(str, header))] + rows
    if not rows:
        return ""
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(max(len(r) for r in rows))]
    out = []
    for r in rows:
        out.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)).rstrip())
    return "\n".join(out) + "\n"
