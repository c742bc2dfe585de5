import math

import pytest

from raterpsy.report import (
    SIGNIF_LEGEND,
    aligned,
    fmt_chisq,
    fmt_ic,
    fmt_p,
    fmt_p_with_code,
    format_pvalue_code,
    tsv,
)


@pytest.mark.parametrize(
    "p, code",
    [(3.078e-05, "***"), (0.003394, "**"), (0.01454, "*"), (0.046645, "*"), (0.0878904, "."), (0.5, " "), (0.0, "***"), (1.0, " ")],
)
def test_codes(p, code):
    assert format_pvalue_code(p) == code


@pytest.mark.parametrize("cut, below, at", [(0.001, "***", "**"), (0.01, "**", "*"), (0.05, "*", "."), (0.1, ".", " ")])
def test_code_boundaries_strict(cut, below, at):
    assert format_pvalue_code(math.nextafter(cut, 0)) == below
    assert format_pvalue_code(cut) == at


@pytest.mark.parametrize("p", [-1e-12, 1.0000001, float("nan"), float("inf")])
def test_code_domain_error(p):
    with pytest.raises(ValueError):
        format_pvalue_code(p)


def test_legend_text():
    assert SIGNIF_LEGEND == "Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"


def test_display_precision():
    assert fmt_p(3.0782e-05) == "3.078e-05"
    assert fmt_p(0.0001844) == "0.0001844"
    assert fmt_p(0.358912) == "0.3589"
    assert fmt_chisq(43.99312) == "43.9931"
    assert fmt_ic(5987.46) == "5987.5"
    assert fmt_p_with_code(0.8184) == "0.8184"
    assert fmt_p(0.69) == "0.6900"
    assert fmt_p(1.0) == "1.000"
    assert fmt_p_with_code(0.003394) == "0.003394 **"


def test_tables():
    assert tsv([("", "a"), ("x", 1)]) == "\ta\nx\t1\n"
    assert aligned([["a", "bbb"], ["cc", "d"]], header=["h", "k"]) == "h   k\na   bbb\ncc  d\n"
    assert aligned([]) == ""
