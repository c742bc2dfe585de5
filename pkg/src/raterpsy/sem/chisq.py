"""
Chi-square tail probabilities via the regularized incomplete gamma function.

``P(a, x)`` uses the power series for ``x < a + 1`` and ``Q(a, x)`` the
Legendre continued fraction (modified Lentz) otherwise, so each branch is
only evaluated where it converges quickly and without cancellation.
"""

from __future__ import annotations

import math

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _prefix(a: float, x: float) -> float:
    # x**a * exp(-x) / Gamma(a), evaluated in log space
    return math.exp(a * math.log(x) - x - math.lgamma(a))


def _series_p(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * _prefix(a, x)
    raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _contfrac_q(a: float, x: float) -> float:
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h * _prefix(a, x)
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _series_p(a, x)
    return 1.0 - _contfrac_q(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _series_p(a, x)
    return _contfrac_q(a, x)


def chisq_sf(x: float, df: float) -> float:
    """Upper-tail probability of a chi-square variate with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if x <= 0:
        return 1.0
    return gammainc_upper(0.5 * df, 0.5 * x)


def chisq_cdf(x: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    if x <= 0:
        return 0.0
    return gammainc_lower(0.5 * df, 0.5 * x)
