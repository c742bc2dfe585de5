"""
Inverse-update BFGS with a backtracking Armijo line search.

The objective may return ``inf`` for infeasible trial points (e.g. a
non-positive-definite implied covariance); the line search treats those as
failed steps and backtracks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    converged: bool
    iterations: int
    evaluations: int
    message: str


def bfgs(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray | None]],
    x0: np.ndarray,
    h0: np.ndarray | Callable[[np.ndarray], np.ndarray] | None = None,
    gtol: float = 1e-6,
    max_iter: int = 10_000,
    stall_window: int = 200,
    stall_ftol: float = 1e-10,
) -> OptimResult:
    """Minimize ``fun`` (returning value and gradient).

    Converges when the gradient max-norm drops below ``gtol``. ``h0`` is the
    initial inverse Hessian, or a callable producing one at a given point
    (used again whenever the quasi-Newton approximation has to be reset).
    The run also stops, flagged as converged, when the gradient is below
    ``100 * gtol`` and the line search can no longer find a decrease (the
    objective is flat to rounding). A run whose objective improves by less
    than ``stall_ftol`` (relative) over ``stall_window`` iterations stops
    unconverged; this is the signature of an estimate drifting along a ridge
    toward an improper solution (or, with a gradient under ``100 * gtol``,
    of rounding noise, which counts as converged).
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    evals = 1
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")

    def initial(at):
        if h0 is None:
            return np.eye(x.size)
        return h0(at) if callable(h0) else np.array(h0, dtype=float)

    H = initial(x)
    stalled = 0
    history = [f]
    for it in range(max_iter):
        gmax = np.max(np.abs(g)) if g.size else 0.0
        if gmax < gtol:
            return OptimResult(x, f, g, True, it, evals, "gradient tolerance reached")
        if len(history) > stall_window and history[-stall_window - 1] - f <= stall_ftol * max(1.0, abs(f)):
            if gmax < 100 * gtol:
                return OptimResult(x, f, g, True, it, evals, "rounding-limited; gradient small")
            return OptimResult(x, f, g, False, it, evals, f"no progress in {stall_window} iterations")
        d = -H @ g
        slope = g @ d
        if not slope < 0:
            H = initial(x)
            d = -H @ g
            slope = g @ d
            if not slope < 0:
                d = -g
                slope = -(g @ g)
        step = 1.0
        accepted = False
        for _ in range(60):
            xn = x + step * d
            fn, gn = fun(xn)
            evals += 1
            if np.isfinite(fn) and fn <= f + 1e-4 * step * slope:
                accepted = True
                break
            if np.isfinite(fn):
                # safeguarded quadratic interpolation
                denom = 2.0 * (fn - f - step * slope)
                trial = -slope * step * step / denom if denom > 0 else 0.5 * step
                step = min(max(trial, 0.1 * step), 0.5 * step)
            else:
                step *= 0.5
        if not accepted:
            if gmax < 100 * gtol:
                return OptimResult(x, f, g, True, it, evals, "rounding-limited; gradient small")
            # retry once from a fresh Hessian before giving up
            if stalled == 0:
                stalled = 1
                H = initial(x)
                continue
            return OptimResult(x, f, g, False, it, evals, "line search failed")
        stalled = 0
        s = xn - x
        y = gn - g
        sy = s @ y
        x, f, g = xn, fn, gn
        history.append(f)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            Hy = H @ y
            H = H + ((sy + y @ Hy) / sy**2) * np.outer(s, s) - (np.outer(Hy, s) + np.outer(s, Hy)) / sy
    return OptimResult(x, f, g, False, max_iter, evals, "iteration limit reached")
