"""
Exploratory factor analysis: parallel analysis for the number of factors,
minimum-residual extraction, varimax/promax rotation and loading tables.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .instrument import ResponseDataset
from .psychometrics import ArityError, eigenvalues


class ExtractionError(RuntimeError):
    """Minimum-residual extraction hit its iteration limit."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual sum of squares {residual:.6g})")
        self.residual = residual


class HeywoodWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ParallelAnalysisResult:
    observed_eigenvalues: np.ndarray
    threshold_eigenvalues: np.ndarray
    mean_eigenvalues: np.ndarray
    n_retained: int
    replications: int
    quantile: float
    n: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "observed_eigenvalues": self.observed_eigenvalues.tolist(),
            "threshold_eigenvalues": self.threshold_eigenvalues.tolist(),
            "mean_eigenvalues": self.mean_eigenvalues.tolist(),
            "n_retained": self.n_retained,
            "replications": self.replications,
            "quantile": self.quantile,
            "n": self.n,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class LoadingMatrix:
    pattern: np.ndarray
    factor_correlations: np.ndarray
    eigenvalue_per_factor: np.ndarray
    variance_pct_per_factor: np.ndarray
    uniqueness: np.ndarray
    columns: tuple[str, ...] = ()
    rotation: str = "none"

    @property
    def k(self) -> int:
        return self.pattern.shape[1]

    @property
    def structure(self) -> np.ndarray:
        return self.pattern @ self.factor_correlations

    @property
    def communalities(self) -> np.ndarray:
        return np.einsum("ij,jk,ik->i", self.pattern, self.factor_correlations, self.pattern)

    def implied_correlation(self) -> np.ndarray:
        return self.pattern @ self.factor_correlations @ self.pattern.T + np.diag(self.uniqueness)

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "rotation": self.rotation,
            "pattern": self.pattern.tolist(),
            "factor_correlations": self.factor_correlations.tolist(),
            "eigenvalue_per_factor": self.eigenvalue_per_factor.tolist(),
            "variance_pct_per_factor": self.variance_pct_per_factor.tolist(),
            "uniqueness": self.uniqueness.tolist(),
        }


def _correlate(x: np.ndarray) -> np.ndarray:
    z = x - x.mean(axis=0)
    cov = z.T @ z
    sd = np.sqrt(np.diag(cov))
    r = cov / np.outer(sd, sd)
    np.fill_diagonal(r, 1.0)
    return r


def _random_eigen(n: int, p: int, seed: int, rep: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))
    return np.linalg.eigvalsh(_correlate(rng.standard_normal((n, p))))[::-1]


def parallel_analysis(
    data: ResponseDataset | np.ndarray,
    item_set: Sequence[str] | None = None,
    replications: int = 100,
    quantile: float = 0.95,
    seed: int = 0,
    threads: int = 1,
) -> ParallelAnalysisResult:
    """Horn's parallel analysis on correlation-matrix eigenvalues.

    Replication ``r`` draws ``n x p`` standard normal data from
    ``SeedSequence(seed, spawn_key=(r,))``, so the result is identical for
    any ``threads``. The number retained is the length of the leading run of
    observed eigenvalues exceeding the ``quantile`` of the random ones.
    """
    if isinstance(data, ResponseDataset):
        if item_set is None:
            item_set = data.item_columns
        x, _ = data.complete(list(item_set))
    else:
        x = np.asarray(data, dtype=float)
        x = x[~np.isnan(x).any(axis=1)]
    n, p = x.shape
    if p < 2:
        raise ArityError("parallel analysis needs at least 2 items")
    if replications < 100:
        raise ValueError(f"replications must be >= 100, got {replications}")
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    if n <= p:
        warnings.warn(f"n={n} does not exceed p={p}; eigenvalues are unstable")
    observed = eigenvalues(_correlate(x))

    def one(rep):
        return _random_eigen(n, p, seed, rep)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            sims = np.array(list(pool.map(one, range(replications))))
    else:
        sims = np.array([one(r) for r in range(replications)])
    thresholds = np.quantile(sims, quantile, axis=0)
    above = observed > thresholds
    retained = int(np.argmin(above)) if not above.all() else p
    return ParallelAnalysisResult(observed, thresholds, sims.mean(axis=0), retained, replications, quantile, n, seed)


def _smc(r: np.ndarray) -> np.ndarray:
    try:
        inv = np.linalg.inv(r)
    except np.linalg.LinAlgError:
        inv = np.linalg.pinv(r)
    return np.clip(1.0 - 1.0 / np.diag(inv), 0.0, 1.0)


def _canonical(lam: np.ndarray) -> np.ndarray:
    """Rotate to principal axes, order by sum of squares, make column sums positive."""
    vals, vecs = np.linalg.eigh(lam.T @ lam)
    lam = lam @ vecs[:, ::-1]
    signs = np.where(lam.sum(axis=0) < 0, -1.0, 1.0)
    return lam * signs


def offdiag_residual_ss(r: np.ndarray, lam: np.ndarray) -> float:
    e = r - lam @ lam.T
    np.fill_diagonal(e, 0.0)
    return float(np.sum(e * e))


def extract_factors(correlation: np.ndarray, k: int, max_iter: int = 5000, columns: Sequence[str] = ()) -> LoadingMatrix:
    """Minimum-residual (unweighted least squares) factor extraction.

    Minimizes the sum of squared off-diagonal residuals
    ``sum_{i != j} (R_ij - (L L')_ij)^2`` over the ``p x k`` loadings ``L``,
    starting from principal axes with squared multiple correlations as
    communalities. Communalities above 1 are clamped (rows rescaled to unit
    length) with a :class:`HeywoodWarning`.
    """
    r = np.asarray(correlation, dtype=float)
    p = r.shape[0]
    if r.shape != (p, p):
        raise ValueError("correlation must be square")
    if not 1 <= k < p:
        raise ArityError(f"need 1 <= k < p, got k={k}, p={p}")
    reduced = r - np.diag(1.0 - _smc(r))
    vals, vecs = np.linalg.eigh(reduced)
    vals, vecs = vals[::-1][:k], vecs[:, ::-1][:, :k]
    lam0 = vecs * np.sqrt(np.clip(vals, 0.0, None))

    off = 1.0 - np.eye(p)

    def fun(flat):
        lam = flat.reshape(p, k)
        e = (r - lam @ lam.T) * off
        return float(np.sum(e * e)), (-4.0 * e @ lam).ravel()

    res = minimize(fun, lam0.ravel(), jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": max_iter})
    lam = res.x.reshape(p, k)
    if not res.success and res.nit >= max_iter:
        raise ExtractionError("minres extraction did not converge", fun(res.x)[0])
    lam = _canonical(lam)
    comm = np.sum(lam**2, axis=1)
    if np.any(comm > 1.0):
        bad = np.flatnonzero(comm > 1.0)
        warnings.warn(f"Heywood case: communality > 1 for items {bad.tolist()}; clamped to 1", HeywoodWarning)
        lam[bad] /= np.sqrt(comm[bad])[:, None]
        comm = np.minimum(comm, 1.0)
    ss = np.sum(lam**2, axis=0)
    return LoadingMatrix(
        pattern=lam,
        factor_correlations=np.eye(k),
        eigenvalue_per_factor=ss,
        variance_pct_per_factor=100.0 * ss / p,
        uniqueness=1.0 - comm,
        columns=tuple(columns),
        rotation="none",
    )


def _varimax_criterion(z: np.ndarray) -> float:
    p = z.shape[0]
    z2 = z**2
    return float(np.sum(np.sum(z2**2, axis=0) - np.sum(z2, axis=0) ** 2 / p))


def _varimax_from(x: np.ndarray, t: np.ndarray, eps: float, max_iter: int) -> np.ndarray:
    p = x.shape[0]
    d = 0.0
    for _ in range(max_iter):
        z = x @ t
        b = x.T @ (z**3 - z @ np.diag(np.sum(z**2, axis=0)) / p)
        u, s, vt = np.linalg.svd(b)
        t = u @ vt
        d_old, d = d, np.sum(s)
        if d < d_old * (1 + eps):
            break
    return t


def varimax(lam: np.ndarray, normalize: bool = True, eps: float = 1e-12, max_iter: int = 1000, starts: int = 4):
    """Kaiser varimax. Returns rotated loadings and the rotation matrix.

    The identity start can sit on a stationary point when the structure is
    exactly symmetric, so ``starts - 1`` extra fixed pseudo-random
    orthogonal starts are tried and the best criterion kept.
    """
    lam = np.asarray(lam, dtype=float)
    p, k = lam.shape
    if k < 2:
        return lam.copy(), np.eye(k)
    if normalize:
        sc = np.sqrt(np.sum(lam**2, axis=1))
        sc[sc == 0] = 1.0
        x = lam / sc[:, None]
    else:
        x = lam
    rng = np.random.default_rng(12345)
    inits = [np.eye(k)] + [np.linalg.qr(rng.standard_normal((k, k)))[0] for _ in range(starts - 1)]
    best_t, best_c = None, -np.inf
    for t0 in inits:
        t = _varimax_from(x, t0, eps, max_iter)
        c = _varimax_criterion(x @ t)
        if c > best_c + 1e-12:
            best_t, best_c = t, c
    return lam @ best_t, best_t


def promax(lam: np.ndarray, power: int = 4):
    """Promax: varimax then a least-squares fit to the powered target.

    Returns pattern loadings and factor correlations. All-zero columns
    (over-extracted factors) are left in place and uncorrelated.
    """
    lam = np.asarray(lam, dtype=float)
    k = lam.shape[1]
    live = np.sum(lam**2, axis=0) > 1e-20
    if live.sum() < k:
        pattern, phi = lam.copy(), np.eye(k)
        if live.any():
            pattern[:, live], phi[np.ix_(live, live)] = promax(lam[:, live], power)
        return pattern, phi
    if k < 2:
        return lam.copy(), np.eye(k)
    x, _ = varimax(lam)
    target = x * np.abs(x) ** (power - 1)
    u = np.linalg.lstsq(x, target, rcond=None)[0]
    d = np.diag(np.linalg.inv(u.T @ u))
    u = u @ np.diag(np.sqrt(d))
    pattern = x @ u
    ui = np.linalg.inv(u)
    phi = ui @ ui.T
    return pattern, phi


def rotate(loadings: LoadingMatrix, method: str = "promax", power: int = 4) -> LoadingMatrix:
    """Rotate, then order factors by explained variance with positive column sums.

    Explained variance per factor is the column sum of squared structure
    loadings.
    """
    k = loadings.k
    if k == 1 or method in ("none", None):
        return replace(loadings, rotation="none" if method in ("none", None) else method)
    if method == "varimax":
        pattern, _ = varimax(loadings.pattern)
        phi = np.eye(k)
    elif method == "promax":
        pattern, phi = promax(loadings.pattern, power)
    else:
        raise ValueError(f"unknown rotation {method!r}")
    ss = np.sum((pattern @ phi) ** 2, axis=0)
    order = np.argsort(-ss, kind="stable")
    pattern, phi, ss = pattern[:, order], phi[np.ix_(order, order)], ss[order]
    signs = np.where(pattern.sum(axis=0) < 0, -1.0, 1.0)
    pattern = pattern * signs
    phi = phi * np.outer(signs, signs)
    phi = 0.5 * (phi + phi.T)
    np.fill_diagonal(phi, 1.0)
    p = pattern.shape[0]
    return replace(
        loadings,
        pattern=pattern,
        factor_correlations=phi,
        eigenvalue_per_factor=ss,
        variance_pct_per_factor=100.0 * ss / p,
        rotation=method,
    )


def congruence(a: np.ndarray, b: np.ndarray) -> float:
    """Tucker's congruence coefficient between two loading vectors."""
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def match_factors(estimated: np.ndarray, truth: np.ndarray) -> list[float]:
    """Per-true-factor congruence after optimal column matching (sign-free)."""
    from itertools import permutations

    k = truth.shape[1]
    best, best_perm = -np.inf, None
    for perm in permutations(range(estimated.shape[1]), k):
        score = sum(abs(congruence(estimated[:, perm[j]], truth[:, j])) for j in range(k))
        if score > best:
            best, best_perm = score, perm
    return [abs(congruence(estimated[:, best_perm[j]], truth[:, j])) for j in range(k)]


def loading_report(
    loadings: LoadingMatrix,
    suppress: float = 0.10,
    item_labels: Sequence[str] | None = None,
    constructs: Sequence[str] | None = None,
) -> str:
    """Tab-separated items x factors table with small loadings left blank."""
    if suppress < 0:
        raise ValueError("suppress must be >= 0")
    p, k = loadings.pattern.shape
    labels = list(item_labels) if item_labels is not None else (list(loadings.columns) or [str(i + 1) for i in range(p)])
    dims = list(constructs) if constructs is not None else [""] * p
    lines = ["Items\t" + "\t".join(str(j + 1) for j in range(k)) + "\tDimension"]
    for i in range(p):
        cells = []
        for v in loadings.pattern[i]:
            cells.append("" if abs(v) < suppress else f"{v:.3f}")
        lines.append("\t".join([labels[i]] + cells + [dims[i]]))
    footer = [
        "Eigenvalue\t" + "\t".join(f"{v:.3f}" for v in loadings.eigenvalue_per_factor) + "\t",
        "% variance\t" + "\t".join(f"{v:.1f}" for v in loadings.variance_pct_per_factor) + "\t",
    ]
    return "\n".join(lines + footer) + "\n"
