"""
Normal-theory maximum-likelihood estimation of multigroup mean and
covariance structures.

Per group the model is ``Sigma = Lambda Psi Lambda' + Theta`` and
``mu = nu + Lambda alpha``. The discrepancy minimized is

    F = sum_g (n_g / N) * [ln|Sigma_g| + tr(S_g Sigma_g^-1) - ln|S_g| - p
                           + (xbar_g - mu_g)' Sigma_g^-1 (xbar_g - mu_g)]

and the test statistic is ``N * F_min``. Residual variances are optimized
on the log scale so they stay positive.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..instrument import GroupAssignment, ResponseDataset
from .model import ModelSpec
from .optim import bfgs
from .table import ParameterTable, build_parameter_table

LIKELIHOODS = ("normal", "wishart")


class SampleCovarianceError(ValueError):
    """Sample covariance not positive definite."""


class SingularityError(ValueError):
    """Implied covariance singular or not positive definite."""


@dataclass(frozen=True)
class SampleStats:
    """Per-group sufficient statistics.

    ``covs`` are the covariances the discrepancy is evaluated against
    (divisor ``n`` under the normal likelihood, ``n - 1`` under Wishart);
    ``ml_covs`` always use divisor ``n`` and feed the log-likelihood.
    """

    columns: tuple[str, ...]
    means: tuple[np.ndarray, ...]
    covs: tuple[np.ndarray, ...]
    ml_covs: tuple[np.ndarray, ...]
    ns: tuple[int, ...]
    likelihood: str = "normal"
    group_labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(f"likelihood must be one of {LIKELIHOODS}")
        for g, cov in enumerate(self.covs):
            ev = np.linalg.eigvalsh(cov)
            if not ev[0] > 1e-12 * max(ev[-1], 0.0):
                raise SampleCovarianceError(f"sample covariance of group {g} is not positive definite")

    @property
    def n_groups(self) -> int:
        return len(self.ns)

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def n_total(self) -> int:
        return int(sum(self.ns))

    @property
    def multipliers(self) -> np.ndarray:
        ns = np.asarray(self.ns, dtype=float)
        return ns - 1.0 if self.likelihood == "wishart" else ns

    @property
    def weights(self) -> np.ndarray:
        m = self.multipliers
        return m / m.sum()

    @property
    def multiplier(self) -> float:
        return float(self.multipliers.sum())

    def subset(self, columns: Sequence[str]) -> "SampleStats":
        idx = [self.columns.index(c) for c in columns]
        sel = np.ix_(idx, idx)
        return SampleStats(
            columns=tuple(columns),
            means=tuple(m[idx] for m in self.means),
            covs=tuple(c[sel] for c in self.covs),
            ml_covs=tuple(c[sel] for c in self.ml_covs),
            ns=self.ns,
            likelihood=self.likelihood,
            group_labels=self.group_labels,
        )

    def scaled(self, c: float) -> "SampleStats":
        """Statistics of the data multiplied by ``c``."""
        return SampleStats(
            columns=self.columns,
            means=tuple(m * c for m in self.means),
            covs=tuple(s * c * c for s in self.covs),
            ml_covs=tuple(s * c * c for s in self.ml_covs),
            ns=self.ns,
            likelihood=self.likelihood,
            group_labels=self.group_labels,
        )

    @classmethod
    def from_moments(cls, covs, means, ns, columns, ddof: int = 1, likelihood: str = "normal", group_labels=()):
        """Build from per-group covariance matrices computed with divisor ``n - ddof``."""
        covs = [np.asarray(c, dtype=float) for c in covs]
        means = [np.asarray(m, dtype=float) for m in means]
        ns = [int(n) for n in ns]
        ml = [c * (n - ddof) / n for c, n in zip(covs, ns)]
        if likelihood == "wishart":
            fitc = [c * n / (n - 1) for c, n in zip(ml, ns)]
        else:
            fitc = ml
        return cls(tuple(columns), tuple(means), tuple(fitc), tuple(ml), tuple(ns), likelihood, tuple(group_labels))

    @classmethod
    def from_arrays(cls, arrays, columns, likelihood: str = "normal", group_labels=()):
        covs, means, ns = [], [], []
        for x in arrays:
            x = np.asarray(x, dtype=float)
            if x.shape[0] < 2:
                raise ValueError("each group needs at least 2 respondents")
            means.append(x.mean(axis=0))
            covs.append(np.cov(x, rowvar=False, ddof=0).reshape(x.shape[1], x.shape[1]))
            ns.append(x.shape[0])
        return cls.from_moments(covs, means, ns, columns, ddof=0, likelihood=likelihood, group_labels=group_labels)

    @classmethod
    def from_dataset(cls, dataset: ResponseDataset, columns, grouping: GroupAssignment | None = None, likelihood="normal"):
        """Listwise-deleted statistics; groups follow ``grouping.levels`` order."""
        columns = list(columns)
        x, labels = dataset.complete(columns, grouping)
        if grouping is None:
            return cls.from_arrays([x], columns, likelihood)
        levels = [lev for lev in sorted(grouping.levels) if np.any(labels == lev)]
        arrays = [x[labels == lev] for lev in levels]
        return cls.from_arrays(arrays, columns, likelihood, group_labels=levels)


@dataclass(frozen=True)
class FitResult:
    converged: bool
    fmin: float
    chisq: float
    df: int
    loglik: float
    table: ParameterTable
    n_per_group: tuple[int, ...]
    n_free: int
    iterations: int = 0
    message: str = ""
    max_gradient: float = 0.0
    stats: SampleStats | None = field(default=None, repr=False, compare=False)

    @property
    def n_total(self) -> int:
        return int(sum(self.n_per_group))

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_free

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_free * math.log(self.n_total)

    @property
    def pvalue(self) -> float:
        from .chisq import chisq_sf

        return chisq_sf(self.chisq, self.df) if self.df > 0 else 1.0

    def estimate(self, kind: str, lhs: str, rhs: str = "", group: int = 0) -> float:
        return self.table.lookup(kind, lhs, rhs, group).value

    def loadings(self, group: int = 0) -> dict[tuple[str, str], float]:
        return {(r.lhs, r.rhs): r.value for r in self.table.group_rows(group) if r.kind == "loading"}

    def standardized_loadings(self, group: int = 0) -> dict[tuple[str, str], float]:
        sigma, _ = implied_moments(self.table, group)
        obs = self.table.observed
        psi = {r.lhs: r.value for r in self.table.group_rows(group) if r.kind == "latent_variance"}
        return {
            (f, it): lam * math.sqrt(psi[f]) / math.sqrt(sigma[obs.index(it), obs.index(it)])
            for (f, it), lam in self.loadings(group).items()
        }


class _GroupMap:
    """Index arrays scattering the free vector into one group's matrices."""

    def __init__(self, table: ParameterTable, group: int):
        obs = table.observed
        facs = list(table.spec.factors)
        p, k = len(obs), len(facs)
        oi = {c: i for i, c in enumerate(obs)}
        fi = {f: i for i, f in enumerate(facs)}
        self.p, self.k = p, k
        self.lam = np.zeros((p, k))
        self.psi = np.zeros((k, k))
        self.theta = np.zeros((p, p))
        self.nu = np.zeros(p)
        self.alpha = np.zeros(k)
        self.with_means = table.with_means
        blocks = {name: ([], [], []) for name in ("lam", "psi", "theta", "nu", "alpha")}

        def put(name, r, c, row):
            mat = getattr(self, name)
            if row.free < 0:
                if c is None:
                    mat[r] = row.value
                else:
                    mat[r, c] = row.value
            else:
                rr, cc, ii = blocks[name]
                rr.append(r)
                cc.append(0 if c is None else c)
                ii.append(row.free)

        for row in table.group_rows(group):
            if row.kind == "loading":
                put("lam", oi[row.rhs], fi[row.lhs], row)
            elif row.kind == "intercept":
                put("nu", oi[row.lhs], None, row)
            elif row.kind == "residual_variance":
                put("theta", oi[row.lhs], oi[row.lhs], row)
            elif row.kind == "residual_covariance":
                put("theta", oi[row.lhs], oi[row.rhs], row)
                put("theta", oi[row.rhs], oi[row.lhs], row)
            elif row.kind == "latent_variance":
                put("psi", fi[row.lhs], fi[row.lhs], row)
            elif row.kind == "latent_covariance":
                put("psi", fi[row.lhs], fi[row.rhs], row)
                put("psi", fi[row.rhs], fi[row.lhs], row)
            elif row.kind == "latent_mean":
                put("alpha", fi[row.lhs], None, row)
        for name, (rr, cc, ii) in blocks.items():
            setattr(self, name + "_r", np.array(rr, dtype=int))
            setattr(self, name + "_c", np.array(cc, dtype=int))
            setattr(self, name + "_i", np.array(ii, dtype=int))
        self.index = np.concatenate([self.lam_i, self.psi_i, self.theta_i, self.nu_i, self.alpha_i])

    def matrices(self, nat: np.ndarray):
        lam = self.lam.copy()
        lam[self.lam_r, self.lam_c] = nat[self.lam_i]
        psi = self.psi.copy()
        psi[self.psi_r, self.psi_c] = nat[self.psi_i]
        theta = self.theta.copy()
        theta[self.theta_r, self.theta_c] = nat[self.theta_i]
        nu = self.nu.copy()
        nu[self.nu_r] = nat[self.nu_i]
        alpha = self.alpha.copy()
        alpha[self.alpha_r] = nat[self.alpha_i]
        return lam, psi, theta, nu, alpha

    def moments(self, nat: np.ndarray):
        lam, psi, theta, nu, alpha = self.matrices(nat)
        sigma = lam @ psi @ lam.T + theta
        mu = nu + lam @ alpha if self.with_means else None
        return sigma, mu


class Objective:
    """Multigroup discrepancy with analytic gradient over the free vector.

    The optimizer works on an internal vector ``x`` that equals the natural
    parameters except for residual variances, which enter as ``log``.
    """

    def __init__(self, table: ParameterTable, stats: SampleStats):
        if stats.n_groups != table.n_groups:
            raise ValueError(f"table has {table.n_groups} groups, data has {stats.n_groups}")
        missing = [c for c in table.observed if c not in stats.columns]
        if missing:
            raise KeyError(f"items not in data: {missing}")
        self.table = table
        self.stats = stats.subset(table.observed) if list(stats.columns) != table.observed else stats
        self.q = table.n_free
        self.maps = [_GroupMap(table, g) for g in range(table.n_groups)]
        logm = np.zeros(self.q, dtype=bool)
        for r in table.rows:
            if r.free >= 0 and r.kind == "residual_variance":
                logm[r.free] = True
        self.log_mask = logm
        self.p = len(table.observed)
        self.logdet_s = [np.linalg.slogdet(s)[1] for s in self.stats.covs]
        self.weights = self.stats.weights

    def natural(self, x: np.ndarray) -> np.ndarray:
        nat = np.array(x, dtype=float)
        with np.errstate(over="ignore"):
            nat[self.log_mask] = np.exp(nat[self.log_mask])
        return nat

    def internal(self, nat: np.ndarray) -> np.ndarray:
        x = np.array(nat, dtype=float)
        if np.any(x[self.log_mask] <= 0):
            raise ValueError("residual variances must be positive")
        x[self.log_mask] = np.log(x[self.log_mask])
        return x

    def group_values(self, x: np.ndarray) -> list[float]:
        nat = self.natural(x)
        out = []
        for g, gm in enumerate(self.maps):
            sigma, mu = gm.moments(nat)
            mean = self.stats.means[g]
            out.append(fml(self.stats.covs[g], mean, sigma, mean if mu is None else mu, logdet_s=self.logdet_s[g]))
        return out

    def __call__(self, x: np.ndarray):
        nat = self.natural(x)
        total = 0.0
        parts_i = []
        parts_v = []
        eye = np.eye(self.p)
        for g, gm in enumerate(self.maps):
            w = self.weights[g]
            lam, psi, theta, nu, alpha = gm.matrices(nat)
            sigma = lam @ psi @ lam.T + theta
            if not np.all(np.isfinite(sigma)):
                return math.inf, None
            try:
                chol = np.linalg.cholesky(sigma)
            except np.linalg.LinAlgError:
                return math.inf, None
            linv = np.linalg.solve(chol, eye)
            sinv = linv.T @ linv
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            s = self.stats.covs[g]
            f = logdet + np.sum(s * sinv) - self.logdet_s[g] - self.p
            if gm.with_means:
                d = self.stats.means[g] - (nu + lam @ alpha)
                sd = sinv @ d
                f += d @ sd
                w_mat = sinv - sinv @ (s + np.outer(d, d)) @ sinv
                v = -2.0 * sd
            else:
                w_mat = sinv - sinv @ s @ sinv
                v = None
            if not math.isfinite(f):
                return math.inf, None
            total += w * f
            g_lam = 2.0 * w_mat @ lam @ psi
            if v is not None:
                g_lam += np.outer(v, alpha)
            g_psi = lam.T @ w_mat @ lam
            vals = [
                g_lam[gm.lam_r, gm.lam_c],
                g_psi[gm.psi_r, gm.psi_c],
                w_mat[gm.theta_r, gm.theta_c],
            ]
            if v is not None:
                vals.append(v[gm.nu_r])
                vals.append((lam.T @ v)[gm.alpha_r])
            else:
                vals.append(np.zeros(gm.nu_i.size))
                vals.append(np.zeros(gm.alpha_i.size))
            parts_i.append(gm.index)
            parts_v.append(w * np.concatenate(vals))
        grad = np.bincount(np.concatenate(parts_i), weights=np.concatenate(parts_v), minlength=self.q)
        grad[self.log_mask] *= nat[self.log_mask]
        return float(total), grad

    def value(self, x: np.ndarray) -> float:
        return self(x)[0]

    def information(self, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
        """Expected second derivative of F at ``x`` (internal coordinates)."""
        nat = self.natural(x)
        info = np.zeros((self.q, self.q))
        for g, gm in enumerate(self.maps):
            sigma, mu = gm.moments(nat)
            try:
                chol = np.linalg.cholesky(sigma)
            except np.linalg.LinAlgError:
                return np.eye(self.q)
            linv = np.linalg.solve(chol, np.eye(self.p))
            d_sig = np.zeros((self.q, self.p, self.p))
            d_mu = np.zeros((self.q, self.p))
            for j in np.unique(gm.index):
                xp = x.copy()
                xm = x.copy()
                xp[j] += h
                xm[j] -= h
                sp, mp = gm.moments(self.natural(xp))
                sm, mm = gm.moments(self.natural(xm))
                d_sig[j] = (sp - sm) / (2 * h)
                if mp is not None:
                    d_mu[j] = (mp - mm) / (2 * h)
            b = np.einsum("ij,qjk,lk->qil", linv, d_sig, linv).reshape(self.q, -1)
            c = d_mu @ linv.T
            info += self.weights[g] * (b @ b.T + 2.0 * c @ c.T)
        return info


def fml(S, xbar, sigma, mu, p: int | None = None, logdet_s: float | None = None) -> float:
    """Normal-theory ML discrepancy between sample and implied moments.

    ``F = ln|Sigma| + tr(S Sigma^-1) - ln|S| - p + (xbar - mu)' Sigma^-1 (xbar - mu)``
    """
    S = np.asarray(S, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    p = S.shape[0] if p is None else p
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(sigma)
        raise SingularityError(f"implied covariance is not positive definite (condition {cond:.3g})") from None
    cond = np.linalg.cond(sigma)
    if cond > 1e14:
        raise SingularityError(f"implied covariance is singular (condition {cond:.3g})")
    sinv = np.linalg.inv(sigma)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    if logdet_s is None:
        sign, logdet_s = np.linalg.slogdet(S)
        if sign <= 0:
            raise SampleCovarianceError("sample covariance is not positive definite")
    f = logdet + np.sum(S * sinv) - logdet_s - p
    if mu is not None and xbar is not None:
        d = np.asarray(xbar, dtype=float) - np.asarray(mu, dtype=float)
        f += d @ sinv @ d
    return float(f)


def implied_moments(table: ParameterTable, group: int = 0, check_pd: bool = False):
    """Implied covariance and mean vector (``None`` without a mean structure)."""
    gm = _GroupMap(table, group)
    nat = np.asarray(table.free_values(), dtype=float)
    sigma, mu = gm.moments(nat)
    if check_pd:
        try:
            np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise SingularityError(f"implied covariance of group {group} is not positive definite") from None
    return sigma, mu


def loglik(table: ParameterTable, stats: SampleStats) -> float:
    """Normal log-likelihood of the data at the table's values."""
    stats = stats.subset(table.observed) if list(stats.columns) != table.observed else stats
    p = len(table.observed)
    total = 0.0
    for g in range(table.n_groups):
        sigma, mu = implied_moments(table, g)
        s = stats.ml_covs[g]
        sign, logdet = np.linalg.slogdet(sigma)
        if sign <= 0:
            return -math.inf
        sinv = np.linalg.inv(sigma)
        q = logdet + np.sum(s * sinv)
        if mu is not None:
            d = stats.means[g] - mu
            q += d @ sinv @ d
        total += -0.5 * stats.ns[g] * (p * math.log(2 * math.pi) + q)
    return float(total)


def start_values(table: ParameterTable, stats: SampleStats, previous: ParameterTable | None = None) -> np.ndarray:
    """Natural-scale starting vector.

    Without ``previous``: loadings ``0.7 * sd``, residual variances half the
    item variance, intercepts the item means, latent covariances 0. With
    ``previous``: matching rows are copied, and parameters that are now
    tied across groups start at the (n-weighted) average of their previous
    per-group values; rows absent from ``previous`` start at 0 (loadings,
    covariances, means) or 1 (latent variances). Copied residual variances
    are floored at 0.1% of the item variance.
    """
    stats = stats.subset(table.observed) if list(stats.columns) != table.observed else stats
    obs = table.observed
    oi = {c: i for i, c in enumerate(obs)}
    prev = {}
    if previous is not None:
        prev = {(r.kind, r.group, r.lhs, r.rhs): r.value for r in previous.rows}
    sums = np.zeros(table.n_free)
    wts = np.zeros(table.n_free)
    for r in table.rows:
        if r.free < 0:
            continue
        g = r.group
        var = stats.covs[g][oi[r.rhs], oi[r.rhs]] if r.kind == "loading" else None
        key = (r.kind, g, r.lhs, r.rhs)
        if key in prev:
            v = prev[key]
            if r.kind == "residual_variance":
                # a Heywood case upstream can leave an underflowed zero
                v = max(v, 1e-3 * stats.covs[g][oi[r.lhs], oi[r.lhs]])
        elif previous is not None:
            v = 1.0 if r.kind == "latent_variance" else 0.0
            if r.kind == "intercept":
                v = stats.means[g][oi[r.lhs]]
            elif r.kind == "residual_variance":
                v = 0.5 * stats.covs[g][oi[r.lhs], oi[r.lhs]]
        elif r.kind == "loading":
            v = 0.7 * math.sqrt(var)
        elif r.kind == "intercept":
            v = stats.means[g][oi[r.lhs]]
        elif r.kind == "residual_variance":
            v = 0.5 * stats.covs[g][oi[r.lhs], oi[r.lhs]]
        elif r.kind == "latent_variance":
            v = 1.0
        else:
            v = 0.0
        sums[r.free] += stats.ns[g] * v
        wts[r.free] += stats.ns[g]
    return sums / wts


def fit(
    model: ModelSpec | ParameterTable,
    stats: SampleStats,
    level: str = "configural",
    with_means: bool | None = None,
    start: "FitResult | ParameterTable | None" = None,
    gtol: float = 1e-6,
    max_iter: int = 10_000,
) -> FitResult:
    """Fit a measurement model by maximum likelihood.

    Parameters
    ----------
    model : ModelSpec or ParameterTable
        A spec is expanded with :func:`build_parameter_table` using
        ``stats.n_groups``, ``level`` and ``with_means``.
    stats : SampleStats
        Group sufficient statistics.
    start : FitResult or ParameterTable, optional
        Warm start; see :func:`start_values`.

    Returns
    -------
    FitResult
        ``converged`` is False when the iteration cap or a line-search
        failure stopped the run; the best point found is still reported.
    """
    if isinstance(model, ModelSpec):
        table = build_parameter_table(model, stats.n_groups, level, with_means)
    else:
        table = model
    for g, n in enumerate(stats.ns):
        if n <= len(table.observed):
            warnings.warn(f"group {g} has n={n} <= p={len(table.observed)}")
    obj = Objective(table, stats)
    prev = start.table if isinstance(start, FitResult) else start
    x0 = obj.internal(start_values(table, obj.stats, prev))
    if not np.isfinite(obj.value(x0)):
        x0 = obj.internal(start_values(table, obj.stats, None))

    def h0(at):
        info = obj.information(at)
        info = info + 1e-8 * max(1.0, np.trace(info) / max(1, obj.q)) * np.eye(obj.q)
        try:
            return np.linalg.inv(info)
        except np.linalg.LinAlgError:
            return np.eye(obj.q)

    res = bfgs(obj, x0, h0=h0, gtol=gtol, max_iter=max_iter)
    nat = obj.natural(res.x)
    fitted = table.with_free_values(nat)
    fmin = max(res.fun, 0.0)
    return FitResult(
        converged=res.converged,
        fmin=fmin,
        chisq=obj.stats.multiplier * fmin,
        df=table.df,
        loglik=loglik(fitted, obj.stats),
        table=fitted,
        n_per_group=tuple(obj.stats.ns),
        n_free=table.n_free,
        iterations=res.iterations,
        message=res.message,
        max_gradient=float(np.max(np.abs(res.grad))) if res.grad is not None and res.grad.size else 0.0,
        stats=obj.stats,
    )


def independence_spec(observed) -> ModelSpec:
    return ModelSpec((), (), extra_observed=tuple(observed))


def baseline_fit(stats: SampleStats, with_means: bool | None = None) -> FitResult:
    """Independence model: zero covariances, free variances and means (closed form)."""
    spec = independence_spec(stats.columns)
    table = build_parameter_table(spec, stats.n_groups, "configural", with_means)
    rows = []
    oi = {c: i for i, c in enumerate(stats.columns)}
    for r in table.rows:
        g = r.group
        if r.kind == "residual_variance":
            rows.append(_with_value(r, float(stats.covs[g][oi[r.lhs], oi[r.lhs]])))
        elif r.kind == "intercept":
            rows.append(_with_value(r, float(stats.means[g][oi[r.lhs]])))
        else:
            rows.append(r)
    table = table.with_rows(rows)
    obj = Objective(table, stats)
    fmin = max(obj.value(obj.internal(np.asarray(table.free_values()))), 0.0)
    return FitResult(
        converged=True,
        fmin=fmin,
        chisq=stats.multiplier * fmin,
        df=table.df,
        loglik=loglik(table, stats),
        table=table,
        n_per_group=tuple(stats.ns),
        n_free=table.n_free,
        message="closed form",
        stats=stats,
    )


def _with_value(row, value):
    from dataclasses import replace

    return replace(row, value=value)
