"""
Synthetic annotator populations from per-group factor models.

Seeds: a model carries one master seed. The generator for group ``g`` in
replication ``r`` is ``numpy.random.default_rng(SeedSequence(seed,
spawn_key=(r, g)))``, so every (replication, group) stream is independent
of how many others are drawn and of the order in which they are drawn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.stats import norm

from .instrument import Instrument, ResponseDataset


class PopulationModelError(ValueError):
    """Population parameters do not define a valid distribution."""


def _pd(mat: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(mat)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass(frozen=True)
class GroupPopulation:
    n: int
    loadings: np.ndarray
    latent_covariance: np.ndarray
    residual_variances: np.ndarray
    intercepts: np.ndarray
    latent_means: np.ndarray
    residual_covariances: tuple[tuple[int, int, float], ...] = ()

    @property
    def theta(self) -> np.ndarray:
        th = np.diag(np.asarray(self.residual_variances, dtype=float))
        for i, j, v in self.residual_covariances:
            th[i, j] = th[j, i] = v
        return th

    def moments(self):
        lam = np.asarray(self.loadings, dtype=float)
        sigma = lam @ np.asarray(self.latent_covariance) @ lam.T + self.theta
        mu = np.asarray(self.intercepts, dtype=float) + lam @ np.asarray(self.latent_means, dtype=float)
        return sigma, mu


@dataclass(frozen=True)
class PopulationModel:
    items: tuple[str, ...]
    factors: tuple[str, ...]
    groups: tuple[GroupPopulation, ...]
    group_labels: tuple[str, ...] = ()
    group_column: str = "group"
    seed: int = 0
    scale_points: int | None = None

    def __post_init__(self):
        p, k = len(self.items), len(self.factors)
        if not self.groups:
            raise PopulationModelError("population needs at least one group")
        if self.group_labels and len(self.group_labels) != len(self.groups):
            raise PopulationModelError("one label per group required")
        for g, gp in enumerate(self.groups):
            if np.shape(gp.loadings) != (p, k):
                raise PopulationModelError(f"group {g}: loadings must be {p}x{k}")
            if np.shape(gp.latent_covariance) != (k, k) or (k and not _pd(np.asarray(gp.latent_covariance))):
                raise PopulationModelError(f"group {g}: latent covariance must be a positive definite {k}x{k} matrix")
            if np.shape(gp.residual_variances) != (p,) or np.any(np.asarray(gp.residual_variances) <= 0):
                raise PopulationModelError(f"group {g}: residual variances must be {p} positive values")
            if np.shape(gp.intercepts) != (p,) or np.shape(gp.latent_means) != (k,):
                raise PopulationModelError(f"group {g}: intercept/latent-mean shapes")
            if not _pd(gp.theta):
                raise PopulationModelError(f"group {g}: residual covariance matrix not positive definite")
            if not _pd(gp.moments()[0]):
                raise PopulationModelError(f"group {g}: implied covariance not positive definite")
            if gp.n < 2:
                raise PopulationModelError(f"group {g}: need at least 2 respondents")

    @property
    def labels(self) -> tuple[str, ...]:
        return self.group_labels or tuple(f"g{g + 1}" for g in range(len(self.groups)))

    def with_sizes(self, *ns: int) -> "PopulationModel":
        if len(ns) == 1:
            ns = ns * len(self.groups)
        return replace(self, groups=tuple(replace(gp, n=int(n)) for gp, n in zip(self.groups, ns)))

    def with_seed(self, seed: int) -> "PopulationModel":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "items": list(self.items),
            "factors": list(self.factors),
            "group_labels": list(self.labels),
            "group_column": self.group_column,
            "seed": self.seed,
            "scale_points": self.scale_points,
            "groups": [
                {
                    "n": gp.n,
                    "loadings": np.asarray(gp.loadings).tolist(),
                    "latent_covariance": np.asarray(gp.latent_covariance).tolist(),
                    "residual_variances": np.asarray(gp.residual_variances).tolist(),
                    "intercepts": np.asarray(gp.intercepts).tolist(),
                    "latent_means": np.asarray(gp.latent_means).tolist(),
                    "residual_covariances": [list(t) for t in gp.residual_covariances],
                }
                for gp in self.groups
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PopulationModel":
        groups = []
        for g in doc["groups"]:
            groups.append(
                GroupPopulation(
                    n=int(g["n"]),
                    loadings=np.asarray(g["loadings"], dtype=float),
                    latent_covariance=np.asarray(g["latent_covariance"], dtype=float),
                    residual_variances=np.asarray(g["residual_variances"], dtype=float),
                    intercepts=np.asarray(g["intercepts"], dtype=float),
                    latent_means=np.asarray(g["latent_means"], dtype=float),
                    residual_covariances=tuple((int(i), int(j), float(v)) for i, j, v in g.get("residual_covariances", [])),
                )
            )
        return cls(
            items=tuple(doc["items"]),
            factors=tuple(doc["factors"]),
            groups=tuple(groups),
            group_labels=tuple(doc.get("group_labels", ())),
            group_column=doc.get("group_column", "group"),
            seed=int(doc.get("seed", 0)),
            scale_points=doc.get("scale_points"),
        )


def load_population(path) -> PopulationModel:
    with open(path, encoding="utf-8") as fh:
        return PopulationModel.from_dict(json.load(fh))


def population_moments(model: PopulationModel, group: int = 0):
    """Exact ``(Sigma, mu)`` of one group."""
    sigma, mu = model.groups[group].moments()
    if not _pd(sigma):
        raise PopulationModelError(f"group {group}: implied covariance not positive definite")
    return sigma, mu


def group_rng(seed: int, replication: int, group: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication, group)))


def _discretize(y: np.ndarray, sigma: np.ndarray, mu: np.ndarray, points: int) -> np.ndarray:
    cuts = norm.ppf(np.arange(1, points) / points)
    z = (y - mu) / np.sqrt(np.diag(sigma))
    return 1.0 + np.searchsorted(cuts, z.ravel()).reshape(z.shape).astype(float)


def sample_arrays(model: PopulationModel, replication: int = 0) -> list[np.ndarray]:
    """One ``n_g x p`` response matrix per group."""
    out = []
    for g, gp in enumerate(model.groups):
        rng = group_rng(model.seed, replication, g)
        lam = np.asarray(gp.loadings, dtype=float)
        p, k = lam.shape
        if k:
            chol_psi = np.linalg.cholesky(np.asarray(gp.latent_covariance, dtype=float))
            eta = np.asarray(gp.latent_means) + rng.standard_normal((gp.n, k)) @ chol_psi.T
        else:
            eta = np.zeros((gp.n, 0))
        chol_th = np.linalg.cholesky(gp.theta)
        eps = rng.standard_normal((gp.n, p)) @ chol_th.T
        y = np.asarray(gp.intercepts) + eta @ lam.T + eps
        if model.scale_points:
            sigma, mu = gp.moments()
            y = _discretize(y, sigma, mu, int(model.scale_points))
        out.append(y)
    return out


def sample(model: PopulationModel, replication: int = 0, instruments: tuple[Instrument, ...] = ()) -> ResponseDataset:
    """Draw a dataset; rows of group 1 come first, then group 2, and so on."""
    arrays = sample_arrays(model, replication)
    frames = []
    for label, y in zip(model.labels, arrays):
        frame = pd.DataFrame(y, columns=list(model.items))
        if len(model.groups) > 1:
            frame[model.group_column] = label
        frames.append(frame)
    frame = pd.concat(frames, ignore_index=True)
    return ResponseDataset(frame=frame, instruments=tuple(instruments))


PERTURB_KINDS = ("loadings", "intercepts", "residuals")


def perturb(model: PopulationModel, group: int, kind: str, amount: float) -> PopulationModel:
    """Change one parameter block of one group.

    ``loadings`` and ``residuals`` are multiplied by ``amount``;
    ``intercepts`` are shifted by ``amount``.
    """
    if kind not in PERTURB_KINDS:
        raise ValueError(f"kind must be one of {PERTURB_KINDS}")
    gp = model.groups[group]
    if kind == "loadings":
        new = replace(gp, loadings=np.asarray(gp.loadings) * amount)
    elif kind == "intercepts":
        new = replace(gp, intercepts=np.asarray(gp.intercepts) + amount)
    else:
        new = replace(
            gp,
            residual_variances=np.asarray(gp.residual_variances) * amount,
            residual_covariances=tuple((i, j, v * amount) for i, j, v in gp.residual_covariances),
        )
    groups = list(model.groups)
    groups[group] = new
    return replace(model, groups=tuple(groups))


def standardized_group(loadings, factor_corr, intercept: float = 0.0, n: int = 100) -> GroupPopulation:
    """Group whose items have unit variance: residual = 1 - communality."""
    lam = np.asarray(loadings, dtype=float)
    phi = np.asarray(factor_corr, dtype=float)
    communality = np.einsum("ij,jk,ik->i", lam, phi, lam)
    if np.any(communality >= 1):
        raise PopulationModelError("communalities must be below 1")
    return GroupPopulation(
        n=n,
        loadings=lam,
        latent_covariance=phi,
        residual_variances=1.0 - communality,
        intercepts=np.full(lam.shape[0], float(intercept)),
        latent_means=np.zeros(lam.shape[1]),
    )


FIVE_FACTOR_ITEMS = ("i1", "i2", "i4", "i27", "i28", "i30", "i6", "i8", "i22", "i23", "i36", "i37", "i39")
FIVE_FACTORS = ("Violence", "Fear", "Impact", "Moral", "Groundless")
_FIVE_LOADINGS = (0.80, 0.75, 0.70, 0.70, 0.65, 0.75, 0.70, 0.60, 0.75, 0.70, 0.65, 0.80, 0.70)
_FIVE_MEMBERSHIP = (0, 0, 0, 1, 1, 1, 2, 2, 3, 3, 4, 4, 4)
_FIVE_PHI = np.array(
    [
        [1.0, 0.40, 0.50, 0.45, 0.30],
        [0.40, 1.0, 0.35, 0.40, 0.25],
        [0.50, 0.35, 1.0, 0.55, 0.35],
        [0.45, 0.40, 0.55, 1.0, 0.30],
        [0.30, 0.25, 0.35, 0.30, 1.0],
    ]
)


def five_factor_population(n_per_group: int = 170, groups: int = 1, seed: int = 0, intercept: float = 3.0) -> PopulationModel:
    """The bundled 13-item, five-factor measurement model with unit item variances."""
    lam = np.zeros((13, 5))
    for i, (f, v) in enumerate(zip(_FIVE_MEMBERSHIP, _FIVE_LOADINGS)):
        lam[i, f] = v
    gp = standardized_group(lam, _FIVE_PHI, intercept=intercept, n=n_per_group)
    return PopulationModel(
        items=FIVE_FACTOR_ITEMS,
        factors=FIVE_FACTORS,
        groups=(gp,) * groups,
        group_labels=tuple(f"g{g + 1}" for g in range(groups)),
        seed=seed,
    )


def annotator_population(seed: int = 0, sizes=(143, 17, 10)) -> PopulationModel:
    """39 hate-speech items on their 9 constructs plus the BFI-10, 5-point Likert.

    Groups are age bands (column ``age``); the default sizes put 143 of 170
    respondents in the youngest band. Reverse-keyed BFI items load
    negatively on their trait.
    """
    from .instrument import bfi10_instrument, hate_speech_instrument

    hs = hate_speech_instrument()
    bfi = bfi10_instrument()
    constructs = hs.constructs
    traits = bfi.constructs
    factors = tuple(constructs) + tuple(traits)
    items = tuple(hs.columns) + tuple(bfi.columns)
    k_hs = len(constructs)
    lam = np.zeros((len(items), len(factors)))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
    for i, it in enumerate(hs.items):
        lam[i, constructs.index(it.construct)] = rng.uniform(0.55, 0.85)
    for j, it in enumerate(bfi.items):
        sign = -1.0 if it.reverse_keyed else 1.0
        lam[len(hs.items) + j, k_hs + traits.index(it.construct)] = sign * rng.uniform(0.6, 0.8)
    phi = np.eye(len(factors))
    phi[:k_hs, :k_hs] = 0.5 + 0.5 * np.eye(k_hs)
    groups = []
    labels = ("18-33", "34-49", "50-65")[: len(sizes)]
    for g, n in enumerate(sizes):
        gp = standardized_group(lam, phi, intercept=0.0, n=n)
        if g > 0:
            gp = replace(gp, residual_variances=gp.residual_variances * (1.0 + 0.25 * g))
        groups.append(gp)
    return PopulationModel(
        items=items,
        factors=factors,
        groups=tuple(groups),
        group_labels=labels,
        group_column="age",
        seed=seed,
        scale_points=5,
    )


BUILTIN_POPULATIONS = {
    "five-factor": five_factor_population,
    "annotators": annotator_population,
}
