"""Low-rank spline surfaces for spatially varying marginal parameters.

A surface is ``link^{-1}(intercept + sum_j b_j phi_j(x, y) + sum_k c_k psi_k(elev))``
where ``phi_j`` are thin-plate radial functions ``r^2 log r`` centred on
k-means knots of the planar site coordinates, and ``psi_k`` are a linear
elevation term plus truncated cubics at quantile-spaced elevation knots.
No smoothing penalty is applied.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import expit, logit

from .geometry import Chart, SiteSet

LINKS = ("identity", "log", "logit")


def link_inverse(name: str, eta):
    if name == "identity":
        return np.asarray(eta, dtype=float)
    if name == "log":
        return np.exp(eta)
    if name == "logit":
        return expit(eta)
    raise ValueError(f"unknown link {name!r}")


def link(name: str, mu):
    if name == "identity":
        return np.asarray(mu, dtype=float)
    if name == "log":
        return np.log(mu)
    if name == "logit":
        return logit(mu)
    raise ValueError(f"unknown link {name!r}")


@dataclass(frozen=True)
class BasisConfig:
    k_loc: int = 4
    k_elev: int = 4
    use_elevation: bool = True

    def __post_init__(self):
        if self.k_loc < 0 or self.k_elev < 0:
            raise ValueError("basis sizes must be non-negative")


def _tps(r):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, r * r * np.log(np.where(r > 0, r, 1.0)), 0.0)


@dataclass
class Basis:
    """Fixed basis layout; ``design(sites)`` gives the model matrix."""

    chart: Chart
    length_scale: float
    loc_knots: np.ndarray
    elev_center: float
    elev_scale: float
    elev_knots: np.ndarray
    n_elev: int

    @classmethod
    def build(cls, sites: SiteSet, config: BasisConfig = BasisConfig(), seed: int = 0) -> "Basis":
        chart = sites.chart()
        xy = sites.planar(chart)
        extent = float(np.max(np.ptp(xy, axis=0))) if len(sites) > 1 else 1.0
        length_scale = extent if extent > 0 else 1.0
        uniq = np.unique(np.round(xy, 9), axis=0)
        k_loc = min(config.k_loc, max(len(uniq) - 1, 0))
        if k_loc > 0:
            rng = np.random.default_rng(seed)
            # kmeans2 with an explicit generator is deterministic
            knots, _ = kmeans2(uniq / length_scale, k_loc, minit="++", seed=rng)
            knots = knots[np.lexsort(knots.T[::-1])]
        else:
            knots = np.zeros((0, 2))
        elev = sites.elev
        n_elev = 0
        ek = np.zeros(0)
        center, scale = 0.0, 1.0
        if config.use_elevation and config.k_elev > 0 and np.ptp(elev) > 0:
            center = float(np.mean(elev))
            scale = float(np.std(elev)) or 1.0
            es = (elev - center) / scale
            n_unique = np.unique(elev).size
            n_elev = min(config.k_elev, max(n_unique - 1, 1))
            if n_elev > 1:
                ek = np.quantile(es, np.linspace(0, 1, n_elev + 1)[1:-1])
        return cls(chart, length_scale, knots, center, scale, ek, n_elev)

    @property
    def size(self) -> int:
        return 1 + len(self.loc_knots) + self.n_elev

    def design(self, sites: SiteSet) -> np.ndarray:
        return self.design_from(sites.lon, sites.lat, sites.elev)

    def design_from(self, lon, lat, elev) -> np.ndarray:
        x, y = self.chart.forward(lon, lat)
        xy = np.column_stack([x, y]) / self.length_scale
        cols = [np.ones(xy.shape[0])]
        if len(self.loc_knots):
            r = np.sqrt(((xy[:, None, :] - self.loc_knots[None, :, :]) ** 2).sum(-1))
            cols.extend(_tps(r).T)
        if self.n_elev:
            es = (np.asarray(elev, dtype=float) - self.elev_center) / self.elev_scale
            cols.append(es)
            for k in self.elev_knots:
                cols.append(np.clip(es - k, 0, None) ** 3)
        return np.column_stack(cols)

    def reduced(self, X: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
        """Orthonormal column map V (K, r) spanning the identifiable directions of ``X``."""
        _, s, vt = np.linalg.svd(X, full_matrices=False)
        keep = s > rtol * s[0]
        return vt[keep].T


@dataclass
class SurfaceModel:
    basis: Basis
    coefficients: np.ndarray
    link: str = "identity"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        self.coefficients = np.asarray(self.coefficients, dtype=float)

    def linear_predictor(self, sites: SiteSet) -> np.ndarray:
        return self.basis.design(sites) @ self.coefficients

    def __call__(self, sites: SiteSet) -> np.ndarray:
        return link_inverse(self.link, self.linear_predictor(sites))

    def at(self, lon, lat, elev) -> np.ndarray:
        X = self.basis.design_from(np.atleast_1d(lon), np.atleast_1d(lat), np.atleast_1d(elev))
        return link_inverse(self.link, X @ self.coefficients)
