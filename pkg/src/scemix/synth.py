"""Synthetic ground-truth rainfall for testing the pipeline.

Each class is a Gaussian-copula process: a latent Gaussian field with Matérn
correlation in great-circle distance is mapped to rainfall with a point mass
at zero and GPD wet amounts, ``P(Y > y) = (1 - p_dry) * (1 + xi y / scale)^(-1/xi)``.
The tail above any threshold is then exactly GPD with shape ``xi``, which is
the marginal model the pipeline fits. Fields are independent in time and each
is convective with probability ``p_c``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky
from scipy.special import ndtr

from .classification import CONVECTIVE, NON_CONVECTIVE
from .dependence.functions import matern
from .geometry import SiteSet, haversine
from .marginals import gpd_isf
from .rng import stream


@dataclass(frozen=True)
class SynthProcess:
    p_dry: float = 0.6
    scale: float = 1.0
    xi: float = 0.1
    range_km: float = 20.0
    smoothness: float = 1.0
    scale_gradient: float = 0.0

    def __post_init__(self):
        if not 0 <= self.p_dry < 1:
            raise ValueError("p_dry must lie in [0, 1)")
        if not (self.scale > 0 and self.range_km > 0 and self.smoothness > 0):
            raise ValueError("scale, range and smoothness must be positive")

    def site_scale(self, sites: SiteSet) -> np.ndarray:
        """GPD scale per site, varying linearly west to east by ``scale_gradient``."""
        x = sites.planar()[:, 0]
        span = np.ptp(x)
        rel = (x - x.min()) / span - 0.5 if span > 0 else np.zeros_like(x)
        return self.scale * (1.0 + self.scale_gradient * rel)

    def sf(self, sites: SiteSet, y) -> np.ndarray:
        """True survival function ``P(Y(s) > y)`` for ``y`` of shape (..., d)."""
        y = np.asarray(y, dtype=float)
        sc = self.site_scale(sites)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.xi == 0:
                tail = np.exp(-y / sc)
            else:
                tail = np.power(np.maximum(1 + self.xi * y / sc, 0.0), -1 / self.xi)
        return np.where(y < 0, 1.0, (1 - self.p_dry) * tail)

    def correlation(self, sites: SiteSet) -> np.ndarray:
        h = haversine(sites.lon[:, None], sites.lat[:, None], sites.lon[None, :], sites.lat[None, :])
        return matern(h, self.range_km, self.smoothness)


def _factor(R: np.ndarray) -> np.ndarray:
    jitter = 0.0
    for _ in range(6):
        try:
            return cholesky(R + jitter * np.eye(R.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0 else jitter * 10
    raise np.linalg.LinAlgError("correlation matrix is not positive definite")


def simulate_process(sites: SiteSet, proc: SynthProcess, n: int, seed: int = 0) -> np.ndarray:
    """``n`` independent fields (n, d) in mm/hr."""
    L = _factor(proc.correlation(sites))
    g = stream(seed, "synth-field")
    w = g.standard_normal((n, len(sites))) @ L.T
    s = ndtr(-w)
    wet = s < 1 - proc.p_dry
    sc = np.broadcast_to(proc.site_scale(sites), w.shape)
    out = np.zeros_like(w)
    out[wet] = gpd_isf(s[wet] / (1 - proc.p_dry), sc[wet], proc.xi)
    return out


def simulate_mixture(sites: SiteSet, conv: SynthProcess, nonconv: SynthProcess, p_c: float, n: int,
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Fields and their true labels; each field is convective with probability ``p_c``."""
    if not 0 <= p_c <= 1:
        raise ValueError("p_c must lie in [0, 1]")
    is_c = stream(seed, "synth-labels").random(n) < p_c
    values = np.empty((n, len(sites)))
    n_c = int(is_c.sum())
    values[is_c] = simulate_process(sites, conv, n_c, stream(seed, "synth-C").integers(2 ** 63))
    values[~is_c] = simulate_process(sites, nonconv, n - n_c, stream(seed, "synth-N").integers(2 ** 63))
    labels = np.where(is_c, CONVECTIVE, NON_CONVECTIVE).astype("<U1")
    return values, labels


def nested_regions(sites: SiteSet, sizes) -> dict:
    """Nested square-ish regions of roughly ``sizes`` sites about the domain centre.

    Sites are ranked by Chebyshev distance (ties by Euclidean) from the centroid
    in planar coordinates; region ``k`` holds the first ``sizes[k]`` sites.
    """
    xy = sites.planar()
    xy = xy - xy.mean(axis=0)
    order = np.lexsort((np.hypot(xy[:, 0], xy[:, 1]), np.abs(xy).max(axis=1)))
    sizes = sorted(int(s) for s in sizes)
    if sizes[0] < 1 or sizes[-1] > len(sites):
        raise ValueError("region sizes must lie in [1, number of sites]")
    return {f"A{k + 1}": np.sort(order[:s]) for k, s in enumerate(sizes)}
