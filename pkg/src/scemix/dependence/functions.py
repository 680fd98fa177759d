"""Parametric dependence functions of the spatial conditional extremes model.

All functions take distances ``h`` (km, anisotropic) and return arrays of the
same shape.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.special import gammaincc, gammainccinv, gammaincinv, gammaln, kv, ndtr, ndtri

from ..geometry import AnisotropyParams

SQRT2 = math.sqrt(2.0)
VARIANTS = ("C", "N")


@dataclass(frozen=True)
class DependenceParams:
    """Every parameter of the dependence model.

    ``beta_variant`` / ``sigma_variant`` select the convective (``"C"``,
    stretched-exponential decay) or non-convective (``"N"``, hump-shaped beta
    and free sigma plateau) forms. With ``sigma_variant == "C"`` the sigma
    plateau ``ks3`` is pinned to sqrt(2).
    """

    ka1: float = 10.0
    ka2: float = 1.0
    Delta: float = 0.0
    kb1: float = 10.0
    kb2: float = 1.0
    kb3: float = 1.0
    km1: float = 0.0
    km2: float = 1.0
    km3: float = 10.0
    ks1: float = 10.0
    ks2: float = 1.0
    ks3: float = SQRT2
    kd1: float = 0.0
    kd2: float = 1.0
    kd3: float = 10.0
    kd4: float = 0.0
    kr1: float = 10.0
    kr2: float = 0.5
    theta: float = 0.0
    L: float = 1.0
    beta_variant: str = "C"
    sigma_variant: str = "C"

    def __post_init__(self):
        if self.beta_variant not in VARIANTS or self.sigma_variant not in VARIANTS:
            raise ValueError("variants must be 'C' or 'N'")
        if self.sigma_variant == "C" and self.ks3 != SQRT2:
            object.__setattr__(self, "ks3", SQRT2)
        pos = ["ka1", "ka2", "kb2", "km2", "km3", "ks1", "ks2", "ks3", "kd2", "kd3", "kr1", "kr2", "L"]
        for name in pos:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.Delta < 0 or self.kd1 < 0:
            raise ValueError("Delta and kd1 must be non-negative")
        # kd4 = 1 is admitted as a fixed value (the convective convention)
        if not self.kd4 <= 1:
            raise ValueError("kd4 must not exceed 1")
        if self.beta_variant == "C":
            if not (self.kb1 > 0 and 0 <= self.kb3 <= 1):
                raise ValueError("beta variant C needs kb1 > 0 and kb3 in [0, 1]")
        else:
            if not (0 <= self.kb1 <= 1 and self.kb3 > 0):
                raise ValueError("beta variant N needs kb1 in [0, 1] and kb3 > 0")
        if not -math.pi / 2 - 1e-12 <= self.theta <= 1e-12:
            raise ValueError("theta must lie in [-pi/2, 0]")

    @property
    def aniso(self) -> AnisotropyParams:
        return AnisotropyParams(min(max(self.theta, -math.pi / 2), 0.0), self.L)

    def replace(self, **kw) -> "DependenceParams":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def numeric_names(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.type in ("float", float)]

    # -- functions -------------------------------------------------------
    def alpha(self, h):
        return eval_alpha(h, self)

    def beta(self, h):
        return eval_beta(h, self)

    def mu(self, h):
        return eval_mu(h, self)

    def sigma(self, h):
        return eval_sigma(h, self)

    def delta(self, h):
        return eval_delta(h, self)

    def rho(self, h):
        return eval_rho(h, self)


def eval_alpha(h, p: DependenceParams):
    h = np.asarray(h, dtype=float)
    beyond = np.maximum(h - p.Delta, 0.0)
    return np.where(h <= p.Delta, 1.0, np.exp(-np.power(beyond / p.ka1, p.ka2)))


def beta_n_peak(kb2: float, kb3: float) -> float:
    """max over h of h^kb2 exp(-h / kb3), attained at h = kb2 * kb3."""
    return math.exp(kb2 * math.log(kb2 * kb3) - kb2)


def eval_beta(h, p: DependenceParams):
    h = np.asarray(h, dtype=float)
    if p.beta_variant == "C":
        return p.kb3 * np.exp(-np.power(h / p.kb1, p.kb2))
    with np.errstate(divide="ignore"):
        logv = p.kb2 * np.log(h) - h / p.kb3 - (p.kb2 * math.log(p.kb2 * p.kb3) - p.kb2)
    return p.kb1 * np.exp(logv)


def eval_mu(h, p: DependenceParams):
    h = np.asarray(h, dtype=float)
    return p.km1 * np.power(h, p.km2) * np.exp(-h / p.km3)


def eval_sigma(h, p: DependenceParams):
    h = np.asarray(h, dtype=float)
    return p.ks3 * -np.expm1(-np.power(h / p.ks1, p.ks2))


def eval_delta(h, p: DependenceParams):
    h = np.asarray(h, dtype=float)
    return np.maximum(1.0, 1.0 + (p.kd1 * np.power(h, p.kd2) - p.kd4) * np.exp(-h / p.kd3))


def matern(h, range_: float, smoothness: float):
    """Matern correlation with argument ``2 h sqrt(nu) / range``."""
    h = np.asarray(h, dtype=float)
    nu = smoothness
    x = 2.0 * h * math.sqrt(nu) / range_
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logc = (1 - nu) * math.log(2.0) - gammaln(nu) + nu * np.log(x)
        val = np.exp(logc) * kv(nu, x)
    val = np.where(x > 0, val, 1.0)
    # kv underflows to 0 for large x; the correlation is 0 there anyway
    return np.where(np.isfinite(val), np.clip(val, 0.0, 1.0), 0.0)


def eval_rho(h, p: DependenceParams):
    return matern(h, p.kr1, p.kr2)


# ---------------------------------------------------------------------------
# delta-Laplace

def _dl_k(delta):
    delta = np.asarray(delta, dtype=float)
    return np.exp(0.5 * (gammaln(1.0 / delta) - gammaln(3.0 / delta)))


def dl_logpdf(z, mu, sigma, delta):
    z, mu, sigma, delta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, mu, sigma, delta)))
    k = _dl_k(delta)
    ks = k * sigma
    return np.log(delta) - math.log(2.0) - np.log(ks) - gammaln(1.0 / delta) - np.power(np.abs(z - mu) / ks, delta)


def dl_pdf(z, mu, sigma, delta):
    return np.exp(dl_logpdf(z, mu, sigma, delta))


def _dl_tail(z, mu, sigma, delta):
    """0.5 * P(|Z - mu| > |z - mu|), i.e. the smaller of cdf and sf."""
    z, mu, sigma, delta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, mu, sigma, delta)))
    y = np.abs(z - mu) / (_dl_k(delta) * sigma)
    return 0.5 * gammaincc(1.0 / delta, np.power(y, delta)), z < mu


def dl_cdf(z, mu, sigma, delta):
    t, below = _dl_tail(z, mu, sigma, delta)
    return np.where(below, t, 1.0 - t)


def dl_sf(z, mu, sigma, delta):
    t, below = _dl_tail(z, mu, sigma, delta)
    return np.where(below, 1.0 - t, t)


def dl_quantile(prob, mu, sigma, delta):
    prob, mu, sigma, delta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (prob, mu, sigma, delta)))
    low = prob < 0.5
    tail = np.where(low, 2.0 * prob, 2.0 * (1.0 - prob))
    ks = _dl_k(delta) * sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(tail > 0.5,
                     gammaincinv(1.0 / delta, np.clip(1.0 - tail, 0.0, 1.0)),
                     gammainccinv(1.0 / delta, np.clip(tail, 0.0, 1.0)))
        y = np.power(g, 1.0 / delta)
    return np.where(low, mu - ks * y, mu + ks * y)


def dl_to_normal(z, mu, sigma, delta):
    """Gaussian score Phi^{-1}(F_DL(z)), evaluated in whichever tail is smaller."""
    t, below = _dl_tail(z, mu, sigma, delta)
    s = ndtri(np.clip(t, 1e-300, 0.5))
    return np.where(below, s, -s)


def dl_from_normal(w, mu, sigma, delta):
    """Inverse of ``dl_to_normal``: F_DL^{-1}(Phi(w)) computed tail-accurately."""
    w = np.asarray(w, dtype=float)
    tail = ndtr(-np.abs(w))
    mu, sigma, delta = (np.asarray(a, dtype=float) for a in (mu, sigma, delta))
    ks = _dl_k(delta) * sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(tail > 0.25,
                     gammaincinv(1.0 / delta, np.clip(1.0 - 2.0 * tail, 0.0, 1.0)),
                     gammainccinv(1.0 / delta, 2.0 * tail))
    y = np.power(g, 1.0 / delta)
    return np.where(w < 0, mu - ks * y, mu + ks * y)
