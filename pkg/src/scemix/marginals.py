"""Three-part marginal model and Laplace standardisation.

At each site, a point mass ``p(s)`` at zero, the rescaled empirical
distribution of positive values up to the ``(1 - lambda)`` quantile
``q(s)``, and a generalised Pareto tail above it with site-varying scale
``upsilon(s)`` and common shape ``xi``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit

from .classification import FieldSeries
from .errors import (DegenerateData, InsufficientData, NegativeValue, NoExceedances,
                     ProbabilityOutOfRange)
from .geometry import SiteSet
from .rng import as_generator
from .surfaces import Basis, BasisConfig, SurfaceModel

XI_EPS = 1e-7
PENALTY = 1e6
MAX_BULK_KNOTS = 1000


# ---------------------------------------------------------------------------
# standard Laplace

def laplace_cdf(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0)), 1.0 - 0.5 * np.exp(-np.maximum(x, 0)))


def laplace_sf(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 1.0 - 0.5 * np.exp(np.minimum(x, 0)), 0.5 * np.exp(-np.maximum(x, 0)))


def laplace_quantile(u):
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(u < 0.5, np.log(2 * np.minimum(u, 0.5)), -np.log(2 * (1 - np.maximum(u, 0.5))))


def laplace_isf(s):
    """Inverse survival function; accurate for tiny ``s``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(s <= 0.5, -np.log(2 * np.minimum(s, 0.5)), np.log(2 * (1 - np.maximum(s, 0.5))))


# ---------------------------------------------------------------------------
# generalised Pareto pieces

def gpd_sf(z, scale, xi):
    """Survival of GPD(scale, xi) at ``z >= 0``, zero beyond the endpoint."""
    z = np.asarray(z, dtype=float)
    t = z / scale
    if abs(xi) < XI_EPS:
        return np.exp(-t)
    a = 1.0 + xi * t
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a > 0, np.power(np.where(a > 0, a, 1.0), -1.0 / xi), 0.0)


def gpd_isf(s, scale, xi):
    s = np.asarray(s, dtype=float)
    if abs(xi) < XI_EPS:
        return -scale * np.log(s)
    return scale * (np.power(s, -xi) - 1.0) / xi


def gpd_loglik_and_score(eta, xi, z):
    """Per-observation GPD log-likelihood with log-scale ``eta``.

    Returns ``(ll, d_eta, d_xi, violation)`` where ``violation`` is the
    per-observation amount by which ``1 + xi z / scale > 0`` fails
    (zero where the support constraint holds).
    """
    eta = np.asarray(eta, dtype=float)
    z = np.asarray(z, dtype=float)
    scale = np.exp(eta)
    t = z / scale
    if abs(xi) < XI_EPS:
        ll = -eta - t
        return ll, -1.0 + t, 0.5 * t * t - t, np.zeros_like(t)
    w = xi * t
    a = 1.0 + w
    ok = a > 0
    a_safe = np.where(ok, a, 1.0)
    la = np.log(a_safe)
    ll = np.where(ok, -eta - (1.0 + 1.0 / xi) * la, 0.0)
    d_eta = np.where(ok, -1.0 + (1.0 + 1.0 / xi) * w / a_safe, 0.0)
    d_xi = np.where(ok, la / xi ** 2 - (1.0 + 1.0 / xi) * t / a_safe, 0.0)
    return ll, d_eta, d_xi, np.where(ok, 0.0, -a)


# ---------------------------------------------------------------------------
# empirical bulk

@dataclass
class BulkTable:
    """Piecewise-linear Hazen CDF of positive values at one site.

    ``y`` and ``F`` start at (0, 0) and are strictly increasing.
    """

    y: np.ndarray
    F: np.ndarray

    @classmethod
    def from_values(cls, positive: np.ndarray, max_knots: int = MAX_BULK_KNOTS) -> "BulkTable":
        positive = np.asarray(positive, dtype=float)
        positive = positive[positive > 0]
        if positive.size == 0:
            return cls(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        vals, counts = np.unique(positive, return_counts=True)
        m = positive.size
        cum = np.cumsum(counts)
        F = (cum - 0.5 * counts) / m
        if vals.size > max_knots:
            keep = np.unique(np.linspace(0, vals.size - 1, max_knots).round().astype(int))
            vals, F = vals[keep], F[keep]
        return cls(np.concatenate([[0.0], vals]), np.concatenate([[0.0], F]))

    def cdf_upto(self, y, q):
        """Bulk CDF rescaled so that it reaches 1 at ``q``."""
        yk, Fk = self._upto(q)
        return np.interp(y, yk, Fk) / Fk[-1]

    def quantile_upto(self, u, q):
        yk, Fk = self._upto(q)
        return np.interp(np.asarray(u) * Fk[-1], Fk, yk)

    def _upto(self, q):
        y, F = self.y, self.F
        if q > y[-1]:
            return np.append(y, q), np.append(F, 1.0)
        k = int(np.searchsorted(y, q, side="left"))
        Fq = float(np.interp(q, y, F))
        return np.append(y[:k], q), np.append(F[:k], Fq)


# ---------------------------------------------------------------------------
# model

@dataclass
class LaplaceField:
    x: np.ndarray
    censored: np.ndarray
    c: np.ndarray


@dataclass
class MarginalModel:
    lam: float
    p_surface: SurfaceModel
    q_surface: SurfaceModel
    upsilon_surface: SurfaceModel
    xi: float
    bulk: list
    sites: SiteSet

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if len(self.bulk) != len(self.sites):
            raise ValueError("one bulk table per site is required")
        self.p = self.p_surface(self.sites)
        self.q = self.q_surface(self.sites)
        self.upsilon = self.upsilon_surface(self.sites)
        if np.any(self.p < 0) or np.any(self.p + self.lam >= 1):
            raise DegenerateData("p(s) + lambda < 1 violated at a training site")
        if np.any(self.q <= 0):
            raise DegenerateData("threshold surface q(s) is not positive at every site")
        if np.any(self.upsilon <= 0):
            raise DegenerateData("GPD scale must be positive")

    @property
    def c(self) -> np.ndarray:
        """Laplace-scale censoring thresholds."""
        return laplace_quantile(self.p)

    # -- single site, vector of values -----------------------------------
    def cdf(self, site: int, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise NegativeValue("marginal cdf is defined for y >= 0")
        return 1.0 - self.sf(site, y)

    def sf(self, site: int, y):
        y = np.asarray(y, dtype=float)
        p, q, ups, lam = self.p[site], self.q[site], self.upsilon[site], self.lam
        bulk = self.bulk[site]
        out = np.empty(np.shape(y))
        zero = y <= 0
        tail = y > q
        mid = ~zero & ~tail
        out[zero] = 1.0 - p
        out[mid] = 1.0 - p - (1.0 - lam - p) * bulk.cdf_upto(y[mid], q)
        out[tail] = lam * gpd_sf(y[tail] - q, ups, self.xi)
        return out

    def quantile(self, site: int, u):
        u = np.asarray(u, dtype=float)
        return self.isf(site, 1.0 - u)

    def isf(self, site: int, s):
        """Generalised inverse in survival form; ``s = 1 - u``."""
        s = np.asarray(s, dtype=float)
        p, q, ups, lam = self.p[site], self.q[site], self.upsilon[site], self.lam
        out = np.zeros(np.shape(s))
        tail = s < lam
        mid = (s >= lam) & (s < 1.0 - p)
        out[tail] = q + gpd_isf(s[tail] / lam, ups, self.xi)
        frac = (1.0 - p - s[mid]) / (1.0 - lam - p)
        out[mid] = self.bulk[site].quantile_upto(frac, q)
        return out

    # -- whole fields ------------------------------------------------------
    def to_laplace(self, values) -> LaplaceField:
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        x = np.empty_like(values)
        for i in range(values.shape[1]):
            x[:, i] = laplace_isf(self.sf(i, values[:, i]))
        censored = values <= 0
        c = self.c
        x = np.where(censored, c[None, :], x)
        return LaplaceField(x, censored, c)

    def from_laplace(self, x, site_index=None) -> np.ndarray:
        """Map Laplace-scale values back to mm/hr; ``x <= c(s)`` gives 0."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        x2 = x[None, :] if squeeze else x
        cols = np.arange(x2.shape[1]) if site_index is None else np.asarray(site_index)
        out = np.zeros_like(x2)
        c = self.c
        for j, i in enumerate(cols):
            xi_ = x2[:, j]
            wet = xi_ > c[i]
            out[wet, j] = self.isf(i, laplace_sf(xi_[wet]))
        return out[0] if squeeze else out

    def return_level(self, site: int, years: float, fields_per_year: float) -> float:
        if not years > 0 or not fields_per_year > 0:
            raise ProbabilityOutOfRange("years and fields_per_year must be positive")
        s = 1.0 / (years * fields_per_year)
        if not 0 < s < 1:
            raise ProbabilityOutOfRange(f"exceedance probability {s} outside (0, 1)")
        return float(self.isf(site, np.array([s]))[0])


# ---------------------------------------------------------------------------
# fitting

def _site_design(sites: SiteSet, basis: Basis):
    X = basis.design(sites)
    V = basis.reduced(X)
    return X, V


def fit_dry_probability(series: FieldSeries, config: BasisConfig = BasisConfig(), basis: Basis | None = None,
                        seed: int = 0) -> SurfaceModel:
    """Logistic fit of P(Y(s) = 0) on the spline basis."""
    values = series.values
    n_obs = np.full(values.shape[1], values.shape[0], dtype=float)
    n_dry = np.count_nonzero(values <= 0, axis=0).astype(float)
    if n_obs.sum() == 0:
        raise DegenerateData("no observations")
    if n_dry.sum() == 0 or n_dry.sum() == n_obs.sum():
        raise DegenerateData("all observations dry or all wet")
    basis = basis or Basis.build(series.sites, config, seed)
    X, V = _site_design(series.sites, basis)
    Z = X @ V

    def nll(g):
        eta = Z @ g
        f = -(n_dry * eta - n_obs * np.logaddexp(0, eta)).sum()
        grad = -Z.T @ (n_dry - n_obs * expit(eta))
        return f, grad

    frac = np.clip(n_dry.sum() / n_obs.sum(), 1e-6, 1 - 1e-6)
    g0 = np.linalg.lstsq(Z, np.full(Z.shape[0], math.log(frac / (1 - frac))), rcond=None)[0]
    res = optimize.minimize(nll, g0, jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 10000})
    return SurfaceModel(basis, V @ res.x, "logit", {"converged": bool(res.success)})


def select_threshold_subset(sites: SiteSet, size: int, n_bins: int = 10, seed=0) -> np.ndarray:
    """Elevation-stratified sample of site indices.

    Bin counts are allocated in proportion to the elevation histogram, so the
    subset reproduces the empirical elevation distribution.
    """
    rng = as_generator(seed)
    d = len(sites)
    if size >= d:
        return np.arange(d)
    elev = sites.elev
    if np.ptp(elev) == 0:
        return np.sort(rng.choice(d, size, replace=False))
    edges = np.quantile(elev, np.linspace(0, 1, n_bins + 1))
    bins = np.clip(np.searchsorted(edges, elev, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins)
    alloc = np.floor(size * counts / d).astype(int)
    short = size - alloc.sum()
    order = np.argsort(-(size * counts / d - alloc), kind="stable")
    for b in order[:short]:
        alloc[b] += 1
    chosen = []
    for b in range(n_bins):
        members = np.flatnonzero(bins == b)
        take = min(alloc[b], members.size)
        if take:
            chosen.append(rng.choice(members, take, replace=False))
    return np.sort(np.concatenate(chosen))


class _SitePinball:
    """Exact pinball loss of each site's observations at any level ``q``.

    Sorted values and prefix sums give each site's loss in O(log n).
    """

    def __init__(self, values: np.ndarray, tau: float):
        self.sorted = np.sort(values, axis=0)
        self.n = values.shape[0]
        self.prefix = np.vstack([np.zeros(values.shape[1]), np.cumsum(self.sorted, axis=0)])
        self.total = self.prefix[-1]
        self.tau = tau

    def __call__(self, q: np.ndarray) -> float:
        cols = np.arange(q.size)
        k = np.array([np.searchsorted(self.sorted[:, j], q[j], side="right") for j in cols])
        below = self.prefix[k, cols]
        above = self.total - below
        loss = self.tau * (above - (self.n - k) * q) + (1 - self.tau) * (k * q - below)
        return float(loss.sum())


def fit_threshold_surface(series: FieldSeries, lam: float, subset=None, config: BasisConfig = BasisConfig(),
                          basis: Basis | None = None, seed: int = 0, restarts: int = 3) -> SurfaceModel:
    """Linear quantile regression at level ``1 - lam`` on the spline basis.

    Minimises the exact pinball loss over the observations of the ``subset``
    sites with Nelder-Mead, started from a least-squares fit to the site-wise
    empirical quantiles and restarted from the incumbent.
    """
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    sites = series.sites
    subset = np.arange(len(sites)) if subset is None else np.asarray(subset, dtype=int)
    if subset.size == 0:
        raise ValueError("subset must be non-empty")
    if series.n < 1.0 / lam:
        warnings.warn(f"{series.n} observations per site is fewer than 1/lambda = {1 / lam:.0f}",
                      InsufficientData, stacklevel=2)
    basis = basis or Basis.build(sites, config, seed)
    Xs = basis.design(sites.subset(subset))
    V = basis.reduced(Xs)
    Zs = Xs @ V
    tau = 1.0 - lam
    loss = _SitePinball(series.values[:, subset], tau)
    emp = np.quantile(series.values[:, subset], tau, axis=0)
    g = np.linalg.lstsq(Zs, emp, rcond=None)[0]
    scale = max(float(np.std(emp)), float(np.mean(np.abs(emp))) * 0.1, 1e-3)
    f = loss(Zs @ g)
    for _ in range(restarts):
        k = g.size
        simplex = np.vstack([g] + [g + scale * np.eye(k)[j] / max(np.abs(Zs[:, j]).max(), 1e-12)
                                   for j in range(k)])
        res = optimize.minimize(lambda b: loss(Zs @ b), g, method="Nelder-Mead",
                                options={"initial_simplex": simplex, "xatol": 1e-10, "fatol": 1e-10,
                                         "maxfev": 4000 * k, "adaptive": k > 3})
        improved = f - res.fun
        g, f = res.x, res.fun
        scale *= 0.1
        if improved < 1e-10 * max(abs(f), 1.0):
            break
    return SurfaceModel(basis, V @ g, "identity", {"subset": subset.tolist(), "tau": tau, "loss": f})


def gpd_objective(theta, X, z):
    """Negative GPD log-likelihood and gradient; ``theta = (coef..., xi)``.

    Outside the support the objective is ``1e6`` times the total violation.
    """
    coef, xi = theta[:-1], theta[-1]
    eta = X @ coef
    ll, d_eta, d_xi, viol = gpd_loglik_and_score(eta, xi, z)
    v = viol.sum()
    if v > 0:
        # gradient of the violation -(1 + xi z / scale) on the bad points
        bad = viol > 0
        t = z[bad] / np.exp(eta[bad])
        g_eta = np.zeros_like(eta)
        g_eta[bad] = xi * t
        g = np.concatenate([X.T @ g_eta, [-t.sum()]])
        return PENALTY * (v + 1.0), PENALTY * g
    return -ll.sum(), -np.concatenate([X.T @ d_eta, [d_xi.sum()]])


def fit_gpd_surface(series: FieldSeries, q_surface: SurfaceModel, config: BasisConfig = BasisConfig(),
                    basis: Basis | None = None, seed: int = 0, xi0: float = 0.1):
    """Fit log-linked scale surface and common shape to exceedances of ``q``.

    Returns ``(upsilon_surface, xi, info)``.
    """
    sites = series.sites
    q = q_surface(sites)
    exc = series.values - q[None, :]
    t_idx, s_idx = np.nonzero(exc > 0)
    if t_idx.size == 0:
        raise NoExceedances("no exceedances of the threshold surface")
    z = exc[t_idx, s_idx]
    basis = basis or Basis.build(sites, config, seed)
    Xsite, V = _site_design(sites, basis)
    Zsite = Xsite @ V
    X = Zsite[s_idx]
    g0 = np.linalg.lstsq(Zsite, np.full(len(sites), math.log(z.mean())), rcond=None)[0]
    theta0 = np.concatenate([g0, [xi0]])
    res = optimize.minimize(gpd_objective, theta0, args=(X, z), jac=True, method="BFGS",
                            options={"gtol": 1e-8, "maxiter": 20000})
    coef = V @ res.x[:-1]
    info = {"converged": bool(res.success), "nll": float(res.fun), "n_exceedances": int(z.size)}
    return SurfaceModel(basis, coef, "log", info), float(res.x[-1]), info


def bulk_tables(series: FieldSeries, q: np.ndarray, max_knots: int = MAX_BULK_KNOTS) -> list:
    tables = []
    for i in range(series.d):
        col = series.values[:, i]
        tables.append(BulkTable.from_values(col[col > 0], max_knots))
    return tables


def fit_marginal(series: FieldSeries, lam: float = 0.005, subset=None, config: BasisConfig = BasisConfig(),
                 seed: int = 0) -> MarginalModel:
    """Full marginal fit: dry probability, threshold, GPD tail and bulk tables."""
    basis = Basis.build(series.sites, config, seed)
    p_s = fit_dry_probability(series, basis=basis)
    q_s = fit_threshold_surface(series, lam, subset, basis=basis)
    u_s, xi, _ = fit_gpd_surface(series, q_s, basis=basis)
    q = q_s(series.sites)
    return MarginalModel(lam, p_s, q_s, u_s, xi, bulk_tables(series, q), series.sites)
