"""Conditional simulation of extreme fields with importance sub-sampling.

A replicate is drawn by picking a conditioning site ``s_O`` uniformly from
``A_c``, setting ``x(s_O) = v + E`` with ``E ~ Exp(1)`` and
``x(s) = alpha x(s_O) + x(s_O)^beta z(s)`` elsewhere, with ``z`` the
delta-Laplace residual field. Replicates are weighted by the reciprocal of
their exceedance count over ``S_tau`` and resampled in proportion to the
weights, which targets fields conditioned on ``max X > v``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.spatial import Delaunay

from .errors import AllWeightsZero, CholeskyFailure, EmptyRegion, RegionMismatch, RejectionStall
from .geometry import Chart, SiteSet, haversine, transformed_lonlat
from .dependence.functions import (DependenceParams, dl_from_normal, eval_alpha, eval_beta, eval_delta, eval_mu,
                                   eval_rho, eval_sigma)
from .marginals import MarginalModel
from .rng import as_generator, stream

JITTER = 1e-8
JITTER_STEPS = 3
CHUNK = 512


# ---------------------------------------------------------------------------
# regions

def build_s_tau(sites: SiteSet, A, tau: float, n_s: int = 0, seed=0) -> np.ndarray:
    """Sorted site indices within ``tau`` km of ``A`` plus ``n_s`` random extras."""
    A = np.unique(np.asarray(A, dtype=int))
    if A.size == 0:
        raise EmptyRegion("aggregation region is empty")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    near = np.zeros(len(sites), dtype=bool)
    near[A] = True
    lon, lat = sites.lon, sites.lat
    for start in range(0, A.size, 256):
        a = A[start:start + 256]
        d = haversine(lon[a][:, None], lat[a][:, None], lon[None, :], lat[None, :])
        near |= np.any(d <= tau, axis=0)
    rest = np.flatnonzero(~near)
    n_s = min(int(n_s), rest.size)
    if n_s > 0:
        extra = as_generator(seed).choice(rest, size=n_s, replace=False)
        near[extra] = True
    return np.flatnonzero(near)


def build_s_plus(sites: SiteSet, A, n_c: int, noise_sd: float | None = None, seed=0,
                 max_proposals: int = 1_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic conditioning sites outside the convex hull of ``sites``.

    Proposals are the planar centroid of ``A`` plus isotropic Gaussian noise
    (default standard deviation: the domain diameter). Returns ``(lon, lat)``.
    """
    if n_c < 0:
        raise ValueError("n_c must be non-negative")
    if n_c == 0:
        return np.zeros(0), np.zeros(0)
    chart = sites.chart()
    xy = sites.planar(chart)
    centre = xy[np.asarray(A, dtype=int)].mean(axis=0)
    if noise_sd is None:
        noise_sd = float(np.sqrt(np.sum(np.ptp(xy, axis=0) ** 2))) or 1.0
    hull = Delaunay(xy)
    rng = as_generator(seed)
    keep = []
    tried = 0
    while sum(len(k) for k in keep) < n_c:
        batch = rng.normal(centre, noise_sd, size=(4096, 2))
        tried += batch.shape[0]
        outside = batch[hull.find_simplex(batch) < 0]
        keep.append(outside)
        got = sum(len(k) for k in keep)
        if tried >= max_proposals and got / tried < 1e-3:
            raise RejectionStall(f"acceptance rate {got / tried:.2e} after {tried} proposals")
    pts = np.concatenate(keep)[:n_c]
    lon, lat = chart.inverse(pts[:, 0], pts[:, 1])
    return np.asarray(lon), np.asarray(lat)


@dataclass
class SimulationRegions:
    """``A`` and ``S_tau`` index the full site set; ``S_plus`` are off-grid lon/lat."""

    sites: SiteSet
    A: np.ndarray
    S_tau: np.ndarray
    plus_lon: np.ndarray = field(default_factory=lambda: np.zeros(0))
    plus_lat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.A = np.unique(np.asarray(self.A, dtype=int))
        self.S_tau = np.unique(np.asarray(self.S_tau, dtype=int))
        if self.A.size == 0:
            raise EmptyRegion("aggregation region is empty")
        if not np.all(np.isin(self.A, self.S_tau)):
            raise RegionMismatch("A must be a subset of S_tau")
        self.plus_lon = np.asarray(self.plus_lon, dtype=float)
        self.plus_lat = np.asarray(self.plus_lat, dtype=float)

    @classmethod
    def build(cls, sites: SiteSet, A, tau: float = 27.5, n_s: int = 500, n_c: int = 0,
              noise_sd: float | None = None, seed=0) -> "SimulationRegions":
        s_tau = build_s_tau(sites, A, tau, n_s, stream(seed, "s_tau"))
        lon, lat = build_s_plus(sites, A, n_c, noise_sd, stream(seed, "s_plus"))
        return cls(sites, A, s_tau, lon, lat)

    @property
    def n_c(self) -> int:
        return self.plus_lon.size

    @property
    def A_c_lonlat(self) -> tuple[np.ndarray, np.ndarray]:
        lon = np.concatenate([self.sites.lon[self.S_tau], self.plus_lon])
        lat = np.concatenate([self.sites.lat[self.S_tau], self.plus_lat])
        return lon, lat

    def positions(self, idx) -> np.ndarray:
        """Column positions within ``S_tau`` of full-site indices ``idx``."""
        idx = np.asarray(idx, dtype=int)
        pos = np.searchsorted(self.S_tau, idx)
        if np.any(pos >= self.S_tau.size) or np.any(self.S_tau[np.minimum(pos, self.S_tau.size - 1)] != idx):
            raise RegionMismatch("sites are not contained in S_tau")
        return pos


# ---------------------------------------------------------------------------
# residual process

class ResidualSampler:
    """Conditioned Gaussian / delta-Laplace residual fields on a fixed site set.

    One Cholesky factor of the Matern correlation over ``S_tau`` is shared by
    every conditioning site; ``W*(s) = W(s) - rho(s, s_O) W(s_O)`` then has the
    covariance of ``W`` given ``W(s_O) = 0``.
    """

    def __init__(self, lon, lat, params: DependenceParams, chart: Chart):
        self.params = params
        self.chart = chart
        self.tlon, self.tlat = transformed_lonlat(np.asarray(lon, float), np.asarray(lat, float), params.aniso, chart)
        d = haversine(self.tlon[:, None], self.tlat[:, None], self.tlon[None, :], self.tlat[None, :])
        R = eval_rho(d, params)
        self.L = self._factor(R)

    @staticmethod
    def _factor(R):
        jitter = 0.0
        for step in range(JITTER_STEPS):
            try:
                return cholesky(R + jitter * np.eye(R.shape[0]), lower=True)
            except np.linalg.LinAlgError:
                jitter = JITTER * 10 ** step
        try:
            return cholesky(R + jitter * np.eye(R.shape[0]), lower=True)
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure(f"correlation matrix not positive definite at jitter {jitter}") from exc

    @property
    def m(self) -> int:
        return self.tlon.size

    def distances_to(self, o_lon, o_lat) -> np.ndarray:
        """(B, m) anisotropic distances from conditioning points to the sites."""
        olon, olat = transformed_lonlat(np.atleast_1d(o_lon), np.atleast_1d(o_lat), self.params.aniso, self.chart)
        return haversine(olon[:, None], olat[:, None], self.tlon[None, :], self.tlat[None, :])

    def sample(self, h, on_site, e, e_extra):
        """Residual fields given distances ``h`` (B, m).

        ``on_site[b]`` is the column of ``s_O`` or -1 when off-grid; ``e`` (B, m)
        and ``e_extra`` (B,) are standard normal draws.
        """
        p = self.params
        W = e @ self.L.T
        rho = eval_rho(h, p)
        B = h.shape[0]
        w_o = np.empty(B)
        on = on_site >= 0
        w_o[on] = W[np.flatnonzero(on), on_site[on]]
        if np.any(~on):
            a = solve_triangular(self.L, rho[~on].T, lower=True)   # (m, B_off)
            mean = np.einsum("mb,bm->b", a, e[~on])
            var = np.clip(1.0 - np.einsum("mb,mb->b", a, a), 0.0, None)
            w_o[~on] = mean + np.sqrt(var) * e_extra[~on]
        # standardise so every margin is exactly delta-Laplace
        sd = np.sqrt(np.clip(1.0 - rho * rho, 1e-300, None))
        Wstar = (W - rho * w_o[:, None]) / sd
        z = dl_from_normal(Wstar, eval_mu(h, p), eval_sigma(h, p), eval_delta(h, p))
        z[np.flatnonzero(on), on_site[on]] = 0.0
        return z


def simulate_residual_field(o_lon: float, o_lat: float, sites: SiteSet, params: DependenceParams, seed=0,
                            n: int = 1, chart: Chart | None = None) -> np.ndarray:
    """``n`` residual fields on ``sites`` given the conditioning point (lon, lat)."""
    sampler = ResidualSampler(sites.lon, sites.lat, params, chart or sites.chart())
    h = np.repeat(sampler.distances_to(o_lon, o_lat), n, axis=0)
    col = np.flatnonzero(h[0] == 0.0)
    on_site = np.full(n, col[0] if col.size else -1)
    rng = as_generator(seed)
    e = rng.standard_normal((n, sampler.m))
    return sampler.sample(h, on_site, e, rng.standard_normal(n))


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class SimulationEnsemble:
    """Replicates on ``S_tau`` (mm/hr) plus per-replicate metadata.

    ``cond_site`` indexes the A_c list (S_tau columns first, then S_plus);
    it is -1 for observed below-threshold draws.
    """

    values: np.ndarray
    laplace: np.ndarray
    cond_site: np.ndarray
    weights: np.ndarray
    labels: np.ndarray
    v: float
    seed: int
    S_tau: np.ndarray
    exceed_rate: float = 1.0
    below_threshold_pool: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def b(self) -> int:
        return self.values.shape[0]


def _draw_chunk(sampler: ResidualSampler, olon, olat, on_idx, seed, start, stop, v, p: DependenceParams):
    m = sampler.m
    n_ac = olon.size
    B = stop - start
    cond = np.empty(B, dtype=np.int64)
    over = np.empty(B)
    e = np.empty((B, m))
    e_extra = np.empty(B)
    for r in range(B):
        g = stream(seed, "replicate", start + r)
        cond[r] = g.integers(n_ac)
        over[r] = g.standard_exponential()
        e[r] = g.standard_normal(m)
        e_extra[r] = g.standard_normal()
    h = sampler.distances_to(olon[cond], olat[cond])
    on_site = on_idx[cond]
    h[np.flatnonzero(on_site >= 0), on_site[on_site >= 0]] = 0.0
    z = sampler.sample(h, on_site, e, e_extra)
    x_o = v + over
    x = eval_alpha(h, p) * x_o[:, None] + np.power(x_o[:, None], eval_beta(h, p)) * z
    rows = np.flatnonzero(on_site >= 0)
    x[rows, on_site[rows]] = x_o[rows]
    return cond, over, x


def importance_resample(weights, b: int, rng) -> np.ndarray:
    """``b`` indices drawn with replacement, with probability proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise AllWeightsZero("importance weights must be non-negative with a positive total")
    return as_generator(rng).choice(w.size, size=int(b), replace=True, p=w / w.sum())


def simulate_conditional(marginal: MarginalModel, dependence: DependenceParams, regions: SimulationRegions,
                         v: float, b: int, b_prime: int | None = None, observed=None, seed: int = 0,
                         label: str = "E", threads: int = 1) -> SimulationEnsemble:
    """Importance-resampled extreme fields on ``S_tau``.

    Parameters
    ----------
    v
        Laplace-scale simulation threshold.
    b, b_prime
        Final ensemble size and number of proposals (default ``8 b``).
    observed
        Optional ``(x, values)`` pair of observed Laplace-scale fields and
        their mm/hr values over all sites. When given, each of the ``b``
        replicates is, with the empirical probability that an observed field
        exceeds ``v`` somewhere, a model field; otherwise it is a uniformly
        drawn observed field whose maximum does not exceed ``v``.
    """
    b_prime = 8 * b if b_prime is None else int(b_prime)
    if b < 1 or b_prime <= b:
        raise ValueError("need b >= 1 and b_prime > b")
    S_tau = regions.S_tau
    olon, olat = regions.A_c_lonlat
    on_idx = np.concatenate([np.arange(S_tau.size), np.full(regions.n_c, -1)])
    sampler = ResidualSampler(marginal.sites.lon[S_tau], marginal.sites.lat[S_tau], dependence,
                              marginal.sites.chart())
    bounds = list(range(0, b_prime, CHUNK)) + [b_prime]
    spans = list(zip(bounds[:-1], bounds[1:]))

    def weights_of(span):
        _, _, x = _draw_chunk(sampler, olon, olat, on_idx, seed, span[0], span[1], v, dependence)
        cnt = np.count_nonzero(x > v, axis=1)
        return np.where(cnt > 0, 1.0 / np.maximum(cnt, 1), 0.0)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(weights_of, spans))
    else:
        parts = [weights_of(s) for s in spans]
    w = np.concatenate(parts)
    if not np.any(w > 0):
        raise AllWeightsZero("no proposal exceeds v inside S_tau; raise b_prime or lower v")
    chosen = importance_resample(w, b, stream(seed, "subsample"))

    # regenerate the chosen replicates from their own streams
    cond = np.empty(b, dtype=np.int64)
    x = np.empty((b, S_tau.size))
    for r, idx in enumerate(chosen):
        c_, _, x_ = _draw_chunk(sampler, olon, olat, on_idx, seed, int(idx), int(idx) + 1, v, dependence)
        cond[r] = c_[0]
        x[r] = x_[0]
    weights = w[chosen]
    labels = np.full(b, label, dtype="<U1")
    rate = 1.0
    pool = np.zeros(0, dtype=int)
    if observed is not None:
        ox, oval = (np.asarray(a, dtype=float) for a in observed)
        omax = ox.max(axis=1)
        rate = float(np.mean(omax > v))
        pool = np.flatnonzero(omax <= v)
        mix_rng = stream(seed, "observed")
        use_obs = mix_rng.random(b) >= rate
        if pool.size == 0:
            use_obs[:] = False
        picks = pool[mix_rng.integers(max(pool.size, 1), size=b)] if pool.size else np.zeros(b, dtype=int)
        rows = np.flatnonzero(use_obs)
        x[rows] = ox[picks[rows]][:, S_tau]
        cond[rows] = -1
        weights[rows] = 0.0
        values = marginal.from_laplace(x, site_index=S_tau)
        values[rows] = oval[picks[rows]][:, S_tau]
    else:
        values = marginal.from_laplace(x, site_index=S_tau)
    return SimulationEnsemble(values, x, cond, weights, labels, float(v), int(seed), S_tau.copy(), rate, pool)


def mix_ensembles(conv: SimulationEnsemble, nonconv: SimulationEnsemble, p_c: float, b: int | None = None,
                  seed: int = 0) -> SimulationEnsemble:
    """Replicate ``r`` comes from ``conv`` with probability ``p_c``, else ``nonconv``."""
    if not np.array_equal(conv.S_tau, nonconv.S_tau):
        raise RegionMismatch("ensembles live on different S_tau")
    if not 0.0 <= p_c <= 1.0:
        raise ValueError("p_c must lie in [0, 1]")
    b = min(conv.b, nonconv.b) if b is None else int(b)
    if b > conv.b or b > nonconv.b:
        raise ValueError("b exceeds an input ensemble size")
    take_c = stream(seed, "mix").random(b) < p_c
    if take_c.all():
        src = conv
        sl = slice(0, b)
        return SimulationEnsemble(src.values[sl].copy(), src.laplace[sl].copy(), src.cond_site[sl].copy(),
                                  src.weights[sl].copy(), np.full(b, "C", dtype="<U1"), src.v, src.seed,
                                  src.S_tau.copy(), src.exceed_rate, src.below_threshold_pool.copy())

    def pick(attr):
        a, n = getattr(conv, attr)[:b], getattr(nonconv, attr)[:b]
        if a.ndim == 2:
            return np.where(take_c[:, None], a, n)
        return np.where(take_c, a, n)

    labels = np.where(take_c, "C", "N").astype("<U1")
    return SimulationEnsemble(pick("values"), pick("laplace"), pick("cond_site"), pick("weights"), labels,
                              conv.v, conv.seed, conv.S_tau.copy(), float("nan"))


def aggregate(values, region_cols) -> np.ndarray:
    """Mean over region columns; ``values`` may be one field or a (b, m) stack."""
    region_cols = np.asarray(region_cols, dtype=int)
    if region_cols.size == 0:
        raise EmptyRegion("aggregation region is empty")
    values = np.asarray(values, dtype=float)
    return values[..., region_cols].mean(axis=-1)


def exceedance_gap(x_observed, S_tau, v: float) -> float:
    """Mean relative shortfall of S_tau exceedance counts versus full-S counts.

    Computed on observed Laplace-scale fields that exceed ``v`` somewhere;
    0 means the S_tau weights coincide with the full-domain weights.
    """
    x_observed = np.asarray(x_observed, dtype=float)
    full = np.count_nonzero(x_observed > v, axis=1)
    part = np.count_nonzero(x_observed[:, np.asarray(S_tau, dtype=int)] > v, axis=1)
    keep = full > 0
    if not np.any(keep):
        return float("nan")
    return float(np.mean(1.0 - part[keep] / full[keep]))


def simulate_exceedance_fields(sites: SiteSet, params: DependenceParams, u: float, n: int, seed: int = 0,
                               threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Laplace-scale fields drawn from the conditional model itself.

    Each field picks a conditioning site uniformly from ``sites``, sets
    ``x(s_O) = u + Exp(1)`` and fills the rest from the model. Returns the
    (n, d) fields and the conditioning-site index of each.
    """
    sampler = ResidualSampler(sites.lon, sites.lat, params, sites.chart())
    on_idx = np.arange(len(sites))
    bounds = list(range(0, n, CHUNK)) + [n]
    spans = list(zip(bounds[:-1], bounds[1:]))

    def one(span):
        cond, _, x = _draw_chunk(sampler, sites.lon, sites.lat, on_idx, seed, span[0], span[1], u, params)
        return cond, x

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(one, spans))
    else:
        parts = [one(s) for s in spans]
    return np.concatenate([p[1] for p in parts]), np.concatenate([p[0] for p in parts])
