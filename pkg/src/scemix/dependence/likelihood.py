"""Censored triplewise composite likelihood.

For a conditioning site ``s_i`` and an exceedance time ``t`` (``x_t(s_i) >= u``)
the residuals at ``s_j`` are ``(x_t(s_j) - alpha x_t(s_i)) x_t(s_i)^-beta``;
censored sites (``x <= c(s)``) contribute through the residual image of
their censoring level. Pairs of residuals are joined by a Gaussian copula
whose correlation is the Matern correlation conditioned on ``W(s_i) = 0``.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from ..errors import DegenerateConditioning, NoExceedances, Unsatisfiable
from ..geometry import AnisotropyParams, Chart, SiteSet, haversine, transformed_lonlat
from ..rng import as_generator
from .bvn import bvn_cdf
from .functions import (DependenceParams, dl_logpdf, dl_to_normal, eval_alpha, eval_beta, eval_delta, eval_mu,
                        eval_rho, eval_sigma)

CORR_CLAMP = 1.0 - 1e-10
CHUNK_ROWS = 1 << 15
LOG_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# pair densities

def conditioned_correlation(rho_jk, rho_jo, rho_ko):
    """Correlation of W(s_j), W(s_k) given W(s_O) = 0, clamped away from +-1."""
    rho_jk, rho_jo, rho_ko = (np.asarray(a, dtype=float) for a in (rho_jk, rho_jo, rho_ko))
    if np.any(np.abs(rho_jo) >= 1) or np.any(np.abs(rho_ko) >= 1):
        raise DegenerateConditioning("a site coincides with the conditioning site")
    r = (rho_jk - rho_jo * rho_ko) / np.sqrt((1 - rho_jo ** 2) * (1 - rho_ko ** 2))
    return np.clip(r, -CORR_CLAMP, CORR_CLAMP)


def residual_pair_correlation(h_jk, h_jo, h_ko, params: DependenceParams):
    """Conditioned residual correlation from the three anisotropic distances."""
    return conditioned_correlation(eval_rho(h_jk, params), eval_rho(h_jo, params), eval_rho(h_ko, params))


def log_censored_pair_density(z_j, z_k, cens_j, cens_k, marg_j, marg_k, r):
    """log g for residual pairs.

    ``z`` holds the residual, or its censoring level where ``cens`` is true;
    ``marg_*`` are ``(mu, sigma, delta)`` tuples; ``r`` the conditioned
    correlation. All inputs broadcast.
    """
    z_j, z_k, r = (np.asarray(a, dtype=float) for a in (z_j, z_k, r))
    cens_j, cens_k = np.asarray(cens_j, dtype=bool), np.asarray(cens_k, dtype=bool)
    shape = np.broadcast_shapes(z_j.shape, z_k.shape, cens_j.shape, cens_k.shape, r.shape)
    w_j = np.broadcast_to(dl_to_normal(z_j, *marg_j), shape)
    w_k = np.broadcast_to(dl_to_normal(z_k, *marg_k), shape)
    r = np.broadcast_to(r, shape)
    cens_j = np.broadcast_to(cens_j, shape)
    cens_k = np.broadcast_to(cens_k, shape)
    lf_j = np.broadcast_to(dl_logpdf(z_j, *marg_j), shape)
    lf_k = np.broadcast_to(dl_logpdf(z_k, *marg_k), shape)
    one_m = 1.0 - r * r
    sd = np.sqrt(one_m)
    out = np.empty(shape)

    m = ~cens_j & ~cens_k
    if np.any(m):
        wj, wk, rr, om = w_j[m], w_k[m], r[m], one_m[m]
        log_cop = -0.5 * np.log(om) - (rr * rr * (wj * wj + wk * wk) - 2 * rr * wj * wk) / (2 * om)
        out[m] = lf_j[m] + lf_k[m] + log_cop
    # one censored: density of the observed one times the conditional Gaussian
    # probability of the other falling below its censoring score
    m = ~cens_j & cens_k
    if np.any(m):
        out[m] = lf_j[m] + log_ndtr((w_k[m] - r[m] * w_j[m]) / sd[m])
    m = cens_j & ~cens_k
    if np.any(m):
        out[m] = lf_k[m] + log_ndtr((w_j[m] - r[m] * w_k[m]) / sd[m])
    m = cens_j & cens_k
    if np.any(m):
        out[m] = np.log(np.maximum(bvn_cdf(w_j[m], w_k[m], r[m]), LOG_FLOOR))
    return out


def censored_pair_density(z_j, z_k, cens_j, cens_k, marg_j, marg_k, r):
    return np.exp(log_censored_pair_density(z_j, z_k, cens_j, cens_k, marg_j, marg_k, r))


# ---------------------------------------------------------------------------
# triple sampling

@dataclass(frozen=True)
class TripleSet:
    """Site-index triples ``(i, j, k)``; ``i`` conditions, ``j < k``."""

    triples: np.ndarray
    h_max: float
    seed: int | None = None

    @property
    def d_s(self) -> int:
        return self.triples.shape[0]

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.triples, dtype="<i8").tobytes()).hexdigest()[:16]


def sample_triples(sites: SiteSet, d_s: int, h_max: float, aniso: AnisotropyParams = AnisotropyParams(),
                   seed=0, candidates=None) -> TripleSet:
    """Stratified sample of ``d_s`` triples.

    Repeatedly draws a conditioning site uniformly (from ``candidates`` if
    given) and then an unused admissible pair ``j < k`` with both sites
    within ``h_max`` of it. Sites with fewer than two neighbours, or whose
    pairs are exhausted, are skipped.
    """
    if d_s < 1:
        raise ValueError("d_s must be positive")
    rng = as_generator(seed)
    chart = sites.chart()
    lon, lat = transformed_lonlat(sites.lon, sites.lat, aniso, chart)
    pool = np.arange(len(sites)) if candidates is None else np.unique(np.asarray(candidates, dtype=int))
    neighbours: dict[int, np.ndarray] = {}
    used: dict[int, set] = {}

    def nbrs(i):
        if i not in neighbours:
            h = haversine(lon[i], lat[i], lon, lat)
            ok = h < h_max
            ok[i] = False
            neighbours[i] = np.flatnonzero(ok)
        return neighbours[i]

    alive = [int(i) for i in pool if nbrs(int(i)).size >= 2]
    if not alive:
        raise Unsatisfiable(f"no site has two neighbours within h_max = {h_max} km")
    alive = np.array(alive)
    capacity = {int(i): nbrs(int(i)).size * (nbrs(int(i)).size - 1) // 2 for i in alive}
    out = []
    # sites without (remaining) admissible pairs drop out of the draw
    while len(out) < d_s and alive.size:
        i = int(alive[rng.integers(alive.size)])
        nb = neighbours[i]
        taken = used.setdefault(i, set())
        while True:
            a, b = rng.choice(nb.size, size=2, replace=False)
            j, k = sorted((int(nb[a]), int(nb[b])))
            if (j, k) not in taken:
                break
        taken.add((j, k))
        out.append((i, j, k))
        if len(taken) >= capacity[i]:
            alive = alive[alive != i]
    return TripleSet(np.array(out, dtype=np.int64).reshape(-1, 3), float(h_max),
                     seed if isinstance(seed, (int, np.integer)) else None)


# ---------------------------------------------------------------------------
# negative log composite likelihood

@dataclass
class _Rows:
    triple: np.ndarray   # row -> triple index
    time: np.ndarray
    x_i: np.ndarray
    x_j: np.ndarray
    x_k: np.ndarray
    c_j: np.ndarray
    c_k: np.ndarray
    cens_j: np.ndarray
    cens_k: np.ndarray


class CompositeLikelihood:
    """Negative log censored triplewise composite likelihood.

    Parameters
    ----------
    x, c
        Laplace-scale field matrix (n, d) and censoring thresholds (d,).
    sites
        Sites matching the columns of ``x``.
    triples
        Sampled triples.
    u
        Laplace-scale threshold defining the exceedance times of a site.
    conditioning
        Optional per-time conditioning-site index. When given, time ``t``
        only counts as an exceedance time of ``conditioning[t]`` (use ``-1``
        for none). This matches data generated by conditional simulation,
        where each field is drawn given an exceedance at one site.
    threads
        Worker threads; the result does not depend on this value.
    """

    def __init__(self, x, c, sites: SiteSet, triples: TripleSet, u: float, conditioning=None, threads: int = 1):
        x = np.asarray(x, dtype=float)
        c = np.asarray(c, dtype=float)
        if x.ndim != 2 or x.shape[1] != len(sites) or c.shape != (len(sites),):
            raise ValueError("x must be (n, d) and c must be (d,) for the given sites")
        self.sites = sites
        self.triples = triples
        self.u = float(u)
        self.threads = max(1, int(threads))
        self.chart: Chart = sites.chart()
        self.n = x.shape[0]
        exceed = x >= self.u
        if conditioning is not None:
            conditioning = np.asarray(conditioning, dtype=int)
            if conditioning.shape != (self.n,):
                raise ValueError("conditioning must have one entry per time")
            mask = np.zeros_like(exceed)
            ok = conditioning >= 0
            mask[np.flatnonzero(ok), conditioning[ok]] = True
            exceed &= mask
        tri = triples.triples
        parts_r, parts_t = [], []
        for r, i in enumerate(tri[:, 0]):
            ts = np.flatnonzero(exceed[:, i])
            if ts.size:
                parts_r.append(np.full(ts.size, r))
                parts_t.append(ts)
        if not parts_r:
            raise NoExceedances("no sampled conditioning site has an exceedance time")
        rt = np.concatenate(parts_r)
        tt = np.concatenate(parts_t)
        i, j, k = tri[rt, 0], tri[rt, 1], tri[rt, 2]
        xj, xk = x[tt, j], x[tt, k]
        self.rows = _Rows(rt, tt, x[tt, i], xj, xk, c[j], c[k], xj <= c[j], xk <= c[k])
        self.log_xi = np.log(self.rows.x_i)
        if np.any(self.rows.x_i <= 0):
            raise ValueError("threshold u must be positive on the Laplace scale")
        self.n_rows = rt.size

    # -- pieces ------------------------------------------------------------
    def triple_distances(self, aniso: AnisotropyParams):
        lon, lat = transformed_lonlat(self.sites.lon, self.sites.lat, aniso, self.chart)
        tri = self.triples.triples
        i, j, k = tri[:, 0], tri[:, 1], tri[:, 2]
        return (haversine(lon[j], lat[j], lon[i], lat[i]), haversine(lon[k], lat[k], lon[i], lat[i]),
                haversine(lon[j], lat[j], lon[k], lat[k]))

    def row_terms(self, params: DependenceParams, rows=slice(None)) -> np.ndarray:
        """Per-row contributions to the negative log likelihood."""
        h_ji, h_ki, h_jk = self._h_cache(params)
        R = self.rows
        tr = R.triple[rows]
        xi, lxi = R.x_i[rows], self.log_xi[rows]
        terms = []
        # distance-only functions are evaluated once per triple
        for h, x_l, c_l, cens in ((h_ji, R.x_j, R.c_j, R.cens_j), (h_ki, R.x_k, R.c_k, R.cens_k)):
            a, b = eval_alpha(h, params)[tr], eval_beta(h, params)[tr]
            level = np.where(cens[rows], c_l[rows], x_l[rows])
            z = (level - a * xi) * np.exp(-b * lxi)
            marg = (eval_mu(h, params)[tr], eval_sigma(h, params)[tr], eval_delta(h, params)[tr])
            terms.append((z, cens[rows], marg, b))
        r = residual_pair_correlation(h_jk, h_ji, h_ki, params)[tr]
        (zj, cj, mj, bj), (zk, ck, mk, bk) = terms
        logg = log_censored_pair_density(zj, zk, cj, ck, mj, mk, r)
        jac = (bj * ~cj + bk * ~ck) * lxi
        return jac - logg

    def _h_cache(self, params: DependenceParams):
        key = (params.theta, params.L)
        if getattr(self, "_hkey", None) != key:
            self._h = self.triple_distances(params.aniso)
            self._hkey = key
        return self._h

    # -- totals ------------------------------------------------------------
    def __call__(self, params: DependenceParams) -> float:
        self._h_cache(params)
        bounds = list(range(0, self.n_rows, CHUNK_ROWS)) + [self.n_rows]
        chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

        def part(sl):
            return float(np.sum(self.row_terms(params, sl)))

        if self.threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                sums = list(ex.map(part, chunks))
        else:
            sums = [part(sl) for sl in chunks]
        # chunk boundaries are fixed, so the ordered sum is thread-independent
        total = 0.0
        for s in sums:
            total += s
        return total if math.isfinite(total) else math.inf

    def per_time(self, params: DependenceParams) -> np.ndarray:
        """NLL contributions aggregated by time index (length n)."""
        terms = self.row_terms(params)
        return np.bincount(self.rows.time, weights=terms, minlength=self.n)


def negative_log_composite_likelihood(x, c, sites: SiteSet, triples: TripleSet, params: DependenceParams,
                                      u: float, conditioning=None, threads: int = 1) -> float:
    return CompositeLikelihood(x, c, sites, triples, u, conditioning, threads)(params)
