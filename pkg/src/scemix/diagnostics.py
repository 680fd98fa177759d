"""Diagnostics: tail dependence, aggregate Q-Q deviance, bootstrap, transects.

Sample quantiles use linear interpolation between order statistics
(``numpy.quantile`` default, Hyndman-Fan type 7) everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classification import FieldSeries
from .dependence.functions import DependenceParams, eval_alpha, eval_beta
from .errors import NoExceedances
from .geometry import Chart
from .marginals import MarginalModel, fit_gpd_surface, laplace_isf, laplace_quantile
from .rng import as_generator, stream
from .simulation import ResidualSampler


def chi_q_empirical(x_a, x_b, q: float) -> float:
    """P(X_b > its q-quantile | X_a > its q-quantile), estimated from paired series."""
    x_a = np.asarray(x_a, dtype=float)
    x_b = np.asarray(x_b, dtype=float)
    if x_a.shape != x_b.shape:
        raise ValueError("series must have equal length")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    ea = x_a > np.quantile(x_a, q)
    eb = x_b > np.quantile(x_b, q)
    n_a = np.count_nonzero(ea)
    if n_a == 0:
        raise NoExceedances("no exceedances of the q-quantile in the first series")
    return np.count_nonzero(ea & eb) / n_a


def chi_q_model(dependence: DependenceParams, h_km: float, q: float, n: int = 10_000, seed: int = 0) -> float:
    """Empirical chi_q at separation ``h_km`` from ``n`` fields simulated under the dependence model.

    Fields are conditioned on an exceedance of the Laplace ``q``-quantile at
    one site; the estimate is the fraction whose value at a site ``h_km``
    due east also exceeds it.
    """
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    chart = Chart(0.0, 52.0)
    lon_b, lat_b = chart.inverse(np.array([h_km]), np.array([0.0]))
    sampler = ResidualSampler(lon_b, lat_b, dependence, chart)
    u = float(laplace_quantile(q))
    rng = stream(seed, "chi-model")
    x_o = u + rng.standard_exponential(n)
    h = np.repeat(sampler.distances_to(0.0, 52.0), n, axis=0)
    z = sampler.sample(h, np.full(n, -1), rng.standard_normal((n, 1)), rng.standard_normal(n))
    x = eval_alpha(h, dependence) * x_o[:, None] + np.power(x_o[:, None], eval_beta(h, dependence)) * z
    return float(np.mean(x[:, 0] > u))


def qq_grid(p1: float, m: int) -> np.ndarray:
    """``m`` equally spaced probabilities from ``p1`` with ``p_m = 1 - (p_2 - p_1)``."""
    if m < 2 or not 0 < p1 < 1:
        raise ValueError("need m >= 2 and p1 in (0, 1)")
    step = (1.0 - p1) / m
    return p1 + step * np.arange(m)


def qq_deviance(model_sample, observed_sample, p1: float = 0.99, m: int = 432) -> tuple[float, float]:
    """Mean absolute and mean squared gaps between the two quantile curves."""
    model_sample = np.asarray(model_sample, dtype=float)
    observed_sample = np.asarray(observed_sample, dtype=float)
    if model_sample.size == 0 or observed_sample.size == 0:
        raise ValueError("samples must be non-empty")
    p = qq_grid(p1, m)
    gap = np.abs(np.quantile(model_sample, p) - np.quantile(observed_sample, p))
    return float(gap.mean()), float((gap ** 2).mean())


@dataclass(frozen=True)
class BootstrapPlan:
    n: int
    expected_block: float = 48.0
    n_boot: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.n_boot < 1:
            raise ValueError("n and n_boot must be positive")
        if not self.expected_block >= 1:
            raise ValueError("expected_block must be at least 1")


def stationary_bootstrap_blocks(n: int, expected_block: float, rng) -> list[tuple[int, int]]:
    """(start, length) blocks covering ``n`` positions; lengths are geometric."""
    rng = as_generator(rng)
    out = []
    total = 0
    p = 1.0 / expected_block
    while total < n:
        start = int(rng.integers(n))
        length = int(rng.geometric(p))
        out.append((start, length))
        total += length
    return out


def stationary_bootstrap_indices(plan: BootstrapPlan, replicate: int = 0) -> np.ndarray:
    """Zero-based resampled time indices of length ``plan.n`` (circular blocks)."""
    rng = stream(plan.seed, "bootstrap", replicate)
    blocks = stationary_bootstrap_blocks(plan.n, plan.expected_block, rng)
    idx = np.concatenate([(s + np.arange(length)) % plan.n for s, length in blocks])
    return idx[:plan.n]


# ---------------------------------------------------------------------------
# aggregate Q-Q reports

@dataclass
class QQReport:
    p: np.ndarray
    model_q: np.ndarray
    emp_q: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    lambda1: float
    lambda2: float

    def rows(self):
        return zip(self.p, self.model_q, self.emp_q, self.lo, self.hi)


def aggregate_qq(model_sample, observed_sample, p1: float = 0.99, m: int = 432,
                 model_replicates=None) -> QQReport:
    """Q-Q comparison of simulated and observed aggregates.

    ``model_replicates`` is an optional list of further model samples (e.g.
    one per bootstrap refit) from which pointwise 2.5/97.5% bands are taken.
    """
    p = qq_grid(p1, m)
    mq = np.quantile(np.asarray(model_sample, float), p)
    eq = np.quantile(np.asarray(observed_sample, float), p)
    if model_replicates:
        reps = np.array([np.quantile(np.asarray(r, float), p) for r in model_replicates])
        lo, hi = np.quantile(reps, [0.025, 0.975], axis=0)
    else:
        lo = hi = np.full(m, np.nan)
    gap = np.abs(mq - eq)
    return QQReport(p, mq, eq, lo, hi, float(gap.mean()), float((gap ** 2).mean()))


def nonconvective_share(values, labels, region_cols, levels=(0.99, 0.995)) -> dict:
    """Share of non-convective replicates among simulated aggregates above each quantile level."""
    agg = np.asarray(values, float)[:, np.asarray(region_cols, dtype=int)].mean(axis=1)
    labels = np.asarray(labels)
    out = {}
    for lev in levels:
        above = agg > np.quantile(agg, lev)
        out[lev] = float(np.mean(labels[above] == "N")) if above.any() else float("nan")
    return out


# ---------------------------------------------------------------------------
# marginal diagnostics

def exponential_scores(marginal: MarginalModel, values) -> np.ndarray:
    """Threshold exceedances mapped to Exp(1) through the fitted GPD tail.

    Values beyond a bounded tail's endpoint get the largest finite score.
    """
    values = np.asarray(values, dtype=float)
    out = []
    for i in range(values.shape[1]):
        col = values[:, i]
        exc = col[col > marginal.q[i]]
        if exc.size:
            sf = np.maximum(marginal.sf(i, exc), np.finfo(float).tiny)
            out.append(-np.log(sf / marginal.lam))
    return np.concatenate(out) if out else np.zeros(0)


def pooled_qq(marginal: MarginalModel, series: FieldSeries, n_boot: int = 250, expected_block: float = 48.0,
              seed: int = 0) -> QQReport:
    """Pooled exponential Q-Q plot of the marginal tail fit.

    Bands come from refitting the GPD scale surface and shape to stationary
    bootstrap resamples with the threshold surface held fixed, then mapping
    the original data through each refit.
    """
    emp = np.sort(exponential_scores(marginal, series.values))
    if emp.size == 0:
        raise NoExceedances("no threshold exceedances to plot")
    n = emp.size
    p = np.arange(1, n + 1) / (n + 1)
    model_q = -np.log1p(-p)
    plan = BootstrapPlan(series.n, expected_block, max(n_boot, 1), seed)
    reps = []
    basis = marginal.upsilon_surface.basis
    for b in range(n_boot):
        idx = stationary_bootstrap_indices(plan, b)
        try:
            ups, xi, _ = fit_gpd_surface(series.select(idx), marginal.q_surface, basis=basis, xi0=marginal.xi)
        except NoExceedances:
            continue
        refit = MarginalModel(marginal.lam, marginal.p_surface, marginal.q_surface, ups, xi, marginal.bulk,
                              marginal.sites)
        reps.append(np.sort(exponential_scores(refit, series.values)))
    if reps:
        lo, hi = np.quantile(np.array(reps), [0.025, 0.975], axis=0)
    else:
        lo = hi = np.full(n, np.nan)
    gap = np.abs(emp - model_q)
    return QQReport(p, model_q, emp, lo, hi, float(gap.mean()), float((gap ** 2).mean()))


# ---------------------------------------------------------------------------
# conditional transects

@dataclass
class TransectSummary:
    sites: np.ndarray
    distance: np.ndarray
    median: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    level: float


def conditional_transect(marginal: MarginalModel, dependence: DependenceParams, s_o: int, transect,
                         level: float, n_sims: int = 50_000, seed: int = 0) -> TransectSummary:
    """Pointwise median and 95% range of Y(s) given Y(s_O) = ``level`` (mm/hr)."""
    transect = np.asarray(transect, dtype=int)
    sites = marginal.sites
    x_o = float(laplace_isf(marginal.sf(s_o, np.array([level])))[0])
    sampler = ResidualSampler(sites.lon[transect], sites.lat[transect], dependence, sites.chart())
    h = np.repeat(sampler.distances_to(sites.lon[s_o], sites.lat[s_o]), n_sims, axis=0)
    hit = np.flatnonzero(transect == s_o)
    on_site = np.full(n_sims, hit[0] if hit.size else -1)
    if hit.size:
        h[:, hit[0]] = 0.0
    rng = stream(seed, "transect")
    z = sampler.sample(h, on_site, rng.standard_normal((n_sims, sampler.m)), rng.standard_normal(n_sims))
    x = eval_alpha(h, dependence) * x_o + np.power(x_o, eval_beta(h, dependence)) * z
    y = marginal.from_laplace(x, site_index=transect)
    if hit.size:
        y[:, hit[0]] = level
    med, lo, hi = np.quantile(y, [0.5, 0.025, 0.975], axis=0)
    return TransectSummary(transect, h[0], med, lo, hi, float(level))
