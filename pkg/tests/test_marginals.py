from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from scemix.classification import FieldSeries
from scemix.errors import DegenerateData, InsufficientData, NegativeValue, NoExceedances, ProbabilityOutOfRange
from scemix.geometry import SiteSet
from scemix.marginals import (BulkTable, MarginalModel, fit_dry_probability, fit_gpd_surface, fit_marginal,
                              fit_threshold_surface, gpd_isf, gpd_objective, gpd_sf, laplace_cdf, laplace_isf,
                              laplace_quantile, laplace_sf, select_threshold_subset)
from scemix.surfaces import Basis, BasisConfig, SurfaceModel

from helpers import INTERCEPT, constant_marginal as constant_model


def one_site():
    return SiteSet.from_arrays([-1.0], [52.0])


def gpd_sample(rng, n, scale, xi):
    return gpd_isf(rng.random(n), scale, xi)


# -- Laplace and GPD primitives ------------------------------------------------

def test_laplace_primitives():
    x = np.linspace(-30, 30, 601)
    np.testing.assert_allclose(laplace_cdf(x) + laplace_sf(x), 1.0, atol=1e-15)
    np.testing.assert_allclose(laplace_quantile(laplace_cdf(x[np.abs(x) < 20])), x[np.abs(x) < 20], atol=1e-8)
    # the survival form is exact in the upper tail, where simulation lives
    up = x[x > -5]
    np.testing.assert_allclose(laplace_isf(laplace_sf(up)), up, rtol=1e-10, atol=1e-10)
    assert laplace_quantile(0.5) == 0.0


def test_gpd_primitives():
    z = np.linspace(0, 10, 101)
    for xi in (-0.2, 0.0, 0.3):
        np.testing.assert_allclose(gpd_isf(gpd_sf(z[:60], 2.0, xi), 2.0, xi), z[:60], atol=1e-10)
    assert gpd_sf(6.0, 1.0, -0.2) == 0.0  # beyond the upper endpoint 5


def score_error(seed: int) -> float:
    """Worst relative gap between the analytic GPD score and central differences."""
    rng = np.random.default_rng(seed)
    sites = SiteSet.regular_grid(3, 3, 10.0)
    X = Basis.build(sites, BasisConfig(k_loc=2, use_elevation=False)).design(sites)
    idx = rng.integers(0, 9, 400)
    xi = rng.uniform(-0.3, 0.5)
    z = gpd_sample(rng, 400, 1.0, max(xi, 0.0))
    theta = np.concatenate([rng.normal(0, 0.3, X.shape[1]) + np.r_[0.5, np.zeros(X.shape[1] - 1)], [xi]])
    Xi = X[idx]
    f, g = gpd_objective(theta, Xi, z)
    if f >= 1e6:
        return 0.0
    fd = np.empty_like(theta)
    for j in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[j]))
        e = np.zeros_like(theta)
        e[j] = h
        fd[j] = (gpd_objective(theta + e, Xi, z)[0] - gpd_objective(theta - e, Xi, z)[0]) / (2 * h)
    return float(np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1.0)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_gpd_score_matches_finite_differences(seed):
    assert score_error(seed) < 1e-5


# -- three-part CDF ------------------------------------------------------------

def test_cdf_reference_points():
    m = constant_model(p=0.3, q=2.0, ups=1.0, xi=0.2, lam=0.05)
    assert m.cdf(0, np.array([0.0]))[0] == pytest.approx(0.3, abs=1e-12)
    assert m.cdf(0, np.array([2.0]))[0] == pytest.approx(0.95, abs=1e-12)
    y = 2.0 + (0.5 ** -0.2 - 1) / 0.2
    assert m.cdf(0, np.array([y]))[0] == pytest.approx(1 - 0.05 / 2, abs=1e-12)
    with pytest.raises(NegativeValue):
        m.cdf(0, np.array([-1.0]))


def test_cdf_continuous_at_threshold_and_monotone():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p, lam = rng.uniform(0, 0.6), rng.uniform(0.001, 0.2)
        m = constant_model(p=p, q=rng.uniform(0.5, 5), ups=rng.uniform(0.2, 3), xi=rng.uniform(-0.3, 0.5),
                           lam=lam, seed=int(rng.integers(1000)))
        q = m.q[0]
        eps = 1e-9
        below, at, above = m.cdf(0, np.array([q - eps, q, q + eps]))
        assert below == pytest.approx(at, abs=1e-7) and above == pytest.approx(at, abs=1e-7)
        assert at == pytest.approx(1 - lam, abs=1e-12)
        ys = np.sort(rng.uniform(0, 5 * q, 1000))
        F = m.cdf(0, ys)
        assert np.all(np.diff(F) >= 0)
        # right-continuity at the atom
        assert m.cdf(0, np.array([1e-12]))[0] == pytest.approx(m.cdf(0, np.array([0.0]))[0], abs=1e-9)


def test_quantile_reference_points_and_round_trip():
    m = constant_model(p=0.3, q=2.0, ups=1.0, xi=0.2, lam=0.05)
    assert m.quantile(0, np.array([0.15]))[0] == 0.0
    assert m.quantile(0, np.array([0.95]))[0] == pytest.approx(2.0, abs=1e-12)
    rng = np.random.default_rng(0)
    u = rng.uniform(0.3 + 1e-9, 1 - 1e-9, 1000)
    assert np.max(np.abs(m.cdf(0, m.quantile(0, u)) - u)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.6), st.floats(0.001, 0.3), st.floats(-0.4, 0.6), st.integers(0, 1000))
def test_round_trip_property(p, lam, xi, seed):
    m = constant_model(p=p, q=1.5, ups=0.7, xi=xi, lam=lam, seed=seed)
    u = np.random.default_rng(seed).uniform(p + 1e-6, 1 - 1e-8, 200)
    assert np.max(np.abs(m.cdf(1, m.quantile(1, u)) - u)) < 1e-9


def test_model_validation():
    with pytest.raises(DegenerateData):
        constant_model(p=0.97, lam=0.05)


# -- Laplace transform ---------------------------------------------------------

def test_laplace_transform_censoring():
    m = constant_model(p=0.5)
    np.testing.assert_allclose(m.c, 0.0, atol=1e-12)
    lf = m.to_laplace(np.array([[0.0, 1.0, 3.0, 0.0]]))
    assert lf.censored.tolist() == [[True, False, False, True]]
    assert lf.x[0, 0] == m.c[0]


def test_laplace_round_trip_and_distribution():
    m = constant_model(p=0.35, q=2.0, ups=1.0, xi=0.1, lam=0.02)
    rng = np.random.default_rng(7)
    u = rng.random((100_000, 1))
    y = m.quantile(0, u[:, 0])[:, None]
    lf = m.to_laplace(np.repeat(y, 4, axis=1))
    back = m.from_laplace(lf.x)
    wet = ~lf.censored
    np.testing.assert_allclose(back[wet], np.repeat(y, 4, axis=1)[wet], rtol=1e-8, atol=1e-10)
    assert np.all(back[~wet] == 0)
    x = lf.x[:, 0]
    assert abs(np.median(x)) < 0.02
    # uncensored values follow the Laplace law restricted above c
    c = m.c[0]
    xu = x[wet[:, 0]]
    cdf = lambda t: (laplace_cdf(t) - laplace_cdf(c)) / laplace_sf(c)
    assert stats.kstest(xu, cdf).statistic < 0.02


# -- return levels -------------------------------------------------------------

def test_return_level():
    m = constant_model(p=0.3, q=2.0, ups=1.5, xi=0.0, lam=0.05)
    fpy = 100.0
    years = 1 / (0.05 * fpy)
    assert m.return_level(0, years, fpy) == pytest.approx(2.0, abs=1e-12)
    for yrs in (1, 10, 100):
        period = yrs * fpy
        assert m.return_level(0, yrs, fpy) == pytest.approx(2.0 + 1.5 * math.log(0.05 * period), rel=1e-12)
    with pytest.raises(ProbabilityOutOfRange):
        m.return_level(0, -1, fpy)


# -- fitting -------------------------------------------------------------------

def test_dry_probability_single_site_closed_form():
    values = np.ones((100, 1))
    values[:40] = 0.0
    s = fit_dry_probability(FieldSeries(one_site(), values), INTERCEPT)
    assert s(one_site())[0] == pytest.approx(0.4, abs=1e-6)


def test_dry_probability_constant_surface():
    sites = SiteSet.regular_grid(5, 5, 3.0, elev=np.linspace(0, 300, 25))
    values = np.ones((50, 25))
    values[:20] = 0.0
    s = fit_dry_probability(FieldSeries(sites, values))
    np.testing.assert_allclose(s(sites), 0.4, atol=1e-4)


def test_dry_probability_two_groups():
    elev = np.r_[np.zeros(10), np.full(10, 200.0)]
    sites = SiteSet.regular_grid(5, 4, 3.0, elev=elev)
    rng = np.random.default_rng(1)
    target = np.where(elev > 0, 0.6, 0.2)
    values = (rng.random((2000, 20)) >= target).astype(float)
    p = fit_dry_probability(FieldSeries(sites, values), BasisConfig(k_loc=0, k_elev=1))(sites)
    np.testing.assert_allclose(p, target, atol=0.02)


def test_dry_probability_degenerate():
    with pytest.raises(DegenerateData):
        fit_dry_probability(FieldSeries(one_site(), np.zeros((5, 1))), INTERCEPT)


def test_threshold_single_site_matches_empirical_quantile():
    rng = np.random.default_rng(2)
    y = rng.exponential(1.0, (4000, 1))
    lam = 0.01
    s = fit_threshold_surface(FieldSeries(one_site(), y), lam, config=INTERCEPT)
    q = s(one_site())[0]
    srt = np.sort(y[:, 0])
    k = int(np.ceil((1 - lam) * y.shape[0])) - 1
    assert srt[k - 1] - 1e-9 <= q <= srt[k + 1] + 1e-9


def test_threshold_linear_in_elevation():
    rng = np.random.default_rng(3)
    elev = np.linspace(0, 500, 20)
    sites = SiteSet.regular_grid(5, 4, 3.0, elev=elev)
    slope, lam = 0.02, 0.1
    values = 1.0 + slope * elev[None, :] + rng.exponential(1.0, (500, 20))
    s = fit_threshold_surface(FieldSeries(sites, values), lam, config=BasisConfig(k_loc=0, k_elev=1))
    q = s(sites)
    fitted = np.polyfit(elev, q, 1)[0]
    assert fitted == pytest.approx(slope, rel=0.05)


def test_threshold_subset_and_warning():
    sites = SiteSet.regular_grid(10, 10, 2.0, elev=np.arange(100.0))
    sub = select_threshold_subset(sites, 30, seed=0)
    assert sub.size == 30 and np.unique(sub).size == 30
    np.testing.assert_array_equal(sub, select_threshold_subset(sites, 30, seed=0))
    # roughly one site per elevation decile band of 10
    assert np.all(np.bincount(sub // 10, minlength=10) == 3)
    with pytest.warns(InsufficientData):
        fit_threshold_surface(FieldSeries(one_site(), np.ones((10, 1))), 0.005, config=INTERCEPT)


def _gpd_series(z, q=1.0):
    return FieldSeries(one_site(), (q + z)[:, None]), SurfaceModel(Basis.build(one_site(), INTERCEPT), [q])


def test_gpd_refit_recovers_truth():
    rng = np.random.default_rng(5)
    series, qs = _gpd_series(gpd_sample(rng, 10_000, 2.0, 0.2))
    ups, xi, info = fit_gpd_surface(series, qs, INTERCEPT)
    assert ups(one_site())[0] == pytest.approx(2.0, rel=0.10)
    assert xi == pytest.approx(0.2, rel=0.10)
    assert info["n_exceedances"] == 10_000


def test_gpd_exponential_boundary():
    rng = np.random.default_rng(6)
    series, qs = _gpd_series(rng.exponential(1.0, 10_000))
    _, xi, _ = fit_gpd_surface(series, qs, INTERCEPT)
    assert abs(xi) < 0.05


def test_gpd_shared_shape_varying_scale():
    rng = np.random.default_rng(8)
    elev = np.linspace(0, 400, 16)
    sites = SiteSet.regular_grid(4, 4, 5.0, elev=elev)
    scale = np.exp(0.2 + elev / 400)
    z = gpd_isf(rng.random((2000, 16)), scale[None, :], -0.1)
    series = FieldSeries(sites, 1.0 + z)
    qs = SurfaceModel(Basis.build(sites, INTERCEPT), [1.0])
    ups, xi, _ = fit_gpd_surface(series, qs, BasisConfig(k_loc=0, k_elev=1))
    assert xi == pytest.approx(-0.1, abs=0.03)
    np.testing.assert_allclose(ups(sites), scale, rtol=0.1)


def test_gpd_no_exceedances():
    series, qs = _gpd_series(np.zeros(10), q=5.0)
    series = FieldSeries(one_site(), np.ones((10, 1)))
    with pytest.raises(NoExceedances):
        fit_gpd_surface(series, qs, INTERCEPT)


def test_fit_marginal_end_to_end():
    from scemix.synth import SynthProcess, simulate_process
    sites = SiteSet.regular_grid(6, 6, 3.0)
    proc = SynthProcess(p_dry=0.5, scale=1.0, xi=0.15, range_km=10)
    values = simulate_process(sites, proc, 4000, seed=1)
    m = fit_marginal(FieldSeries(sites, values), lam=0.02, config=BasisConfig(k_loc=2, use_elevation=False))
    np.testing.assert_allclose(m.p, 0.5, atol=0.03)
    assert np.all(m.p + m.lam < 1)
    true_q = gpd_isf(0.02 / 0.5, 1.0, 0.15)
    np.testing.assert_allclose(m.q, true_q, rtol=0.1)
    assert m.xi == pytest.approx(0.15, abs=0.12)
