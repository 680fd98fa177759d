"""End-to-end steps shared by the CLI and the synthetic experiments.

Process labels: ``"C"`` convective, ``"N"`` non-convective and ``"E"`` the
pooled (all fields) process.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classification import FieldSeries, estimate_p_c
from .dependence.fit import DependenceFit, fit_dependence
from .dependence.functions import DependenceParams
from .dependence.likelihood import CompositeLikelihood, TripleSet, sample_triples
from .diagnostics import BootstrapPlan, qq_deviance, stationary_bootstrap_indices
from .errors import LabelsRequired
from .marginals import MarginalModel, fit_marginal, laplace_quantile, select_threshold_subset
from .rng import stream
from .simulation import (SimulationEnsemble, SimulationRegions, aggregate, build_s_plus, build_s_tau,
                         mix_ensembles, simulate_conditional)
from .surfaces import BasisConfig

PROCESSES = ("C", "N", "E")

# Published estimates for UK hourly rainfall, used as optimiser starting points.
REFERENCE_PARAMS = {
    "C": DependenceParams(ka1=1.60, ka2=0.64, Delta=0.0, kb1=32.49, kb2=0.73, kb3=1.0, km1=0.70, km2=0.28,
                          km3=47.56, ks1=20.87, ks2=0.76, kd1=0.77, kd2=0.32, kd3=57.90, kd4=1.0, kr1=104.81,
                          kr2=0.41, theta=-0.15, L=0.97, beta_variant="C", sigma_variant="C"),
    "N": DependenceParams(ka1=170.07, ka2=0.87, Delta=6.81, kb1=0.12, kb2=1.36, kb3=256.0, km1=-0.06, km2=0.40,
                          km3=15.50, ks1=16.79, ks2=0.73, ks3=2.11, kd1=1.84e-3, kd2=1.65, kd3=90.57, kd4=0.28,
                          kr1=1496.36, kr2=0.36, theta=-0.32, L=1.00, beta_variant="N", sigma_variant="N"),
    "E": DependenceParams(ka1=0.65, ka2=0.50, Delta=0.0, kb1=30.28, kb2=0.63, kb3=1.0, km1=0.96, km2=1.19,
                          km3=81.83, ks1=18.62, ks2=0.85, kd1=0.88, kd2=0.29, kd3=136.26, kd4=1.0, kr1=121.52,
                          kr2=0.40, theta=-0.14, L=0.98, beta_variant="C", sigma_variant="C"),
}


@dataclass
class ProcessSettings:
    u_level: float
    h_max: float
    d_s: int = 5000
    lam: float = 0.005
    subset_size: int = 500
    basis: BasisConfig = field(default_factory=BasisConfig)
    maxfev: int = 3000
    se_method: str = "hessian"
    threads: int = 1

    @classmethod
    def default(cls, process: str, **kw) -> "ProcessSettings":
        if process not in PROCESSES:
            raise ValueError(f"process must be one of {PROCESSES}")
        base = dict(u_level=0.96 if process == "C" else 0.99, h_max=250.0 if process == "N" else 35.0)
        base.update(kw)
        return cls(**base)


@dataclass
class FittedProcess:
    process: str
    marginal: MarginalModel
    dependence: DependenceFit
    triples: TripleSet
    u_level: float


def process_series(series: FieldSeries, process: str) -> FieldSeries:
    """Fields belonging to ``process`` (all of them for the pooled process)."""
    if process == "E":
        return series
    if series.labels is None:
        raise LabelsRequired(f"process {process} needs class labels")
    return series.of_class(process)


def fit_process(series: FieldSeries, process: str, settings: ProcessSettings | None = None, seed: int = 0,
                init: DependenceParams | None = None) -> FittedProcess:
    """Marginal fit, Laplace transform, triple sampling and dependence fit for one process."""
    settings = settings or ProcessSettings.default(process)
    sub = process_series(series, process)
    sites = sub.sites
    subset = select_threshold_subset(sites, min(settings.subset_size, len(sites)), seed=stream(seed, "subset"))
    marginal = fit_marginal(sub, settings.lam, subset, settings.basis, seed=seed)
    lf = marginal.to_laplace(sub.values)
    u = float(laplace_quantile(settings.u_level))
    triples = sample_triples(sites, settings.d_s, settings.h_max, seed=stream(seed, "triples"))
    lik = CompositeLikelihood(lf.x, lf.c, sites, triples, u, threads=settings.threads)
    start = init or REFERENCE_PARAMS[process]
    fit = fit_dependence(lik, start.beta_variant, start.sigma_variant, init=start, maxfev=settings.maxfev,
                         se_method=settings.se_method)
    return FittedProcess(process, marginal, fit, triples, settings.u_level)


@dataclass
class SimulationSettings:
    tau: float = 27.5
    n_s: int = 500
    n_c: int = 1250
    noise_sd: float | None = None
    b: int = 550_000
    b_prime_factor: int = 8
    threads: int = 1


def build_regions(sites, A, settings: SimulationSettings, seed: int) -> dict:
    """Shared S_tau for every process; only N gets the off-grid sites S_plus."""
    s_tau = build_s_tau(sites, A, settings.tau, settings.n_s, stream(seed, "s_tau"))
    lon, lat = build_s_plus(sites, A, settings.n_c, settings.noise_sd, stream(seed, "s_plus"))
    plain = SimulationRegions(sites, A, s_tau)
    return {"C": plain, "E": plain, "N": SimulationRegions(sites, A, s_tau, lon, lat)}


def simulate_fitted(fp: FittedProcess, regions: SimulationRegions, observed_values, settings: SimulationSettings,
                    seed: int = 0, v_level: float | None = None) -> SimulationEnsemble:
    """Unconditional ensemble for one fitted process, mixing in observed below-threshold fields."""
    v = float(laplace_quantile(fp.u_level if v_level is None else v_level))
    lf = fp.marginal.to_laplace(observed_values)
    return simulate_conditional(fp.marginal, fp.dependence.params, regions, v, settings.b,
                                settings.b_prime_factor * settings.b, observed=(lf.x, observed_values),
                                seed=seed, label=fp.process if fp.process != "E" else "E",
                                threads=settings.threads)


def mixture_ensemble(conv: SimulationEnsemble, nonconv: SimulationEnsemble, labels, seed: int) -> SimulationEnsemble:
    return mix_ensembles(conv, nonconv, estimate_p_c(labels), seed=stream(seed, "mixture").integers(2 ** 63))


def region_columns(ensemble: SimulationEnsemble, regions: dict) -> dict:
    pos = {int(s): k for k, s in enumerate(ensemble.S_tau)}
    return {name: np.array([pos[int(s)] for s in idx]) for name, idx in regions.items()}


def lambda_table(model_aggregates: dict, observed_aggregates: dict, p1: float = 0.99, m: int = 432) -> dict:
    """``{region: (lambda1, lambda2)}`` for matching model and observed aggregate samples."""
    return {r: qq_deviance(model_aggregates[r], observed_aggregates[r], p1, m) for r in observed_aggregates}


def bootstrap_lambda(model_sample, observed_series_agg, plan: BootstrapPlan, p1: float = 0.99,
                     m: int = 432) -> np.ndarray:
    """Lambda_1 and Lambda_2 for each stationary-bootstrap resample of the observed aggregates."""
    observed_series_agg = np.asarray(observed_series_agg, dtype=float)
    out = np.empty((plan.n_boot, 2))
    for b in range(plan.n_boot):
        idx = stationary_bootstrap_indices(plan, b)
        out[b] = qq_deviance(model_sample, observed_series_agg[idx], p1, m)
    return out


def aggregate_quantiles(sample, probs) -> np.ndarray:
    return np.quantile(np.asarray(sample, dtype=float), probs)


def quantile_levels(fields_per_year: float, years: float = 20.0, lo: float = 0.8, n: int = 200) -> np.ndarray:
    """Probabilities from ``lo`` to the ``years``-year level, evenly spaced on the return-period scale."""
    top = 1.0 - 1.0 / (years * fields_per_year)
    if not lo < top:
        raise ValueError("the return level must lie above the lowest plotted quantile")
    periods = np.exp(np.linspace(math.log(1 / (1 - lo)), math.log(1 / (1 - top)), n))
    return 1.0 - 1.0 / periods


def observed_aggregates(values, regions: dict) -> dict:
    return {name: aggregate(values, idx) for name, idx in regions.items()}
