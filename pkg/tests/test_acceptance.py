"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest -v tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
Criteria 3 and 5 are full simulation studies and take the longest; their
seeds run in a process pool sized to the machine.
"""
from __future__ import annotations

import json
import math
import os
import subprocess
import sys
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, str(Path(__file__).resolve().parent))

from scemix.classification import classify_field, estimate_p_c
from scemix.cli import main
from scemix.dependence.fit import fit_dependence
from scemix.dependence.functions import SQRT2, dl_pdf, eval_alpha, matern
from scemix.dependence.likelihood import CompositeLikelihood, sample_triples
from scemix.diagnostics import chi_q_model
from scemix.geometry import SiteSet
from scemix.marginals import fit_gpd_surface, laplace_quantile
from scemix.pipeline import REFERENCE_PARAMS
from scemix.simulation import _draw_chunk, ResidualSampler, mix_ensembles, simulate_exceedance_fields

HERE = Path(__file__).resolve().parent


# collected lines are printed by the terminal-summary hook in conftest.py
RESULTS: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {number} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)


def run_suite(*files: str) -> tuple[bool, str]:
    out = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *files],
                         cwd=HERE.parent, capture_output=True, text=True)
    tail = out.stdout.strip().splitlines()[-1] if out.stdout.strip() else out.stderr.strip()[-200:]
    return out.returncode == 0, tail


# -- 1. censored likelihood against quadrature -----------------------------------------

def test_criterion_1_censored_likelihood_oracle():
    from test_dependence import quadrature_check
    t0 = time.perf_counter()
    worst = quadrature_check(50, seed=2024)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    report(1, ok, f"worst relative error {worst:.2e} over 50 configurations (4 branches), {elapsed:.1f} s")
    assert ok


# -- 2. special-function reductions ----------------------------------------------------

def test_criterion_2_special_function_reductions():
    z = np.linspace(-6, 6, 241)
    worst_dl = 0.0
    for mu, sigma in [(0.0, 1.0), (0.4, 0.7), (-1.2, 2.5)]:
        worst_dl = max(worst_dl, float(np.max(np.abs(dl_pdf(z, mu, sigma, 2.0) - stats.norm.pdf(z, mu, sigma)))))
    h = np.linspace(0, 500, 1001)
    worst_m = max(float(np.max(np.abs(matern(h, k, 0.5) - np.exp(-SQRT2 * h / k)))) for k in (5.0, 104.81, 1496.36))
    p = REFERENCE_PARAMS["N"].replace(ka2=1.0)
    beyond = p.Delta + np.linspace(0, 800, 801)
    worst_a = float(np.max(np.abs(eval_alpha(beyond, p) - np.exp(-(beyond - p.Delta) / p.ka1))))
    inside = bool(np.all(eval_alpha(np.linspace(0, p.Delta, 50), p) == 1.0))
    ok = worst_dl <= 1e-12 and worst_m <= 1e-10 and worst_a <= 1e-14 and inside
    report(2, ok, f"delta-Laplace(2) vs Normal {worst_dl:.1e}; Matern(0.5) vs exponential {worst_m:.1e}; "
                  f"alpha(ka2=1) vs exponential {worst_a:.1e}, flat inside Delta: {inside}")
    assert ok


# -- 3. parameter recovery -------------------------------------------------------------

RECOVERY_SEEDS = range(1, 21)
RECOVERY_GRID = (25, 25, 2.2)
RECOVERY_N = 2000
RECOVERY_DS = 2000
RECOVERY_HMAX = 35.0


def recovery_seed(seed: int) -> dict:
    """Fit one simulated sample started from the truth; |estimate - truth| / SE per free parameter."""
    warnings.simplefilter("ignore")
    truth = REFERENCE_PARAMS["C"]
    sites = SiteSet.regular_grid(*RECOVERY_GRID)
    u = float(laplace_quantile(0.96))
    t0 = time.perf_counter()
    x, cond = simulate_exceedance_fields(sites, truth, u, RECOVERY_N, seed)
    c = np.zeros(len(sites))
    x = np.maximum(x, c)
    triples = sample_triples(sites, RECOVERY_DS, RECOVERY_HMAX, seed=seed)
    lik = CompositeLikelihood(x, c, sites, triples, u, conditioning=cond)
    fit = fit_dependence(lik, "C", "C", init=truth, maxfev=3000, restarts=0, se_method="hessian")
    z = {n: abs(getattr(fit.params, n) - getattr(truth, n)) / fit.stderr[n] for n in fit.free}
    return dict(seed=seed, z=z, seconds=time.perf_counter() - t0)


def _pool_map(fn, items):
    workers = max(1, min(len(items), os.cpu_count() or 1))
    if workers == 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


def test_criterion_3_parameter_recovery():
    t0 = time.perf_counter()
    runs = _pool_map(recovery_seed, list(RECOVERY_SEEDS))
    elapsed = time.perf_counter() - t0
    names = list(runs[0]["z"])
    within = np.array([[r["z"][n] <= 3.0 for n in names] for r in runs])
    per_param = within.mean(axis=0)
    joint = float(within.all(axis=1).mean())
    worst = names[int(np.argmin(per_param))]
    for r in runs:
        bad = {n: round(v, 2) for n, v in r["z"].items() if not v <= 3.0}
        RESULTS.append(f"  seed {r['seed']:2d}: {r['seconds']:.0f} s, outside 3 SE: {bad or 'none'}")
    ok_cov = bool(per_param.min() >= 0.9)
    ok_time = elapsed < 1800
    report(3, ok_cov and ok_time,
           f"lowest per-parameter coverage {per_param.min():.2f} ({worst}); all parameters jointly within 3 SE "
           f"in {joint:.2f} of seeds; {elapsed / 60:.1f} min on {os.cpu_count()} CPU(s)")
    assert ok_cov, dict(zip(names, per_param.round(2)))
    assert ok_time, f"{elapsed:.0f} s"


# -- 4. conditional simulation contracts ------------------------------------------------

def test_criterion_4_simulation_contracts():
    from test_simulation import NONCONV, _toy
    grid = SiteSet.regular_grid(8, 8, 2.2)
    _, _, v, ens = _toy(grid, b=2000, seed=5)
    counts = np.count_nonzero(ens.laplace > v, axis=1)
    weights_ok = bool(np.all(counts > 0) and np.array_equal(ens.weights, 1.0 / counts))
    sampler = ResidualSampler(grid.lon[:4], grid.lat[:4], REFERENCE_PARAMS["C"], grid.chart())
    cond, over, _ = _draw_chunk(sampler, grid.lon[:4], grid.lat[:4], np.arange(4), 9, 0, 100_000, 2.0,
                                REFERENCE_PARAMS["C"])
    ks = stats.kstest(over, "expon").statistic
    conv = _toy(grid, b=300, seed=1)[3]
    nonconv = _toy(grid, b=300, seed=2, params=NONCONV)[3]
    mixed = mix_ensembles(conv, nonconv, 1.0, seed=3)
    identical = mixed.values.tobytes() == conv.values.tobytes() and mixed.laplace.tobytes() == conv.laplace.tobytes()
    ok = weights_ok and ks < 0.01 and identical
    report(4, ok, f"weights == 1/count: {weights_ok}; overshoot KS {ks:.4f} at 1e5; "
                  f"p_c=1 mixture byte-identical: {identical}")
    assert ok


# -- 5. mixture beats pooled on a synthetic mixture ----------------------------------

MIXTURE_SEEDS = range(1, 11)
MIXTURE_CONFIG = """\
[paths]
sites = {d}/sites.csv
fields = {d}/fields.scef
regions = {d}/regions.csv
output = {d}
[run]
seed = {seed}
[synth]
nx = 12
ny = 12
n_fields = 4000
region_sizes = 4,16,36,64
[marginal]
subset_size = 100
[dependence]
d_s = 1000
maxfev = 1000
se_method = none
[simulation]
n_s = 20
n_c = 50
b = 5000
[bootstrap]
n_boot = 20
[diagnostics]
chi_sites = 40
transect_origin = 70
transect_n_sims = 2000
"""
CHAIN = [["synth"], ["classify"], ["fit", "--class", "C"], ["fit", "--class", "N"], ["fit", "--class", "pooled"],
         ["simulate"], ["diagnose"]]


def run_chain(d: Path, config: str, threads: int = 1) -> None:
    d.mkdir(parents=True, exist_ok=True)
    cfg = d / "cfg.ini"
    cfg.write_text(config.format(d=d))
    for step in CHAIN:
        code = main(step + ["--config", str(cfg), "--threads", str(threads), "--force"])
        if code != 0:
            raise RuntimeError(f"{step} exited with {code}")


def mixture_seed(seed: int) -> dict:
    warnings.simplefilter("ignore")
    with tempfile.TemporaryDirectory() as tmp:
        d = Path(tmp)
        run_chain(d, MIXTURE_CONFIG.replace("{seed}", str(seed)))
        summary = json.loads((d / "diagnose_summary.jsonl").read_text().splitlines()[-1])
    lam = summary["lambda1"]
    regions = summary["regions"]
    wins = sum(lam[f"mixture:{a}"] <= lam[f"pooled:{a}"] for a in regions)
    return dict(seed=seed, wins=wins, n=len(regions), lam=lam)


def test_criterion_5_mixture_beats_pooled():
    t0 = time.perf_counter()
    runs = _pool_map(mixture_seed, list(MIXTURE_SEEDS))
    elapsed = time.perf_counter() - t0
    for r in runs:
        RESULTS.append(f"  seed {r['seed']:2d}: mixture <= pooled on {r['wins']}/{r['n']} regions")
    rate = float(np.mean([r["wins"] >= 3 for r in runs]))
    ok = rate >= 0.8 and elapsed < 7200
    report(5, ok, f"mixture Lambda1 <= pooled on >= 3 of 4 regions in {rate:.0%} of {len(runs)} seeds; "
                  f"{elapsed / 60:.1f} min")
    assert ok


# -- 6. chi_q ordering -----------------------------------------------------------------

def test_criterion_6_chi_ordering():
    short = chi_q_model(REFERENCE_PARAMS["C"], 50.0, 0.98, n=10_000, seed=6)
    long = chi_q_model(REFERENCE_PARAMS["N"], 50.0, 0.98, n=10_000, seed=6)
    ok = long - short > 0.05
    report(6, ok, f"chi_0.98(50 km): long-range {long:.3f} vs short-range {short:.3f} at 1e4 fields")
    assert ok


# -- 7. classification suite ------------------------------------------------------------

def test_criterion_7_classification():
    from test_classification import check_against_oracle
    sites = SiteSet.regular_grid(9, 9, 2.2)
    rng = np.random.default_rng(77)
    mismatches = 0
    n_conv = 0
    for k in range(300):
        wet = rng.random((9, 9)) < (0.6, 0.05, 0.3)[k % 3]
        grid = rng.exponential((0.3, 2.0, 1.5)[k % 3], (9, 9)) * wet
        try:
            n_conv += check_against_oracle(sites, grid)[0] == "C"
        except AssertionError:
            mismatches += 1
    zero_ok = classify_field(np.zeros(81), sites)[0] == "N"
    p_ok = True
    for n in (1, 7, 137, 1000):
        labels = rng.choice(np.array(["C", "N"]), n)
        p_ok &= estimate_p_c(labels) == np.count_nonzero(labels == "C") / n
    suite_ok, tail = run_suite("tests/test_classification.py")
    ok = mismatches == 0 and n_conv > 0 and zero_ok and p_ok and suite_ok
    report(7, ok, f"300 constructed 9x9 fields ({n_conv} convective) vs brute force: {mismatches} mismatches; "
                  f"all-zero -> N: {zero_ok}; p_C exact: {p_ok}; unit suite: {tail}")
    assert ok


# -- 8. marginal suite ------------------------------------------------------------------

def test_criterion_8_marginals():
    from helpers import INTERCEPT, constant_marginal
    from test_marginals import _gpd_series, gpd_sample, one_site, score_error
    rng = np.random.default_rng(8)
    mono, jump, rt = True, 0.0, 0.0
    for _ in range(50):
        p, lam = rng.uniform(0, 0.6), rng.uniform(0.001, 0.2)
        m = constant_marginal(p=p, q=rng.uniform(0.5, 5), ups=rng.uniform(0.2, 3), xi=rng.uniform(-0.3, 0.5),
                              lam=lam, seed=int(rng.integers(1000)))
        q = m.q[0]
        below, at, above = m.cdf(0, np.array([q - 1e-12, q, q + 1e-12]))
        jump = max(jump, abs(above - below), abs(at - below))
        mono &= bool(np.all(np.diff(m.cdf(0, np.sort(rng.uniform(0, 5 * q, 2000)))) >= 0))
        u = rng.uniform(p + 1e-9, 1 - 1e-9, 1000)
        rt = max(rt, float(np.max(np.abs(m.cdf(0, m.quantile(0, u)) - u))))
    worst_score = max(score_error(seed) for seed in range(20))
    series, qs = _gpd_series(gpd_sample(np.random.default_rng(88), 10_000, 2.0, 0.2))
    ups, xi, _ = fit_gpd_surface(series, qs, INTERCEPT)
    refit_err = max(abs(ups(one_site())[0] / 2.0 - 1), abs(xi / 0.2 - 1))
    suite_ok, tail = run_suite("tests/test_marginals.py")
    ok = mono and jump < 1e-9 and worst_score < 1e-5 and rt < 1e-9 and refit_err < 0.1 and suite_ok
    report(8, ok, f"CDF monotone: {mono}, largest gap at the threshold {jump:.1e}; score rel. error "
                  f"{worst_score:.1e}; quantile/CDF round trip {rt:.1e}; GPD refit error {refit_err:.1%}; "
                  f"unit suite: {tail}")
    assert ok


# -- 9. determinism ---------------------------------------------------------------------

DETERMINISM_CONFIG = MIXTURE_CONFIG.replace("nx = 12", "nx = 10").replace("ny = 12", "ny = 10") \
    .replace("n_fields = 4000", "n_fields = 800").replace("b = 5000", "b = 400") \
    .replace("region_sizes = 4,16,36,64", "region_sizes = 4,9,25,49").replace("n_boot = 20", "n_boot = 4") \
    .replace("transect_origin = 70", "transect_origin = 55").replace("transect_n_sims = 2000", "transect_n_sims = 300") \
    .replace("d_s = 1000", "d_s = 120").replace("maxfev = 1000", "maxfev = 80").replace("{seed}", "3")


def test_criterion_9_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        d = Path(tmp) / "run"
        outputs = []
        for threads in (1, 1, 4):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                run_chain(d, DETERMINISM_CONFIG, threads=threads)
            outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
            for p in d.iterdir():
                p.unlink()
    same = outputs[0] == outputs[1]
    threads = outputs[0] == outputs[2]
    ok = same and threads
    report(9, ok, f"{len(outputs[0])} files from every command identical on repeat: {same}; "
                  f"with 4 threads: {threads}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
