"""Command-line front end: ``scemix classify | fit | simulate | diagnose | synth``.

Settings come from an INI-style config file (``--config``) with
``--set section.key=value`` overrides. Every output carries the config
digest; inputs written by an earlier command with a different digest are
rejected. Exit codes: 0 success, 2 usage, 3 data, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .classification import ClassifierHyper, FieldSeries, classify_series, estimate_p_c
from .dependence.fit import DependenceFit
from .diagnostics import (BootstrapPlan, aggregate_qq, chi_q_empirical, chi_q_model, conditional_transect,
                          nonconvective_share, pooled_qq)
from .errors import DigestMismatch, LabelsRequired, SceError, UsageError
from .geometry import SiteSet, haversine
from .pipeline import (FittedProcess, ProcessSettings, SimulationSettings, bootstrap_lambda, build_regions,
                       fit_process, mixture_ensemble, observed_aggregates, quantile_levels, region_columns,
                       simulate_fitted)
from .rng import SCHEME, stream
from .simulation import SimulationEnsemble, aggregate, exceedance_gap
from .surfaces import BasisConfig
from .synth import SynthProcess, nested_regions, simulate_mixture

DEFAULTS = {
    "paths": {"sites": "sites.csv", "fields": "fields.csv", "labels": "", "regions": "regions.csv",
              "output": "out"},
    "run": {"seed": "0", "fields_per_year": "2160"},
    "classifier": {"g_l": "0.01", "g_u": "1", "p_star": "0.2", "n_g": "9"},
    "marginal": {"lambda": "0.005", "subset_size": "500", "k_loc": "4", "k_elev": "4", "use_elevation": "true"},
    "dependence": {"u_level_C": "0.96", "u_level_N": "0.99", "u_level_E": "0.99", "d_s": "5000",
                   "h_max_C": "35", "h_max_N": "250", "h_max_E": "35", "maxfev": "3000",
                   "se_method": "hessian"},
    "simulation": {"tau": "27.5", "n_s": "500", "n_c": "1250", "noise_sd": "", "b": "550000",
                   "b_prime_factor": "8", "v_level_C": "", "v_level_N": "", "v_level_E": "", "years": "20"},
    "bootstrap": {"block": "48", "n_boot": "250"},
    "diagnostics": {"p1": "0.99", "m": "432", "chi_q": "0.98,0.995", "chi_sites": "400", "chi_bin_km": "5",
                    "transect_origin": "", "transect_levels": "1,50", "transect_n_sims": "50000",
                    "nonconvective_levels": "0.99,0.995"},
    "synth": {"nx": "20", "ny": "20", "spacing_km": "2.2", "n_fields": "5000", "p_c": "0.4",
              "region_sizes": "9,36,100,196",
              "C_p_dry": "0.8", "C_scale": "1.5", "C_xi": "0.2", "C_range_km": "6", "C_smoothness": "1",
              "N_p_dry": "0.5", "N_scale": "0.6", "N_xi": "-0.05", "N_range_km": "60", "N_smoothness": "1"},
}
# settings that cannot change results are left out of the digest
NOT_DIGESTED = {("paths", "output")}
PROCESS_OF_CLASS = {"C": "C", "N": "N", "pooled": "E"}


class Config:
    def __init__(self, parser: configparser.ConfigParser):
        self.p = parser

    @classmethod
    def load(cls, path=None, overrides=()) -> "Config":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_dict(DEFAULTS)
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
            try:
                cp.read_string(text, source=str(path))
            except configparser.Error as exc:
                raise UsageError(f"bad config file: {exc}") from None
        for item in overrides:
            key, sep, value = item.partition("=")
            sec, dot, name = key.partition(".")
            if not (sep and dot):
                raise UsageError(f"--set expects section.key=value, got {item!r}")
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, name, value)
        for sec in cp.sections():
            known = DEFAULTS.get(sec)
            if known is None:
                raise UsageError(f"unknown config section [{sec}]")
            for name in cp[sec]:
                if name not in known:
                    raise UsageError(f"unknown config key {sec}.{name}")
        return cls(cp)

    def get(self, sec, key) -> str:
        return self.p.get(sec, key).strip()

    def num(self, sec, key, kind=float):
        raw = self.get(sec, key)
        try:
            return kind(raw)
        except ValueError:
            raise UsageError(f"{sec}.{key} = {raw!r} is not a valid {kind.__name__}") from None

    def opt(self, sec, key, kind=float):
        return None if self.get(sec, key) == "" else self.num(sec, key, kind)

    def floats(self, sec, key) -> list[float]:
        raw = self.get(sec, key)
        try:
            return [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"{sec}.{key} must be a comma-separated list of numbers") from None

    def flag(self, sec, key) -> bool:
        try:
            return self.p.getboolean(sec, key)
        except ValueError:
            raise UsageError(f"{sec}.{key} must be a boolean") from None

    def digest(self) -> str:
        items = []
        for sec in sorted(self.p.sections()):
            for key in sorted(self.p[sec]):
                if (sec, key) not in NOT_DIGESTED:
                    items.append(f"{sec}.{key}={self.get(sec, key)}")
        return hashlib.sha256("\n".join(items).encode("utf-8")).hexdigest()[:16]

    @property
    def seed(self) -> int:
        return self.num("run", "seed", int)


class Run:
    """One command invocation: config, output directory and provenance header."""

    def __init__(self, args, command: str):
        self.cfg = Config.load(args.config, args.set or [])
        if args.seed is not None:
            self.cfg.p.set("run", "seed", str(args.seed))
        if args.out is not None:
            self.cfg.p.set("paths", "output", args.out)
        self.threads = max(1, int(args.threads))
        self.force = bool(args.force)
        self.command = command
        self.digest = self.cfg.digest()
        self.out = Path(self.cfg.get("paths", "output"))
        self.out.mkdir(parents=True, exist_ok=True)
        self.meta = {"config_digest": self.digest, "seed": self.cfg.seed, "rng": SCHEME, "command": command}

    def path(self, name: str) -> Path:
        return self.out / name

    def claim(self, *names) -> list[Path]:
        paths = [self.path(n) for n in names]
        if not self.force:
            for p in paths:
                if p.exists():
                    raise UsageError(f"{p} exists; pass --force to overwrite")
        return paths

    def check(self, meta: dict, source) -> None:
        got = meta.get("config_digest")
        if got is not None and got != self.digest:
            raise DigestMismatch(f"{source} was written with config digest {got}, current run is {self.digest}")

    def subseed(self, *parts) -> int:
        return int(stream(self.cfg.seed, *parts).integers(2 ** 63))

    def input_path(self, key: str) -> Path:
        raw = self.cfg.get("paths", key)
        if not raw:
            raise UsageError(f"paths.{key} is not set")
        return Path(raw)

    def sites(self) -> SiteSet:
        return io.read_sites(self.input_path("sites"))

    def series(self, with_labels: bool = False) -> FieldSeries:
        sites = self.sites()
        values = io.read_fields(self.input_path("fields"), sites)
        labels = None
        if with_labels:
            labels = self.labels(values.shape[0])
        try:
            return FieldSeries(sites, values, labels)
        except ValueError as exc:
            raise io.FormatError(str(exc), self.input_path("fields")) from None

    def labels(self, n: int):
        raw = self.cfg.get("paths", "labels")
        path = Path(raw) if raw else self.path("labels.csv")
        if not path.exists():
            raise LabelsRequired(f"labels file {path} not found; run classify first")
        labels, meta = io.read_labels(path, n)
        self.check(meta, path)
        return labels

    def regions(self, sites: SiteSet) -> dict:
        return io.read_regions(self.input_path("regions"), sites)

    def summary(self, name: str, record: dict) -> None:
        line = json.dumps({**self.meta, **record}, sort_keys=True)
        io.write_text(self.path(name), line + "\n")
        print(line)


# ---------------------------------------------------------------------------
# commands

def cmd_classify(run: Run) -> None:
    c = run.cfg
    hyper = ClassifierHyper(c.num("classifier", "g_l"), c.num("classifier", "g_u"),
                            c.num("classifier", "p_star"), c.num("classifier", "n_g", int))
    labels_p, flags_p, summary_p = run.claim("labels.csv", "flags.csv", "classify_summary.jsonl")
    series = run.series()
    out = classify_series(series, hyper, threads=run.threads)
    io.write_labels(labels_p, out.labels, run.meta)
    t, s = np.nonzero(out.site_flags)
    ids = series.sites.ids
    io.write_csv(flags_p, ["t", "site_id"], ((int(a), int(ids[b])) for a, b in zip(t, s)), run.meta)
    n_c = int(np.count_nonzero(out.labels == "C"))
    run.summary(summary_p.name, {"g_l": hyper.g_l, "g_u": hyper.g_u, "p_star": hyper.p_star, "n_g": hyper.n_g,
                                 "n_C": n_c, "n_N": int(out.n - n_c), "p_C": estimate_p_c(out.labels)})


def _settings(cfg: Config, process: str, threads: int) -> ProcessSettings:
    basis = BasisConfig(cfg.num("marginal", "k_loc", int), cfg.num("marginal", "k_elev", int),
                        cfg.flag("marginal", "use_elevation"))
    return ProcessSettings(u_level=cfg.num("dependence", f"u_level_{process}"),
                           h_max=cfg.num("dependence", f"h_max_{process}"), d_s=cfg.num("dependence", "d_s", int),
                           lam=cfg.num("marginal", "lambda"), subset_size=cfg.num("marginal", "subset_size", int),
                           basis=basis, maxfev=cfg.num("dependence", "maxfev", int),
                           se_method=cfg.get("dependence", "se_method"), threads=threads)


def cmd_fit(run: Run, klass: str) -> None:
    process = PROCESS_OF_CLASS[klass]
    m_path, d_path = run.claim(f"marginal_{process}.txt", f"dependence_{process}.txt")
    series = run.series(with_labels=process != "E")
    fp = fit_process(series, process, _settings(run.cfg, process, run.threads), seed=run.subseed("fit", process))
    meta = {**run.meta, "process": process}
    io.write_marginal(m_path, fp.marginal, meta)
    fit = fp.dependence
    io.write_dependence(d_path, io.DependenceRecord(fit.params, fp.u_level, run.cfg.seed, fp.triples.digest(),
                                                    fit.stderr), meta)
    run.summary(f"fit_{process}_summary.jsonl", {"process": process, "nll": fit.nll, "converged": bool(fit.converged),
                                                  "n_eval": fit.n_eval, "se_method": fit.se_method,
                                                  "n_fields": int(series.n if process == "E"
                                                                  else np.count_nonzero(series.labels == process))})


def _load_process(run: Run, process: str) -> FittedProcess:
    m_path, d_path = run.path(f"marginal_{process}.txt"), run.path(f"dependence_{process}.txt")
    if not (m_path.exists() and d_path.exists()):
        raise UsageError(f"model files for process {process} not found in {run.out}; run fit first")
    marginal, mmeta = io.read_marginal(m_path)
    rec, dmeta = io.read_dependence(d_path)
    run.check(mmeta, m_path)
    run.check(dmeta, d_path)
    fit = DependenceFit(rec.params, rec.stderr, True, math.nan, 0)
    return FittedProcess(process, marginal, fit, None, rec.u_level)


def _sim_settings(cfg: Config, threads: int) -> SimulationSettings:
    return SimulationSettings(cfg.num("simulation", "tau"), cfg.num("simulation", "n_s", int),
                              cfg.num("simulation", "n_c", int), cfg.opt("simulation", "noise_sd"),
                              cfg.num("simulation", "b", int), cfg.num("simulation", "b_prime_factor", int), threads)


def _pipelines(mode: str) -> list[str]:
    return {"mixture": ["mixture"], "pooled": ["pooled"], "both": ["mixture", "pooled"]}[mode]


def cmd_simulate(run: Run, mode: str) -> None:
    c = run.cfg
    pipes = _pipelines(mode)
    names = []
    if "mixture" in pipes:
        names += ["ensemble_C.scee", "ensemble_N.scee", "ensemble_M.scee"]
    if "pooled" in pipes:
        names += ["ensemble_E.scee"]
    names += [n + ".csv" for n in names] + ["aggregate_quantiles.csv", "exceedance_gap.csv",
                                            "simulate_summary.jsonl"]
    run.claim(*names)
    series = run.series(with_labels="mixture" in pipes)
    regions = run.regions(series.sites)
    A = np.unique(np.concatenate(list(regions.values())))
    settings = _sim_settings(c, run.threads)
    built = build_regions(series.sites, A, settings, run.subseed("regions"))
    probs = quantile_levels(c.num("run", "fields_per_year"), c.num("simulation", "years"))
    ensembles = {}
    gaps = []

    def one(process):
        fp = _load_process(run, process)
        sub = series if process == "E" else series.of_class(process)
        ens = simulate_fitted(fp, built[process], sub.values, settings, seed=run.subseed("simulate", process),
                              v_level=c.opt("simulation", f"v_level_{process}"))
        io.write_ensemble(run.path(f"ensemble_{process}.scee"), ens, {**run.meta, "process": process})
        lf = fp.marginal.to_laplace(sub.values)
        gaps.append((process, exceedance_gap(lf.x, built[process].S_tau, ens.v)))
        return ens

    if "mixture" in pipes:
        conv, nonconv = one("C"), one("N")
        mix = mixture_ensemble(conv, nonconv, series.labels, run.subseed("mix"))
        io.write_ensemble(run.path("ensemble_M.scee"), mix, {**run.meta, "process": "M"})
        ensembles["mixture"] = mix
    if "pooled" in pipes:
        ensembles["pooled"] = one("E")
    rows = []
    for pipe, ens in ensembles.items():
        cols = region_columns(ens, regions)
        for name, idx in cols.items():
            q = np.quantile(aggregate(ens.values, idx), probs)
            rows += [(pipe, name, float(p), float(v)) for p, v in zip(probs, q)]
    io.write_csv(run.path("aggregate_quantiles.csv"), ["pipeline", "region", "p", "quantile"], rows, run.meta)
    io.write_csv(run.path("exceedance_gap.csv"), ["process", "gap"], [(p, float(g)) for p, g in gaps], run.meta)
    run.summary("simulate_summary.jsonl", {"pipelines": pipes, "b": settings.b, "n_regions": len(regions),
                                           "S_tau": int(built["C"].S_tau.size), "n_c": int(built["N"].n_c)})


def _ensemble(run: Run, name: str) -> SimulationEnsemble:
    path = run.path(f"ensemble_{name}.scee")
    if not path.exists():
        raise UsageError(f"{path} not found; run simulate first")
    f = io.read_ensemble(path)
    run.check(f.meta, path)
    return SimulationEnsemble(f.values, f.values, f.cond_site, f.weights, f.labels, f.v, f.seed, f.S_tau)


def _chi_rows(series: FieldSeries, qs, n_sites: int, bin_km: float, seed: int):
    sites = series.sites
    rng = stream(seed, "chi-sites")
    pick = np.sort(rng.choice(len(sites), size=min(n_sites, len(sites)), replace=False))
    a, b = np.triu_indices(pick.size, 1)
    h = haversine(sites.lon[pick[a]], sites.lat[pick[a]], sites.lon[pick[b]], sites.lat[pick[b]])
    bins = np.floor(h / bin_km).astype(int)
    rows = []
    for q in qs:
        chi = np.full(a.size, np.nan)
        for k in range(a.size):
            try:
                chi[k] = chi_q_empirical(series.values[:, pick[a[k]]], series.values[:, pick[b[k]]], q)
            except SceError:
                pass
        for bin_ in np.unique(bins):
            sel = (bins == bin_) & np.isfinite(chi)
            if sel.any():
                rows.append(("observed", float(q), float(bin_ * bin_km), float((bin_ + 1) * bin_km),
                             int(sel.sum()), float(chi[sel].mean())))
    return rows


def cmd_diagnose(run: Run, mode: str) -> None:
    c = run.cfg
    pipes = _pipelines(mode)
    series = run.series(with_labels="mixture" in pipes)
    regions = run.regions(series.sites)
    p1, m = c.num("diagnostics", "p1"), c.num("diagnostics", "m", int)
    plan = BootstrapPlan(series.n, c.num("bootstrap", "block"), c.num("bootstrap", "n_boot", int),
                         run.subseed("bootstrap"))
    obs = observed_aggregates(series.values, regions)
    ens = {"mixture": _ensemble(run, "M")} if "mixture" in pipes else {}
    if "pooled" in pipes:
        ens["pooled"] = _ensemble(run, "E")
    names = [f"qq_{p}_{r}.csv" for p in ens for r in regions] + ["lambda_table.csv", "chi.csv",
                                                                 "diagnose_summary.jsonl"]
    if "mixture" in ens:
        names.append("nonconvective_share.csv")
    run.claim(*names)
    lam_rows = []
    for pipe, e in ens.items():
        cols = region_columns(e, regions)
        for r, idx in cols.items():
            model = aggregate(e.values, idx)
            report = aggregate_qq(model, obs[r], p1, m)
            io.write_qq(run.path(f"qq_{pipe}_{r}.csv"), report, {**run.meta, "pipeline": pipe, "region": r})
            boot = bootstrap_lambda(model, obs[r], plan, p1, m)
            lo1, med1, hi1 = np.quantile(boot[:, 0], [0.025, 0.5, 0.975])
            lo2, med2, hi2 = np.quantile(boot[:, 1], [0.025, 0.5, 0.975])
            lam_rows.append((r, pipe, "observed-bootstrap", report.lambda1, float(med1), float(lo1), float(hi1),
                             report.lambda2, float(med2), float(lo2), float(hi2)))
    io.write_csv(run.path("lambda_table.csv"),
                 ["region", "pipeline", "layer", "lambda1", "lambda1_median", "lambda1_lo", "lambda1_hi",
                  "lambda2", "lambda2_median", "lambda2_lo", "lambda2_hi"], lam_rows, run.meta)
    if "mixture" in ens:
        levels = c.floats("diagnostics", "nonconvective_levels")
        rows = []
        for r, idx in region_columns(ens["mixture"], regions).items():
            share = nonconvective_share(ens["mixture"].values, ens["mixture"].labels, idx, levels)
            rows += [(r, float(k), float(v)) for k, v in share.items()]
        io.write_csv(run.path("nonconvective_share.csv"), ["region", "level", "share_N"], rows, run.meta)
    rows = _chi_rows(series, c.floats("diagnostics", "chi_q"), c.num("diagnostics", "chi_sites", int),
                     c.num("diagnostics", "chi_bin_km"), run.subseed("chi"))
    processes = [p for p in ("C", "N", "E") if run.path(f"dependence_{p}.txt").exists()]
    models = {p: _load_process(run, p) for p in processes}
    bins = sorted({(r[2], r[3]) for r in rows})
    for p, fp in models.items():
        for q in c.floats("diagnostics", "chi_q"):
            for lo, hi in bins:
                val = chi_q_model(fp.dependence.params, 0.5 * (lo + hi), q, 10_000, run.subseed("chi-model", p))
                rows.append((f"model_{p}", float(q), lo, hi, 0, val))
    io.write_csv(run.path("chi.csv"), ["source", "q", "h_lo", "h_hi", "n_pairs", "chi"], rows, run.meta)
    extra = {}
    for p, fp in models.items():
        sub = series if p == "E" or series.labels is None else series.of_class(p)
        path = run.claim(f"marginal_qq_{p}.csv")[0]
        report = pooled_qq(fp.marginal, sub, plan.n_boot, plan.expected_block, run.subseed("pooled-qq", p))
        io.write_qq(path, report, {**run.meta, "process": p})
        extra[f"marginal_lambda1_{p}"] = report.lambda1
        origin = c.opt("diagnostics", "transect_origin", int)
        if origin is not None:
            ids = list(fp.marginal.sites.ids)
            if origin not in ids:
                raise UsageError(f"transect origin {origin} is not a site id")
            s_o = ids.index(origin)
            lat = fp.marginal.sites.lat
            transect = np.flatnonzero(np.isclose(lat, lat[s_o], atol=1e-9))
            transect = transect[np.argsort(fp.marginal.sites.lon[transect])]
            for years in c.floats("diagnostics", "transect_levels"):
                level = fp.marginal.return_level(s_o, years, c.num("run", "fields_per_year"))
                summ = conditional_transect(fp.marginal, fp.dependence.params, s_o, transect, level,
                                            c.num("diagnostics", "transect_n_sims", int),
                                            run.subseed("transect", p, int(years * 1000)))
                path = run.claim(f"transect_{p}_{years:g}y.csv")[0]
                io.write_csv(path, ["site_id", "distance_km", "median", "lo", "hi"],
                             [(int(ids[s]), float(d), float(a), float(b), float(e))
                              for s, d, a, b, e in zip(summ.sites, summ.distance, summ.median, summ.lo, summ.hi)],
                             {**run.meta, "process": p, "level": fmt_float(level)})
    run.summary("diagnose_summary.jsonl", {"pipelines": list(ens), "regions": list(regions),
                                           "lambda1": {f"{r[1]}:{r[0]}": r[3] for r in lam_rows}, **extra})


def fmt_float(x: float) -> str:
    return io.fmt(x)


def cmd_synth(run: Run) -> None:
    c = run.cfg

    def proc(prefix):
        return SynthProcess(c.num("synth", f"{prefix}_p_dry"), c.num("synth", f"{prefix}_scale"),
                            c.num("synth", f"{prefix}_xi"), c.num("synth", f"{prefix}_range_km"),
                            c.num("synth", f"{prefix}_smoothness"))

    sites_p, fields_p, labels_p, regions_p = run.claim("sites.csv", "fields.scef", "true_labels.csv",
                                                       "regions.csv")
    sites = SiteSet.regular_grid(c.num("synth", "nx", int), c.num("synth", "ny", int),
                                 c.num("synth", "spacing_km"))
    values, labels = simulate_mixture(sites, proc("C"), proc("N"), c.num("synth", "p_c"),
                                      c.num("synth", "n_fields", int), run.subseed("synth"))
    io.write_sites(sites_p, sites, run.meta)
    io.write_fields_binary(fields_p, values)
    io.write_labels(labels_p, labels, run.meta)
    regions = nested_regions(sites, [int(v) for v in c.floats("synth", "region_sizes")])
    io.write_csv(regions_p, ["region", "site_id"],
                 [(name, int(sites.ids[i])) for name, idx in regions.items() for i in idx], run.meta)
    print(json.dumps({**run.meta, "n_fields": int(values.shape[0]), "n_sites": len(sites),
                      "n_C": int(np.count_nonzero(labels == "C"))}, sort_keys=True))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", help="output directory (overrides paths.output)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p = argparse.ArgumentParser(prog="scemix", description="Mixture modelling of extreme spatial rainfall aggregates.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("classify", parents=[common], help="label fields convective or non-convective")
    f = sub.add_parser("fit", parents=[common], help="fit marginal and dependence models for one class")
    f.add_argument("--class", dest="klass", choices=sorted(PROCESS_OF_CLASS), required=True)
    for name, text in (("simulate", "simulate extreme-field ensembles"), ("diagnose", "aggregate diagnostics")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--mode", choices=["mixture", "pooled", "both"], default="both")
    sub.add_parser("synth", parents=[common], help="generate a synthetic two-class data set")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        run = Run(args, args.command)
        if args.command == "classify":
            cmd_classify(run)
        elif args.command == "fit":
            cmd_fit(run, args.klass)
        elif args.command == "simulate":
            cmd_simulate(run, args.mode)
        elif args.command == "diagnose":
            cmd_diagnose(run, args.mode)
        else:
            cmd_synth(run)
    except SceError as exc:
        print(f"scemix: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"scemix: error: {exc}", file=sys.stderr)
        return 3
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"scemix: error: numerical failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"scemix: error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
