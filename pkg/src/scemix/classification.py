"""Convective / non-convective field classification.

Sites are flagged convective when a large share of the local precipitation
gradients are steep; a field containing any flagged site is convective.
Gradients are absolute differences between 4-adjacent grid cells inside the
``n_g`` by ``n_g`` window centred on each site, each unordered pair counted
once. Sites whose window does not fit on the grid are never flagged.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyField, EmptyLabels, NoConvectiveFields, NonGriddedSites
from .geometry import SiteSet, haversine, lattice_indices
from .rng import as_generator

ZERO_FLOOR = 1e-5
CONVECTIVE = "C"
NON_CONVECTIVE = "N"


@dataclass(frozen=True)
class ClassifierHyper:
    g_l: float = 0.01
    g_u: float = 1.0
    p_star: float = 0.2
    n_g: int = 9

    def __post_init__(self):
        if not self.g_l > 0:
            raise ValueError("g_l must be positive")
        if not self.g_u > self.g_l:
            raise ValueError("g_u must exceed g_l")
        if not 0.0 <= self.p_star <= 1.0:
            raise ValueError("p_star must lie in [0, 1]")
        if int(self.n_g) != self.n_g or self.n_g < 3 or self.n_g % 2 == 0:
            raise ValueError("n_g must be an odd integer >= 3")


class FieldSeries:
    """Observations ``values[t, i]`` (mm/hr) at the sites of ``sites``.

    Values below 1e-5 are floored to exactly zero on construction.
    """

    def __init__(self, sites: SiteSet, values, labels=None, site_flags=None):
        values = np.array(values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[1] != len(sites):
            raise ValueError(f"values must have shape (n, {len(sites)})")
        if np.any(~np.isfinite(values)) or np.any(values < 0):
            raise ValueError("values must be finite and non-negative")
        values[values < ZERO_FLOOR] = 0.0
        self.sites = sites
        self.values = values
        self.labels = None if labels is None else np.asarray(labels, dtype="<U1")
        if self.labels is not None:
            if self.labels.shape != (values.shape[0],):
                raise ValueError("labels must cover every time")
            if not np.all(np.isin(self.labels, [CONVECTIVE, NON_CONVECTIVE])):
                raise ValueError("labels must be 'C' or 'N'")
        self.site_flags = None if site_flags is None else np.asarray(site_flags, dtype=bool)
        if self.site_flags is not None and self.site_flags.shape != values.shape:
            raise ValueError("site_flags must match values")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def select(self, times) -> "FieldSeries":
        times = np.asarray(times)
        return FieldSeries(
            self.sites,
            self.values[times],
            None if self.labels is None else self.labels[times],
            None if self.site_flags is None else self.site_flags[times],
        )

    def of_class(self, label: str) -> "FieldSeries":
        if self.labels is None:
            raise ValueError("series has no labels")
        return self.select(np.flatnonzero(self.labels == label))


class _Grid:
    """Lattice layout of a SiteSet, cached per classification run."""

    def __init__(self, sites: SiteSet):
        rows, cols = lattice_indices(sites.lon, sites.lat)
        self.rows = rows
        self.cols = cols
        self.shape = (rows.max() + 1, cols.max() + 1)
        occ = np.zeros(self.shape, dtype=int)
        np.add.at(occ, (rows, cols), 1)
        if occ.max() > 1:
            raise NonGriddedSites("two sites share a lattice cell")
        self.present = occ == 1

    def to_grid(self, field: np.ndarray) -> np.ndarray:
        g = np.full(self.shape, np.nan)
        g[self.rows, self.cols] = field
        return g


def _box_sum(a: np.ndarray, k_rows: int, k_cols: int) -> np.ndarray:
    """Sum of ``a`` over every (k_rows, k_cols) window, anchored top-left."""
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = np.cumsum(np.cumsum(a, axis=0), axis=1)
    return (c[k_rows:, k_cols:] - c[:-k_rows, k_cols:] - c[k_rows:, :-k_cols] + c[:-k_rows, :-k_cols])


def _flags_on_grid(g: np.ndarray, present: np.ndarray, h: ClassifierHyper) -> np.ndarray:
    n_g = int(h.n_g)
    nr, nc = g.shape
    flags = np.zeros(g.shape, dtype=bool)
    if nr < n_g or nc < n_g:
        return flags
    v = np.where(present, g, 0.0)
    dh = np.abs(v[:, 1:] - v[:, :-1])
    dv = np.abs(v[1:, :] - v[:-1, :])
    # window anchored at (r, c) spans rows r..r+n_g-1, cols c..c+n_g-1
    hi = _box_sum((dh >= h.g_u).astype(float), n_g, n_g - 1) + _box_sum((dv >= h.g_u).astype(float), n_g - 1, n_g)
    lo = _box_sum((dh >= h.g_l).astype(float), n_g, n_g - 1) + _box_sum((dv >= h.g_l).astype(float), n_g - 1, n_g)
    full = _box_sum((~present).astype(float), n_g, n_g) == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), 0.0)
    k = n_g // 2
    flags[k:nr - k, k:nc - k] = full & (p >= h.p_star)
    return flags & present


def classify_field(field_at_t, sites: SiteSet, h: ClassifierHyper = ClassifierHyper(), _grid: _Grid | None = None):
    """Return ``(label, site_flags)`` for one field."""
    field_at_t = np.asarray(field_at_t, dtype=float)
    if field_at_t.size == 0 or len(sites) == 0:
        raise EmptyField("field has no sites")
    if field_at_t.shape != (len(sites),):
        raise ValueError("field length must match the number of sites")
    grid = _grid or _Grid(sites)
    if not np.any(field_at_t > 0):
        return NON_CONVECTIVE, np.zeros(len(sites), dtype=bool)
    flags_grid = _flags_on_grid(grid.to_grid(field_at_t), grid.present, h)
    flags = flags_grid[grid.rows, grid.cols]
    return (CONVECTIVE if flags.any() else NON_CONVECTIVE), flags


def classify_series(series: FieldSeries, h: ClassifierHyper = ClassifierHyper(), threads: int = 1) -> FieldSeries:
    """Label every time slice; returns a new series carrying labels and flags."""
    if series.n == 0:
        raise EmptyField("series has no fields")
    grid = _Grid(series.sites)

    def one(t):
        return classify_field(series.values[t], series.sites, h, grid)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(one, range(series.n)))
    else:
        out = [one(t) for t in range(series.n)]
    labels = np.array([o[0] for o in out], dtype="<U1")
    flags = np.stack([o[1] for o in out])
    return FieldSeries(series.sites, series.values, labels, flags)


def estimate_p_c(labels: Sequence[str]) -> float:
    """Empirical convective proportion |C| / (|C| + |N|)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyLabels("no labels")
    return float(np.count_nonzero(labels == CONVECTIVE)) / labels.size


def convective_contribution(series: FieldSeries, r: float, M: int = 50, seed=0, quantile: float = 0.9) -> np.ndarray:
    """Convective share of extreme disc totals over convective fields.

    For every convective field, ``M`` disc centres are drawn uniformly in the
    lon/lat bounding box of the sites (centres whose radius-``r`` disc holds
    no site are redrawn). Disc totals above the empirical ``quantile`` of all
    totals are kept and the ratio convective-total / total returned.
    ``r = inf`` uses the whole domain.
    """
    if series.labels is None or series.site_flags is None:
        raise ValueError("series needs labels and site_flags")
    conv = np.flatnonzero(series.labels == CONVECTIVE)
    if conv.size == 0:
        raise NoConvectiveFields("no convective fields")
    rng = as_generator(seed)
    sites = series.sites
    lon_lo, lon_hi = sites.lon.min(), sites.lon.max()
    lat_lo, lat_hi = sites.lat.min(), sites.lat.max()

    def draw_masks(count):
        masks = []
        while len(masks) < count:
            clon = rng.uniform(lon_lo, lon_hi)
            clat = rng.uniform(lat_lo, lat_hi)
            m = haversine(clon, clat, sites.lon, sites.lat) <= r
            if m.any():
                masks.append(m)
        return np.array(masks, dtype=float)

    totals = np.empty((conv.size, M))
    conv_totals = np.empty((conv.size, M))
    for a, t in enumerate(conv):
        if np.isinf(r):
            masks = np.ones((M, sites.lon.size))
        else:
            masks = draw_masks(M)
        y = series.values[t]
        totals[a] = masks @ y
        conv_totals[a] = masks @ (y * series.site_flags[t])
    thresh = np.quantile(totals.ravel(), quantile)
    keep = totals > thresh
    return conv_totals[keep] / totals[keep]
