"""Sites, great-circle distances and the anisotropic distance metric.

Anisotropic distances are computed by mapping lon/lat to a local
equirectangular chart (km, centred on the site-set centroid), applying the
rotate-then-stretch transform there, mapping the transformed points back to
lon/lat and measuring great-circle distance between them. With ``theta = 0``
and ``L = 1`` the chart round trip is the identity, so the metric reduces to
plain great-circle distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NonGriddedSites

EARTH_RADIUS_KM = 6371.0088
LATTICE_TOL_DEG = 1e-6


@dataclass(frozen=True)
class Site:
    id: int
    lon: float
    lat: float
    elev: float = 0.0

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")


@dataclass(frozen=True)
class AnisotropyParams:
    theta: float = 0.0
    L: float = 1.0

    def __post_init__(self):
        if not -math.pi / 2 - 1e-12 <= self.theta <= 1e-12:
            raise ValueError(f"theta {self.theta} outside [-pi/2, 0]")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def is_isotropic(self) -> bool:
        return self.theta == 0.0 and self.L == 1.0


ISOTROPIC = AnisotropyParams()


@dataclass(frozen=True)
class Chart:
    """Equirectangular chart about ``(lon0, lat0)`` in km."""

    lon0: float
    lat0: float

    def forward(self, lon, lat):
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        x = EARTH_RADIUS_KM * math.cos(math.radians(self.lat0)) * np.radians(lon - self.lon0)
        y = EARTH_RADIUS_KM * np.radians(lat - self.lat0)
        return x, y

    def inverse(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lon = self.lon0 + np.degrees(x / (EARTH_RADIUS_KM * math.cos(math.radians(self.lat0))))
        lat = self.lat0 + np.degrees(y / EARTH_RADIUS_KM)
        return lon, lat


@dataclass
class SiteSet:
    sites: list[Site]
    grid_spacing_km: float | None = None
    _lon: np.ndarray = field(init=False, repr=False)
    _lat: np.ndarray = field(init=False, repr=False)
    _elev: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.sites:
            raise ValueError("SiteSet must be non-empty")
        ids = [s.id for s in self.sites]
        if len(set(ids)) != len(ids):
            raise ValueError("site ids must be unique")
        if self.grid_spacing_km is not None and not self.grid_spacing_km > 0:
            raise ValueError("grid_spacing_km must be positive")
        self._lon = np.array([s.lon for s in self.sites], dtype=float)
        self._lat = np.array([s.lat for s in self.sites], dtype=float)
        self._elev = np.array([s.elev for s in self.sites], dtype=float)
        if self.grid_spacing_km is not None:
            lattice_indices(self._lon, self._lat)

    @classmethod
    def from_arrays(cls, lon, lat, elev=None, ids=None, grid_spacing_km=None) -> "SiteSet":
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        elev = np.zeros_like(lon) if elev is None else np.asarray(elev, dtype=float)
        ids = np.arange(lon.size) if ids is None else np.asarray(ids)
        sites = [Site(int(i), float(a), float(b), float(e)) for i, a, b, e in zip(ids, lon, lat, elev)]
        return cls(sites, grid_spacing_km)

    @classmethod
    def regular_grid(cls, nx: int, ny: int, spacing_km: float, lon0: float = -1.0,
                     lat0: float = 52.0, elev=None) -> "SiteSet":
        """An ``nx`` by ``ny`` lattice, regular in lon/lat, centred on (lon0, lat0).

        Spacing in degrees is chosen so that neighbouring cells are
        ``spacing_km`` apart along the central parallel and meridian.
        """
        dlat = math.degrees(spacing_km / EARTH_RADIUS_KM)
        dlon = math.degrees(spacing_km / (EARTH_RADIUS_KM * math.cos(math.radians(lat0))))
        lons = lon0 + dlon * (np.arange(nx) - (nx - 1) / 2)
        lats = lat0 + dlat * (np.arange(ny) - (ny - 1) / 2)
        lon, lat = np.meshgrid(lons, lats)
        lon = lon.ravel()
        lat = lat.ravel()
        if elev is not None:
            elev = np.asarray(elev, dtype=float).ravel()
        return cls.from_arrays(lon, lat, elev, grid_spacing_km=spacing_km)

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def lon(self) -> np.ndarray:
        return self._lon

    @property
    def lat(self) -> np.ndarray:
        return self._lat

    @property
    def elev(self) -> np.ndarray:
        return self._elev

    @property
    def ids(self) -> np.ndarray:
        return np.array([s.id for s in self.sites])

    def chart(self) -> Chart:
        return Chart(float(np.mean(self._lon)), float(np.mean(self._lat)))

    def planar(self, chart: Chart | None = None) -> np.ndarray:
        """(d, 2) km coordinates in ``chart`` (default: own centroid chart)."""
        chart = chart or self.chart()
        x, y = chart.forward(self._lon, self._lat)
        return np.column_stack([x, y])

    def subset(self, idx) -> "SiteSet":
        return SiteSet([self.sites[i] for i in np.asarray(idx, dtype=int)])


def haversine(lon1, lat1, lon2, lat2):
    """Vectorised great-circle distance in km."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(a, dtype=float)) for a in (lon1, lat1, lon2, lat2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def great_circle_distance(a: Site, b: Site) -> float:
    return float(haversine(a.lon, a.lat, b.lon, b.lat))


def transform_coordinates(s, p: AnisotropyParams):
    """Rotate by ``theta`` then divide the second coordinate by ``L``.

    ``s`` may be a pair or an (n, 2) array.
    """
    s = np.asarray(s, dtype=float)
    c, sn = math.cos(p.theta), math.sin(p.theta)
    x, y = s[..., 0], s[..., 1]
    return np.stack([c * x - sn * y, (sn * x + c * y) / p.L], axis=-1)


def transformed_lonlat(lon, lat, p: AnisotropyParams, chart: Chart):
    """Map lon/lat through the chart, the anisotropy transform and back."""
    if p.is_isotropic:
        return np.asarray(lon, dtype=float), np.asarray(lat, dtype=float)
    x, y = chart.forward(lon, lat)
    st = transform_coordinates(np.stack([x, y], axis=-1), p)
    return chart.inverse(st[..., 0], st[..., 1])


def aniso_distance(a: Site, b: Site, p: AnisotropyParams, chart: Chart | None = None) -> float:
    """Anisotropic distance h(a, b).

    ``chart`` defaults to one centred midway between the two sites; pass the
    site-set chart to get distances consistent with a whole domain.
    """
    if chart is None:
        chart = Chart((a.lon + b.lon) / 2, (a.lat + b.lat) / 2)
    lon, lat = transformed_lonlat([a.lon, b.lon], [a.lat, b.lat], p, chart)
    return float(haversine(lon[0], lat[0], lon[1], lat[1]))


def aniso_distances(lon_a, lat_a, lon_b, lat_b, p: AnisotropyParams, chart: Chart):
    """Element-wise anisotropic distances between broadcastable arrays."""
    la, pa = transformed_lonlat(lon_a, lat_a, p, chart)
    lb, pb = transformed_lonlat(lon_b, lat_b, p, chart)
    return haversine(la, pa, lb, pb)


def pairwise_aniso(sites: SiteSet, p: AnisotropyParams = ISOTROPIC, chart: Chart | None = None,
                   idx_a=None, idx_b=None) -> np.ndarray:
    chart = chart or sites.chart()
    lon, lat = transformed_lonlat(sites.lon, sites.lat, p, chart)
    ia = np.arange(len(sites)) if idx_a is None else np.asarray(idx_a)
    ib = np.arange(len(sites)) if idx_b is None else np.asarray(idx_b)
    return haversine(lon[ia][:, None], lat[ia][:, None], lon[ib][None, :], lat[ib][None, :])


def lattice_indices(lon: Sequence[float], lat: Sequence[float]):
    """Integer (row, col) lattice positions of each site.

    Raises ``NonGriddedSites`` unless every coordinate is an integer multiple
    of the smallest positive step away from the minimum, to 1e-6 degrees.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if lon.size == 0:
        raise NonGriddedSites("no sites")

    def axis(v):
        u = np.unique(np.round(v / LATTICE_TOL_DEG).astype(np.int64))
        if u.size == 1:
            return np.zeros(v.size, dtype=int)
        step = np.diff(u).min() * LATTICE_TOL_DEG
        k = (v - v.min()) / step
        ki = np.rint(k)
        if np.max(np.abs(k - ki)) * step > 10 * LATTICE_TOL_DEG:
            raise NonGriddedSites("sites do not lie on a regular lattice")
        return ki.astype(int)

    return axis(lat), axis(lon)
