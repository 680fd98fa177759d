"""File formats.

Text outputs are UTF-8 with LF line endings. CSV files may start with
``# key=value`` header lines carrying provenance (config digest, seed, RNG
scheme); readers skip them and return them as a dict. Floats in model files
are written with 17 significant digits, so they read back bit-exactly.

Binary formats are little-endian:

* ``SCEF1`` dense fields: magic, u32 n, u32 d, then n*d float64 row-major.
* ``SCEE1`` ensembles: magic, u64 b, u32 m = |S_tau|, f64 v, u64 seed,
  m u32 site indices of S_tau, then b*m float64 row-major replicate values.
  Per-replicate metadata lives in a companion CSV.
"""
from __future__ import annotations

import csv
import io as _io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classification import FieldSeries
from .dependence.functions import DependenceParams
from .errors import EmptyInput, FormatError
from .geometry import Chart, Site, SiteSet
from .marginals import BulkTable, MarginalModel
from .surfaces import Basis, SurfaceModel

FIELDS_MAGIC = b"SCEF1"
ENSEMBLE_MAGIC = b"SCEE1"
MARGINAL_TAG = "sce-marginal v1"
DEPENDENCE_TAG = "sce-dependence v1"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _header_lines(meta: dict | None) -> str:
    if not meta:
        return ""
    return "".join(f"# {k}={v}\n" for k, v in meta.items())


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _read_lines(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not valid UTF-8 ({exc.reason})", path) from None
    return text.split("\n")


def read_csv(path, header: list[str]):
    """Return ``(rows, meta)``; each row is ``(line_number, fields)``."""
    meta = {}
    rows = []
    seen_header = False
    for no, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, val = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = val.strip()
            continue
        fields = next(csv.reader([line]))
        if not seen_header:
            if [f.strip() for f in fields] != header:
                raise FormatError(f"expected header {','.join(header)!r}", path, no)
            seen_header = True
            continue
        if len(fields) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(fields)}", path, no)
        rows.append((no, [f.strip() for f in fields]))
    if not seen_header:
        raise EmptyInput(f"{path}: file is empty")
    return rows, meta


def _num(value: str, path, line, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise FormatError(f"cannot parse {value!r} as {kind.__name__}", path, line) from None


def write_csv(path, header: list[str], rows, meta: dict | None = None) -> None:
    buf = _io.StringIO()
    buf.write(_header_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# sites, fields, labels, regions

def read_sites(path, grid_spacing_km: float | None = None) -> SiteSet:
    rows, _ = read_csv(path, ["id", "lon", "lat", "elev"])
    if not rows:
        raise EmptyInput(f"{path}: no sites")
    sites = []
    for no, (i, lon, lat, elev) in rows:
        try:
            sites.append(Site(_num(i, path, no, int), _num(lon, path, no), _num(lat, path, no),
                              _num(elev, path, no)))
        except ValueError as exc:
            raise FormatError(str(exc), path, no) from None
    try:
        return SiteSet(sites, grid_spacing_km)
    except ValueError as exc:
        raise FormatError(str(exc), path) from None


def write_sites(path, sites: SiteSet, meta: dict | None = None) -> None:
    write_csv(path, ["id", "lon", "lat", "elev"],
              ((s.id, fmt(s.lon), fmt(s.lat), fmt(s.elev)) for s in sites.sites), meta)


def read_fields(path, sites: SiteSet) -> np.ndarray:
    """Dense (n, d) array from a sparse CSV or an ``SCEF1`` binary file.

    A sparse file holds ``n`` fields where ``n`` is the ``# n=`` header value
    when present, else one more than the largest ``t``.
    """
    raw = Path(path).read_bytes()
    if raw.startswith(FIELDS_MAGIC):
        return _read_scef1(raw, path, len(sites))
    rows, meta = read_csv(path, ["t", "site_id", "value"])
    n_meta = int(meta["n"]) if "n" in meta else None
    if not rows and not n_meta:
        raise EmptyInput(f"{path}: no field values")
    col = {int(i): k for k, i in enumerate(sites.ids)}
    t = np.empty(len(rows), dtype=np.int64)
    s = np.empty(len(rows), dtype=np.int64)
    v = np.empty(len(rows))
    for k, (no, (ts, sid, val)) in enumerate(rows):
        t[k] = _num(ts, path, no, int)
        if t[k] < 0:
            raise FormatError("time index must be non-negative", path, no)
        site = _num(sid, path, no, int)
        if site not in col:
            raise FormatError(f"unknown site_id {site}", path, no)
        s[k] = col[site]
        v[k] = _num(val, path, no)
        if not np.isfinite(v[k]) or v[k] < 0:
            raise FormatError("values must be finite and non-negative", path, no)
    n = int(t.max()) + 1 if t.size else 0
    if n_meta is not None:
        if n > n_meta:
            raise FormatError(f"time index {n - 1} exceeds declared n={n_meta}", path)
        n = n_meta
    out = np.zeros((n, len(sites)))
    out[t, s] = v
    return out


def _read_scef1(raw: bytes, path, d_expected: int) -> np.ndarray:
    head = len(FIELDS_MAGIC) + 8
    if len(raw) < head:
        raise FormatError("truncated SCEF1 header", path)
    n, d = struct.unpack_from("<II", raw, len(FIELDS_MAGIC))
    if d != d_expected:
        raise FormatError(f"SCEF1 has d={d} but the sites file lists {d_expected}", path)
    if len(raw) != head + 8 * n * d:
        raise FormatError("SCEF1 payload length does not match n*d", path)
    if n == 0:
        raise EmptyInput(f"{path}: no fields")
    return np.frombuffer(raw, dtype="<f8", offset=head).reshape(n, d).astype(float)


def write_fields_binary(path, values) -> None:
    values = np.ascontiguousarray(values, dtype="<f8")
    n, d = values.shape
    Path(path).write_bytes(FIELDS_MAGIC + struct.pack("<II", n, d) + values.tobytes())


def write_fields_csv(path, values, sites: SiteSet, meta: dict | None = None) -> None:
    values = np.asarray(values, dtype=float)
    ids = sites.ids
    t, s = np.nonzero(values)
    meta = {**(meta or {}), "n": values.shape[0]}
    write_csv(path, ["t", "site_id", "value"], ((int(a), int(ids[b]), fmt(values[a, b])) for a, b in zip(t, s)),
              meta)


def read_labels(path, n: int | None = None):
    """Return ``(labels, meta)`` with labels ordered by ``t``."""
    rows, meta = read_csv(path, ["t", "label"])
    if not rows:
        raise EmptyInput(f"{path}: no labels")
    out = {}
    for no, (ts, lab) in rows:
        t = _num(ts, path, no, int)
        if lab not in ("C", "N"):
            raise FormatError(f"label must be C or N, got {lab!r}", path, no)
        if t in out:
            raise FormatError(f"duplicate time {t}", path, no)
        out[t] = lab
    size = max(out) + 1 if n is None else n
    if sorted(out) != list(range(size)):
        raise FormatError(f"labels must cover times 0..{size - 1} exactly once", path)
    return np.array([out[t] for t in range(size)], dtype="<U1"), meta


def write_labels(path, labels, meta: dict | None = None) -> None:
    write_csv(path, ["t", "label"], enumerate(labels), meta)


def read_regions(path, sites: SiteSet) -> dict:
    """``region,site_id`` CSV to ``{region: site index array}`` in file order of regions."""
    rows, _ = read_csv(path, ["region", "site_id"])
    if not rows:
        raise EmptyInput(f"{path}: no regions")
    col = {int(i): k for k, i in enumerate(sites.ids)}
    out: dict[str, list] = {}
    for no, (name, sid) in rows:
        site = _num(sid, path, no, int)
        if site not in col:
            raise FormatError(f"unknown site_id {site}", path, no)
        out.setdefault(name, []).append(col[site])
    return {k: np.unique(v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# model files

class _Reader:
    """Token reader over ``key value...`` lines with line-numbered errors."""

    def __init__(self, path, tag: str):
        self.path = path
        self.meta = {}
        self.lines = []
        for no, line in enumerate(_read_lines(path), start=1):
            if line.startswith("#"):
                key, sep, val = line[1:].strip().partition("=")
                if sep:
                    self.meta[key.strip()] = val.strip()
            elif line.strip():
                self.lines.append((no, line.split()))
        if not self.lines or " ".join(self.lines[0][1]) != tag:
            raise FormatError(f"missing {tag!r} tag", path, self.lines[0][0] if self.lines else None)
        self.pos = 1

    def next(self, key: str, count: int | None = None):
        if self.pos >= len(self.lines):
            raise FormatError(f"unexpected end of file, expected {key!r}", self.path)
        no, toks = self.lines[self.pos]
        if toks[0] != key:
            raise FormatError(f"expected {key!r}, found {toks[0]!r}", self.path, no)
        if count is not None and len(toks) - 1 != count:
            raise FormatError(f"{key!r} needs {count} values, found {len(toks) - 1}", self.path, no)
        self.pos += 1
        self.line = no
        return toks[1:]

    def floats(self, key: str, count: int | None = None) -> np.ndarray:
        toks = self.next(key, count)
        try:
            return np.array([float(t) for t in toks])
        except ValueError:
            raise FormatError(f"non-numeric value in {key!r}", self.path, self.line) from None

    def vector(self, key: str) -> np.ndarray:
        """``key k v1 .. vk`` with the length checked."""
        toks = self.next(key)
        try:
            k = int(toks[0])
            vals = np.array([float(t) for t in toks[1:]])
        except (ValueError, IndexError):
            raise FormatError(f"malformed {key!r}", self.path, self.line) from None
        if vals.size != k:
            raise FormatError(f"{key!r} declares {k} values, found {vals.size}", self.path, self.line)
        return vals

    def done(self):
        if self.pos != len(self.lines):
            raise FormatError("trailing content", self.path, self.lines[self.pos][0])


def _vec(key: str, values) -> str:
    values = np.asarray(values, dtype=float).ravel()
    return " ".join([key, str(values.size)] + [fmt(v) for v in values]) + "\n"


def _write_surface(name: str, s: SurfaceModel) -> str:
    b = s.basis
    out = [f"surface {name}\n", f"link {s.link}\n",
           f"chart {fmt(b.chart.lon0)} {fmt(b.chart.lat0)}\n",
           f"length_scale {fmt(b.length_scale)}\n",
           _vec("loc_knots", b.loc_knots),
           f"elevation {fmt(b.elev_center)} {fmt(b.elev_scale)} {b.n_elev}\n",
           _vec("elev_knots", b.elev_knots),
           _vec("coefficients", s.coefficients)]
    return "".join(out)


def _read_surface(r: _Reader, name: str) -> SurfaceModel:
    got = r.next("surface", 1)[0]
    if got != name:
        raise FormatError(f"expected surface {name!r}, found {got!r}", r.path, r.line)
    link_name = r.next("link", 1)[0]
    lon0, lat0 = r.floats("chart", 2)
    length = r.floats("length_scale", 1)[0]
    knots = r.vector("loc_knots")
    if knots.size % 2:
        raise FormatError("loc_knots needs an even count", r.path, r.line)
    center, scale, n_elev = r.floats("elevation", 3)
    ek = r.vector("elev_knots")
    coef = r.vector("coefficients")
    basis = Basis(Chart(float(lon0), float(lat0)), float(length), knots.reshape(-1, 2), float(center), float(scale),
                  ek, int(n_elev))
    if coef.size != basis.size:
        raise FormatError(f"surface {name!r} has {coef.size} coefficients for a basis of size {basis.size}",
                          r.path, r.line)
    try:
        return SurfaceModel(basis, coef, link_name)
    except ValueError as exc:
        raise FormatError(str(exc), r.path, r.line) from None


def write_marginal(path, m: MarginalModel, meta: dict | None = None) -> None:
    out = [_header_lines(meta), MARGINAL_TAG + "\n", f"lambda {fmt(m.lam)}\n", f"xi {fmt(m.xi)}\n",
           f"sites {len(m.sites)}\n"]
    out += [f"site {s.id} {fmt(s.lon)} {fmt(s.lat)} {fmt(s.elev)}\n" for s in m.sites.sites]
    out.append(_write_surface("p", m.p_surface))
    out.append(_write_surface("q", m.q_surface))
    out.append(_write_surface("upsilon", m.upsilon_surface))
    for tab in m.bulk:
        out.append(_vec("bulk_y", tab.y))
        out.append(_vec("bulk_F", tab.F))
    write_text(path, "".join(out))


def read_marginal(path):
    """Return ``(MarginalModel, meta)``."""
    r = _Reader(path, MARGINAL_TAG)
    lam = float(r.floats("lambda", 1)[0])
    xi = float(r.floats("xi", 1)[0])
    d = int(r.floats("sites", 1)[0])
    sites = []
    for _ in range(d):
        toks = r.next("site", 4)
        try:
            sites.append(Site(int(toks[0]), float(toks[1]), float(toks[2]), float(toks[3])))
        except ValueError as exc:
            raise FormatError(str(exc), path, r.line) from None
    surfaces = [_read_surface(r, n) for n in ("p", "q", "upsilon")]
    bulk = []
    for _ in range(d):
        y = r.vector("bulk_y")
        F = r.vector("bulk_F")
        if y.size != F.size:
            raise FormatError("bulk table lengths differ", path, r.line)
        bulk.append(BulkTable(y, F))
    r.done()
    try:
        model = MarginalModel(lam, *surfaces[:2], surfaces[2], xi, bulk, SiteSet(sites))
    except ValueError as exc:
        raise FormatError(str(exc), path) from None
    return model, r.meta


@dataclass
class DependenceRecord:
    params: DependenceParams
    u_level: float
    seed: int
    triples_digest: str
    stderr: dict


def write_dependence(path, rec: DependenceRecord, meta: dict | None = None) -> None:
    p = rec.params
    out = [_header_lines(meta), DEPENDENCE_TAG + "\n", f"beta_variant {p.beta_variant}\n",
           f"sigma_variant {p.sigma_variant}\n"]
    out += [f"{n} {fmt(getattr(p, n))}\n" for n in DependenceParams.numeric_names()]
    out += [f"u_level {fmt(rec.u_level)}\n", f"seed {int(rec.seed)}\n", f"triples {rec.triples_digest}\n"]
    out += [f"se {n} {fmt(v)}\n" for n, v in rec.stderr.items()]
    write_text(path, "".join(out))


def read_dependence(path):
    """Return ``(DependenceRecord, meta)``."""
    r = _Reader(path, DEPENDENCE_TAG)
    bv = r.next("beta_variant", 1)[0]
    sv = r.next("sigma_variant", 1)[0]
    kw = {n: float(r.floats(n, 1)[0]) for n in DependenceParams.numeric_names()}
    u_level = float(r.floats("u_level", 1)[0])
    seed = int(r.next("seed", 1)[0])
    digest = r.next("triples", 1)[0]
    stderr = {}
    while r.pos < len(r.lines) and r.lines[r.pos][1][0] == "se":
        name, val = r.next("se", 2)
        stderr[name] = float(val)
    r.done()
    try:
        params = DependenceParams(beta_variant=bv, sigma_variant=sv, **kw)
    except ValueError as exc:
        raise FormatError(str(exc), path) from None
    return DependenceRecord(params, u_level, seed, digest, stderr), r.meta


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class EnsembleFile:
    values: np.ndarray
    S_tau: np.ndarray
    v: float
    seed: int
    cond_site: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    meta: dict


def write_ensemble(path, ens, meta: dict | None = None) -> None:
    """Binary replicate matrix at ``path`` plus ``<path>.csv`` metadata."""
    values = np.ascontiguousarray(ens.values, dtype="<f8")
    b, m = values.shape
    head = ENSEMBLE_MAGIC + struct.pack("<QIdQ", b, m, float(ens.v), int(ens.seed))
    idx = np.asarray(ens.S_tau, dtype="<u4").tobytes()
    Path(path).write_bytes(head + idx + values.tobytes())
    write_csv(str(path) + ".csv", ["replicate", "cond_site", "class", "weight"],
              ((r, int(c), lab, fmt(w)) for r, (c, lab, w) in enumerate(zip(ens.cond_site, ens.labels, ens.weights))),
              meta)


def read_ensemble(path) -> EnsembleFile:
    raw = Path(path).read_bytes()
    if not raw.startswith(ENSEMBLE_MAGIC):
        raise FormatError("missing SCEE1 magic", path)
    off = len(ENSEMBLE_MAGIC)
    size = struct.calcsize("<QIdQ")
    if len(raw) < off + size:
        raise FormatError("truncated SCEE1 header", path)
    b, m, v, seed = struct.unpack_from("<QIdQ", raw, off)
    off += size
    if len(raw) != off + 4 * m + 8 * b * m:
        raise FormatError("SCEE1 payload length does not match b and |S_tau|", path)
    S_tau = np.frombuffer(raw, dtype="<u4", count=m, offset=off).astype(np.int64)
    values = np.frombuffer(raw, dtype="<f8", offset=off + 4 * m).reshape(b, m).astype(float)
    rows, meta = read_csv(str(path) + ".csv", ["replicate", "cond_site", "class", "weight"])
    if len(rows) != b:
        raise FormatError(f"metadata lists {len(rows)} replicates, binary has {b}", str(path) + ".csv")
    cond = np.array([_num(r[1][1], path, r[0], int) for r in rows], dtype=np.int64)
    labels = np.array([r[1][2] for r in rows], dtype="<U1")
    weights = np.array([_num(r[1][3], path, r[0]) for r in rows])
    return EnsembleFile(values, S_tau, float(v), int(seed), cond, labels, weights, meta)


def write_qq(path, report, meta: dict | None = None) -> None:
    """Q-Q table ``p,model_q,emp_q,lo,hi`` followed by a ``lambda1,lambda2`` summary."""
    buf = _io.StringIO()
    buf.write(_header_lines(meta))
    buf.write("p,model_q,emp_q,lo,hi\n")
    for row in report.rows():
        buf.write(",".join(fmt(v) for v in row) + "\n")
    buf.write(f"# lambda1,lambda2={fmt(report.lambda1)},{fmt(report.lambda2)}\n")
    write_text(path, buf.getvalue())


def load_series(sites_path, fields_path, labels_path=None) -> FieldSeries:
    sites = read_sites(sites_path)
    values = read_fields(fields_path, sites)
    labels = None
    if labels_path is not None:
        labels, _ = read_labels(labels_path, values.shape[0])
    try:
        return FieldSeries(sites, values, labels)
    except ValueError as exc:
        raise FormatError(str(exc), fields_path) from None
