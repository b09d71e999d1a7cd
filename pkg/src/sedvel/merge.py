"""Background-model queries, the sediment-to-background splice and gridded products."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import core, geostat
from .coefficients import CoefficientSet
from .core import LayeredProfile, ProfileParams, Provenance
from .io import DataFormatError

VS_LIMIT = 1000.0
NODATA = -9999.0
GRID_KINDS = ("stationary", "spatial_conditioned", "spatial_unconditional", "background")


class OutOfExtentError(ValueError):
    """Query outside the lattice of a gridded model."""


class MergeError(ValueError):
    """Profiles that cannot be brought onto a common discretization."""


# --------------------------------------------------------------------------
# background model
# --------------------------------------------------------------------------


def _regular_axis(values, name):
    axis = np.unique(values)
    if axis.size >= 3:
        step = np.diff(axis)
        if not np.allclose(step, step[0], rtol=1e-6, atol=1e-9):
            raise DataFormatError(f"{name} axis is not regularly spaced")
    return axis


@dataclass(frozen=True, eq=False)
class BackgroundModel:
    """Regular lat/lon/depth lattice of vs (m/s), ``vs[i_lat, i_lon, i_depth]``."""

    lat: np.ndarray
    lon: np.ndarray
    depth: np.ndarray
    vs: np.ndarray

    def __post_init__(self):
        lat, lon, depth = (np.asarray(a, dtype=float) for a in (self.lat, self.lon, self.depth))
        vs = np.asarray(self.vs, dtype=float)
        if vs.shape != (lat.size, lon.size, depth.size):
            raise DataFormatError("vs lattice shape does not match the axes")
        for name, a in (("lat", lat), ("lon", lon), ("depth", depth)):
            if a.size == 0 or np.any(np.diff(a) <= 0):
                raise DataFormatError(f"{name} axis must be non-empty and strictly increasing")
        if not np.all(vs > 0):
            raise DataFormatError("background vs must be strictly positive")
        for name, a in (("lat", lat), ("lon", lon), ("depth", depth), ("vs", vs)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def constant(cls, value, lat=(37.0, 38.0), lon=(-123.0, -122.0), depth=(0.0, 1000.0)):
        lat, lon, depth = map(np.asarray, (lat, lon, depth))
        return cls(lat, lon, depth, np.full((lat.size, lon.size, depth.size), float(value)))

    @property
    def extents(self) -> dict:
        return {
            "lat": (float(self.lat[0]), float(self.lat[-1])),
            "lon": (float(self.lon[0]), float(self.lon[-1])),
            "depth": (float(self.depth[0]), float(self.depth[-1])),
        }

    def _check(self, lat, lon, z):
        tol = 1e-9
        if np.any(lat < self.lat[0] - tol) or np.any(lat > self.lat[-1] + tol):
            raise OutOfExtentError(f"latitude outside {self.extents['lat']}")
        if np.any(lon < self.lon[0] - tol) or np.any(lon > self.lon[-1] + tol):
            raise OutOfExtentError(f"longitude outside {self.extents['lon']}")
        if np.any(z < 0) or np.any(z > self.depth[-1] + tol):
            raise OutOfExtentError(f"depth outside [0, {self.depth[-1]}] m")

    @staticmethod
    def _bracket(axis, x):
        if axis.size == 1:
            return np.zeros_like(x, dtype=int), np.zeros_like(x, dtype=int), np.zeros_like(x)
        i = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, axis.size - 2)
        w = np.clip((x - axis[i]) / (axis[i + 1] - axis[i]), 0.0, 1.0)
        return i, i + 1, w

    def query(self, lat, lon, z):
        """Nearest node in depth (shallower on ties), bilinear in lat/lon."""
        lat, lon, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (lat, lon, z)))
        self._check(lat, lon, z)
        iz = np.argmin(np.abs(self.depth[None, :] - z.reshape(-1, 1)), axis=1).reshape(z.shape)
        i0, i1, wy = self._bracket(self.lat, lat)
        j0, j1, wx = self._bracket(self.lon, lon)
        v = self.vs
        # a + w (b - a) is exact on constant fields
        south = v[i0, j0, iz] + wx * (v[i0, j1, iz] - v[i0, j0, iz])
        north = v[i1, j0, iz] + wx * (v[i1, j1, iz] - v[i1, j0, iz])
        out = south + wy * (north - south)
        return out if out.ndim else float(out)

    def profile(self, lat: float, lon: float, thickness, id: str = "background") -> LayeredProfile:
        """Background column on the given layering, sampled at layer mid-depths."""
        h = np.asarray(thickness, dtype=float)
        mid = np.cumsum(h) - 0.5 * h
        return LayeredProfile(h, self.query(lat, lon, mid), id=id, lat=lat, lon=lon, provenance=Provenance.BACKGROUND)

    @classmethod
    def from_csv(cls, path: str | Path) -> "BackgroundModel":
        """Read ``lat,lon,depth_m,vs_mps`` rows forming a complete regular lattice."""
        need = ["lat", "lon", "depth_m", "vs_mps"]
        try:
            data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, encoding="utf-8")
        except (OSError, ValueError) as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
        if data.dtype.names is None or list(data.dtype.names) != need:
            raise DataFormatError(f"{path}: expected header {','.join(need)}")
        data = np.atleast_1d(data)
        cols = [data[n] for n in need]
        if any(np.any(~np.isfinite(c)) for c in cols):
            raise DataFormatError(f"{path}: non-numeric or missing values")
        lat, lon, depth = (_regular_axis(c, n) for c, n in zip(cols[:3], need[:3]))
        if data.size != lat.size * lon.size * depth.size:
            raise DataFormatError(f"{path}: lattice is incomplete or has duplicate nodes")
        vs = np.full((lat.size, lon.size, depth.size), np.nan)
        vs[np.searchsorted(lat, cols[0]), np.searchsorted(lon, cols[1]), np.searchsorted(depth, cols[2])] = cols[3]
        if np.any(np.isnan(vs)):
            raise DataFormatError(f"{path}: lattice has duplicate nodes")
        return cls(lat, lon, depth, vs)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lat", "lon", "depth_m", "vs_mps"])
            for i, la in enumerate(self.lat):
                for j, lo in enumerate(self.lon):
                    for k, d in enumerate(self.depth):
                        w.writerow([repr(float(la)), repr(float(lo)), repr(float(d)), repr(float(self.vs[i, j, k]))])


def query_background(model: BackgroundModel, lat, lon, z):
    return model.query(lat, lon, z)


# --------------------------------------------------------------------------
# rasters
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Raster:
    """Regular lon/lat grid, row 0 is the northern edge (row-major text layout).

    ``xll``/``yll`` are the lower-left corner (degrees); cells are square with
    side ``cellsize`` degrees; NaN marks no-data.
    """

    values: np.ndarray
    xll: float
    yll: float
    cellsize: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise DataFormatError("raster values must be a non-empty 2-D array")
        if not self.cellsize > 0:
            raise DataFormatError("cellsize must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def centers(self):
        """``(lat, lon)`` arrays of cell centres, shaped like ``values``."""
        nrows, ncols = self.shape
        lon = self.xll + (np.arange(ncols) + 0.5) * self.cellsize
        lat = self.yll + (nrows - np.arange(nrows) - 0.5) * self.cellsize
        return np.meshgrid(lat, lon, indexing="ij")

    def bounds(self):
        nrows, ncols = self.shape
        return (self.xll, self.yll, self.xll + ncols * self.cellsize, self.yll + nrows * self.cellsize)

    def like(self, values) -> "Raster":
        return Raster(values, self.xll, self.yll, self.cellsize)

    def crop(self, region) -> "Raster":
        """Cells whose centres fall in ``(lon_min, lat_min, lon_max, lat_max)``."""
        lat, lon = self.centers()
        x0, y0, x1, y1 = region
        rows = np.nonzero((lat[:, 0] >= y0) & (lat[:, 0] <= y1))[0]
        cols = np.nonzero((lon[0] >= x0) & (lon[0] <= x1))[0]
        if rows.size == 0 or cols.size == 0:
            raise OutOfExtentError(f"region {region} does not overlap grid bounds {self.bounds()}")
        nrows = self.shape[0]
        return Raster(
            self.values[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1],
            self.xll + cols[0] * self.cellsize,
            self.yll + (nrows - 1 - rows[-1]) * self.cellsize,
            self.cellsize,
        )


Vs30Grid = Raster


def write_raster(raster: Raster, path: str | Path, nodata: float = NODATA) -> None:
    nrows, ncols = raster.shape
    lines = [
        f"ncols {ncols}",
        f"nrows {nrows}",
        f"xllcorner {raster.xll!r}",
        f"yllcorner {raster.yll!r}",
        f"cellsize {raster.cellsize!r}",
        f"NODATA_value {nodata!r}",
    ]
    v = np.where(np.isnan(raster.values), nodata, raster.values)
    for row in v:
        lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_raster(path: str | Path) -> Raster:
    keys = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"]
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    header = {}
    for i, key in enumerate(keys):
        parts = lines[i].split() if i < len(lines) else []
        if len(parts) != 2 or parts[0].lower() != key:
            raise DataFormatError(f"{path}: header line {i + 1} should be '{key} <value>'")
        try:
            header[key] = float(parts[1])
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    nrows, ncols = int(header["nrows"]), int(header["ncols"])
    rows = [ln.split() for ln in lines[6:] if ln.strip()]
    if len(rows) != nrows or any(len(r) != ncols for r in rows):
        raise DataFormatError(f"{path}: expected {nrows} rows of {ncols} values")
    try:
        v = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    v[v == header["nodata_value"]] = np.nan
    return Raster(v, header["xllcorner"], header["yllcorner"], header["cellsize"])


def read_vs30_grid(path: str | Path) -> Raster:
    grid = read_raster(path)
    valid = grid.values[~np.isnan(grid.values)]
    if np.any(valid <= 0):
        raise DataFormatError(f"{path}: Vs30 values must be positive")
    return grid


# --------------------------------------------------------------------------
# termination and merging
# --------------------------------------------------------------------------


def z_vs_threshold(params: ProfileParams, vs_limit: float = VS_LIMIT) -> float:
    """Depth (m) at which the median profile reaches ``vs_limit``.

    Returns 0 when the surface velocity already exceeds the limit.
    """
    if vs_limit < params.vs0:
        return 0.0
    return core.Z_STAR + math.expm1(params.n * math.log(vs_limit / params.vs0)) / params.k


def resample(profile: LayeredProfile, thickness, extend: bool = False) -> LayeredProfile:
    """Profile on a new layering, sampled at the new layer mid-depths.

    Layers below the source column raise unless ``extend`` (last layer continued).
    """
    h = np.asarray(thickness, dtype=float)
    mid = np.cumsum(h) - 0.5 * h
    if not extend and mid[-1] > profile.depth:
        raise MergeError(f"{profile.id}: cannot resample below {profile.depth} m")
    return profile.replace(thickness=h, vs=profile.vs_at(np.minimum(mid, profile.depth)))


def merge_profile(
    svm: LayeredProfile,
    background: LayeredProfile,
    vs_limit: float = VS_LIMIT,
    rock_depth: float | None = None,
) -> LayeredProfile:
    """Splice a sedimentary profile onto the background column.

    The output uses the background layering. Within the sedimentary column
    (down to its depth, or ``rock_depth`` when given) each layer takes
    ``max(svm, background)`` until that maximum first reaches ``vs_limit``;
    the transition layer takes ``max(background, vs_limit)`` and that floor is
    held until the background itself reaches the limit, after which the
    background is followed. Below the sedimentary column the background wins.
    """
    h = background.thickness
    mid = background.mid_depth
    bg = background.vs
    floor_depth = svm.depth if rock_depth is None else min(svm.depth, float(rock_depth))
    inside = mid < floor_depth
    if not np.any(inside):
        return background.replace(provenance=Provenance.MERGED, id=svm.id, vs30=svm.vs30)
    sv = np.full_like(bg, np.nan)
    sv[inside] = svm.vs_at(mid[inside])
    top = np.where(inside, np.fmax(sv, bg), bg)
    out = bg.copy()
    hit = np.nonzero(inside & (top >= vs_limit))[0]
    if hit.size == 0:
        out[inside] = top[inside]
    else:
        t = hit[0]
        out[:t] = top[:t]
        out[t] = max(bg[t], vs_limit)
        for i in range(t + 1, bg.size):
            if not inside[i] or bg[i] >= vs_limit:
                break
            out[i] = max(bg[i], vs_limit)
    return LayeredProfile(
        h, out, id=svm.id, lat=svm.lat, lon=svm.lon, provenance=Provenance.MERGED, vs30=svm.vs30
    )


# --------------------------------------------------------------------------
# depth slices
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SliceResult:
    mean: Raster
    sd: Raster


def _median_fields(vs30, coeffs, dbr, depth):
    n = core.n_of_vs30(vs30, coeffs)
    k = core.k_of_vs30(vs30, coeffs, dbr)
    vs0 = core.vs0_of(vs30, k, n)
    vs = vs0 * core.median_shape(depth, k, n)
    kz = k * max(depth - core.Z_STAR, 0.0)
    sens = kz / (1.0 + kz) / n + core.dln_vs0_dln_k(k, n)
    return vs, sens


def grid_slice(
    vs30_grid: Raster,
    depth: float,
    kind: str,
    coeffs: CoefficientSet | None = None,
    field: geostat.SpatialField | None = None,
    background: BackgroundModel | None = None,
    region=None,
    monte_carlo: int = 0,
    seed=0,
) -> SliceResult:
    """Mean and sd rasters of vs (m/s) at ``depth`` over the Vs30 grid.

    ``sd`` is the dBr-induced spread: first-order by default, or the sample sd
    of ``monte_carlo`` draws of dBr when positive. Non-spatial kinds report 0.
    """
    if kind not in GRID_KINDS:
        raise ValueError(f"kind must be one of {GRID_KINDS}")
    if not depth > 0:
        raise core.DomainError("depth must be positive")
    grid = vs30_grid if region is None else vs30_grid.crop(region)
    lat, lon = grid.centers()
    vs30 = grid.values
    ok = ~np.isnan(vs30)
    mean = np.full(vs30.shape, np.nan)
    sd = np.full(vs30.shape, np.nan)
    if kind == "background":
        if background is None:
            raise ValueError("background kind needs a background model")
        mean[ok] = background.query(lat[ok], lon[ok], np.full(ok.sum(), float(depth)))
        sd[ok] = 0.0
        return SliceResult(grid.like(mean), grid.like(sd))
    if coeffs is None:
        raise ValueError("model kinds need coefficients")
    v = vs30[ok]
    if kind == "stationary":
        m_dbr, s_dbr = np.zeros_like(v), np.zeros_like(v)
    elif kind == "spatial_unconditional":
        if not coeffs.has_spatial:
            raise ValueError("spatial kinds need coefficients with ell_km/omega")
        m_dbr, s_dbr = np.zeros_like(v), np.full_like(v, coeffs.omega)
    else:
        if field is None:
            raise ValueError("spatial_conditioned kind needs a spatial field")
        qx, qy = field.project(lat[ok], lon[ok])
        m_dbr, s_dbr = geostat.krige_dbr(field, qx, qy)
    vs, sens = _median_fields(v, coeffs, m_dbr, float(depth))
    mean[ok] = vs
    if monte_carlo > 0:
        rng = np.random.default_rng(seed)
        draws = m_dbr + s_dbr * rng.standard_normal((monte_carlo, v.size))
        sd[ok] = np.std(_median_fields(v, coeffs, draws, float(depth))[0], axis=0, ddof=1)
    else:
        sd[ok] = vs * s_dbr * np.abs(sens)
    return SliceResult(grid.like(mean), grid.like(sd))
