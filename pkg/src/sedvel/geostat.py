"""Gaussian-process machinery for the slope adjustment and along-depth residuals.

Lateral: the slope adjustment dBr is a zero-mean GP over projected plane
coordinates (km) with an exponential kernel ``omega^2 exp(-d/ell)``.

Vertical: within-profile ln-residuals follow an exponential covariance
``sill exp(-|dz|/range)``; an optional per-profile constant carries the
remaining ``total_var - sill`` that within-profile semivariograms cannot see.
"""

from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from .core import LayeredProfile, Provenance
from .io import DataFormatError, fmt6

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
JITTER = 1e-8
COINCIDENT_KM = 1e-3


class NumericalError(RuntimeError):
    """Linear algebra or optimizer failure."""


class ConvergenceError(NumericalError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


# --------------------------------------------------------------------------
# projection
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection about ``(lat0, lon0)``; output in km."""

    lat0: float
    lon0: float

    @classmethod
    def about_centroid(cls, lat, lon) -> "LocalProjection":
        return cls(float(np.mean(lat)), float(np.mean(lon)))

    def forward(self, lat, lon):
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        x = np.radians(lon - self.lon0) * np.cos(np.radians(self.lat0)) * EARTH_RADIUS_KM
        y = np.radians(lat - self.lat0) * EARTH_RADIUS_KM
        return x, y

    def inverse(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lat = self.lat0 + np.degrees(y / EARTH_RADIUS_KM)
        lon = self.lon0 + np.degrees(x / (EARTH_RADIUS_KM * np.cos(np.radians(self.lat0))))
        return lat, lon


# --------------------------------------------------------------------------
# lateral GP
# --------------------------------------------------------------------------


def spatial_kernel(d, omega: float, ell: float):
    """Exponential covariance ``omega^2 * exp(-d / ell)``."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    if not ell > 0 or not omega >= 0:
        raise ValueError("kernel requires ell > 0 and omega >= 0")
    return omega**2 * np.exp(-d / ell)


def pairwise_distance(xa, ya, xb=None, yb=None):
    if xb is None:
        xb, yb = xa, ya
    dx = np.subtract.outer(np.asarray(xa, float), np.asarray(xb, float))
    dy = np.subtract.outer(np.asarray(ya, float), np.asarray(yb, float))
    return np.hypot(dx, dy)


@dataclass(frozen=True, eq=False)
class SpatialField:
    """Training slope adjustments at projected locations.

    ``ids`` are optional labels; ``projection`` maps lat/lon onto the same
    plane as ``x_km``/``y_km``.
    """

    x_km: np.ndarray
    y_km: np.ndarray
    dbr_mean: np.ndarray
    dbr_sd: np.ndarray
    omega: float
    ell: float
    projection: LocalProjection | None = None
    ids: tuple = field(default=())

    def __post_init__(self):
        arrs = [np.array(a, dtype=float) for a in (self.x_km, self.y_km, self.dbr_mean, self.dbr_sd)]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
            raise ValueError("field arrays must be 1-D and equally long")
        for name, a in zip(("x_km", "y_km", "dbr_mean", "dbr_sd"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not self.ell > 0 or not self.omega >= 0:
            raise ValueError("field requires ell > 0 and omega >= 0")
        if np.any(self.dbr_sd < 0) or np.any(~np.isfinite(self.dbr_mean)):
            raise ValueError("dbr_sd must be >= 0 and dbr_mean finite")
        d = pairwise_distance(self.x_km, self.y_km)
        i, j = np.nonzero(np.triu(d < COINCIDENT_KM, k=1))
        clash = np.abs(self.dbr_mean[i] - self.dbr_mean[j]) > 0
        if np.any(clash):
            raise ValueError(f"coincident training points with different dBr: {list(zip(i[clash], j[clash]))[:5]}")
        if not self.ids:
            object.__setattr__(self, "ids", tuple(str(k) for k in range(self.size)))

    @property
    def size(self) -> int:
        return self.x_km.size

    def with_hyper(self, omega: float, ell: float) -> "SpatialField":
        return SpatialField(self.x_km, self.y_km, self.dbr_mean, self.dbr_sd, omega, ell, self.projection, self.ids)

    def project(self, lat, lon):
        if self.projection is None:
            raise ValueError("field has no projection; query with plane coordinates")
        return self.projection.forward(lat, lon)


def _cholesky_with_jitter(K: np.ndarray, what: str = "covariance"):
    """Cholesky factor of K; adds ``JITTER`` to the diagonal only if K is not PD."""
    try:
        return linalg.cho_factor(K, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    try:
        log.debug("%s not positive definite; adding %g to the diagonal", what, JITTER)
        return linalg.cho_factor(K + JITTER * np.eye(K.shape[0]), lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            f"{what} is singular even after jitter (coincident noise-free points?): {exc}"
        ) from exc


def krige_dbr(field: SpatialField, qx, qy) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and sd of dBr at query points (plane coordinates, km).

    Zero prior mean, exponential kernel, heteroscedastic noise ``dbr_sd**2``.
    """
    qx = np.atleast_1d(np.asarray(qx, dtype=float))
    qy = np.atleast_1d(np.asarray(qy, dtype=float))
    prior_var = field.omega**2
    if field.size == 0 or prior_var == 0.0:
        return np.zeros(qx.shape), np.full(qx.shape, field.omega)
    K = spatial_kernel(pairwise_distance(field.x_km, field.y_km), field.omega, field.ell)
    K[np.diag_indices_from(K)] += field.dbr_sd**2
    cf = _cholesky_with_jitter(K, "kriging covariance")
    Ks = spatial_kernel(pairwise_distance(field.x_km, field.y_km, qx, qy), field.omega, field.ell)
    alpha = linalg.cho_solve(cf, field.dbr_mean, check_finite=False)
    mean = Ks.T @ alpha
    v = linalg.solve_triangular(cf[0], Ks, lower=True, check_finite=False)
    var = prior_var - np.sum(v * v, axis=0)
    # variance at roundoff level is reported as exactly zero
    var[var < 1e-10 * prior_var] = 0.0
    return mean, np.sqrt(var)


def read_spatial_field(path: str | Path, omega: float, ell: float, projection=None) -> SpatialField:
    """Read ``id,lat,lon,dBr_mean,dBr_sd``; projects about the centroid unless given."""
    ids, lat, lon, mean, sd = [], [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = ["id", "lat", "lon", "dBr_mean", "dBr_sd"]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != need:
            raise DataFormatError(f"{path}: expected header {','.join(need)}")
        for row in reader:
            try:
                ids.append(row["id"])
                lat.append(float(row["lat"]))
                lon.append(float(row["lon"]))
                mean.append(float(row["dBr_mean"]))
                sd.append(float(row["dBr_sd"]))
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: {exc}") from exc
    if not ids:
        raise DataFormatError(f"{path}: no training points")
    proj = projection or LocalProjection.about_centroid(lat, lon)
    x, y = proj.forward(lat, lon)
    try:
        return SpatialField(x, y, mean, sd, omega, ell, proj, tuple(ids))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def write_spatial_field(field: SpatialField, path: str | Path) -> None:
    lat, lon = field.projection.inverse(field.x_km, field.y_km)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "lat", "lon", "dBr_mean", "dBr_sd"])
        for row in zip(field.ids, lat, lon, field.dbr_mean, field.dbr_sd):
            w.writerow([row[0], *(f"{v:.10g}" for v in row[1:3]), *(fmt6(v) for v in row[3:])])


# --------------------------------------------------------------------------
# along-depth residuals
# --------------------------------------------------------------------------


def depth_covariance(depths, sill: float, range_r: float) -> np.ndarray:
    z = np.asarray(depths, dtype=float)
    return sill * np.exp(-np.abs(np.subtract.outer(z, z)) / range_r)


def sample_depth_residuals(depths, sill_s: float, range_r: float, total_var: float, seed, size=None):
    """Correlated ln-residuals ``eps(z) = eta + w(z)``.

    ``w`` has covariance ``sill_s exp(-|dz|/range_r)``; ``eta`` is a per-profile
    constant with variance ``total_var - sill_s``. ``seed`` is anything
    ``numpy.random.default_rng`` accepts. With ``size`` the result has shape
    ``(size, len(depths))``.
    """
    z = np.asarray(depths, dtype=float)
    if np.any(np.diff(z) < 0):
        raise ValueError("depths must be sorted ascending")
    if not range_r > 0:
        raise ValueError("range_r must be positive")
    if sill_s < 0 or total_var < sill_s:
        raise ValueError(f"need total_var >= sill_s >= 0, got total_var={total_var}, sill_s={sill_s}")
    rng = np.random.default_rng(seed)
    shape = (1 if size is None else size, z.size)
    eps = np.zeros(shape)
    if sill_s > 0:
        C = depth_covariance(z, sill_s, range_r) + JITTER * sill_s * np.eye(z.size)
        L = np.linalg.cholesky(C)
        eps += rng.standard_normal(shape) @ L.T
    between = total_var - sill_s
    if between > 0:
        eps += np.sqrt(between) * rng.standard_normal((shape[0], 1))
    return eps[0] if size is None else eps


def derive_seed(seed: int, *keys) -> np.random.SeedSequence:
    """Seed sequence for ``(seed, key, ...)``; string keys are hashed with CRC-32.

    Streams depend only on the keys, so adding entities or changing the
    order of work never perturbs an existing stream.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.SeedSequence(words)


def realize_profile(
    profile: LayeredProfile,
    sill_s: float,
    range_r: float,
    seed,
    total_var: float | None = None,
    vs_min: float = 50.0,
    index: int = 0,
) -> LayeredProfile:
    """One stochastic column: layer vs scaled by ``exp(eps)`` at mid-depths.

    ``total_var`` defaults to ``sill_s`` (correlated term only, no
    per-profile constant). Velocities are clamped to at least ``vs_min``.
    """
    tv = sill_s if total_var is None else total_var
    eps = sample_depth_residuals(profile.mid_depth, sill_s, range_r, tv, seed)
    return profile.replace(
        vs=np.maximum(profile.vs * np.exp(eps), vs_min),
        id=f"{profile.id}_r{index}",
        provenance=Provenance.MODEL_REALIZATION,
    )


# --------------------------------------------------------------------------
# semivariograms
# --------------------------------------------------------------------------


def exponential_semivariogram(h, sill: float, range_r: float):
    return sill * (1.0 - np.exp(-np.asarray(h, dtype=float) / range_r))


@dataclass
class Semivariogram:
    """Binned empirical semivariogram with an optional exponential fit."""

    bin_edges: np.ndarray
    lags: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    min_pairs: int = 30
    range_r: float | None = None
    sill_s: float | None = None
    se_r: float | None = None
    se_s: float | None = None

    @property
    def usable(self) -> np.ndarray:
        return (self.counts >= max(self.min_pairs, 1)) & np.isfinite(self.gamma)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag_m", "gamma", "count"])
            for h, g, c in zip(self.lags, self.gamma, self.counts):
                w.writerow([fmt6(h), fmt6(g), int(c)])

    def fitted_params(self) -> dict:
        return {"range_r_m": self.range_r, "sill_s": self.sill_s, "se_range_r_m": self.se_r, "se_sill_s": self.se_s}

    def write_sidecar(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.fitted_params(), fh, indent=2)
            fh.write("\n")


DEFAULT_BIN_EDGES = np.arange(0.0, 60.0 + 1e-9, 2.0)


def empirical_semivariogram(profiles, bin_edges=DEFAULT_BIN_EDGES, min_pairs: int = 30) -> Semivariogram:
    """Pool ``0.5 (eps_i - eps_j)^2`` over within-profile pairs, binned by lag.

    ``profiles`` is an iterable of ``(depths, eps)`` pairs. Lags on a bin's
    upper edge go to the next bin; ``gamma`` is NaN for empty bins.
    """
    edges = np.asarray(bin_edges, dtype=float)
    nb = edges.size - 1
    sums = np.zeros(nb)
    counts = np.zeros(nb, dtype=np.int64)
    lag_sums = np.zeros(nb)
    for depths, eps in profiles:
        z = np.asarray(depths, dtype=float)
        e = np.asarray(eps, dtype=float)
        if z.size < 2:
            continue
        i, j = np.triu_indices(z.size, k=1)
        h = np.abs(z[i] - z[j])
        g = 0.5 * (e[i] - e[j]) ** 2
        b = np.searchsorted(edges, h, side="right") - 1
        ok = (b >= 0) & (b < nb)
        sums += np.bincount(b[ok], weights=g[ok], minlength=nb)
        lag_sums += np.bincount(b[ok], weights=h[ok], minlength=nb)
        counts += np.bincount(b[ok], minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = sums / counts
        lags = np.where(counts > 0, lag_sums / counts, 0.5 * (edges[:-1] + edges[1:]))
    return Semivariogram(edges, lags, gamma, counts, min_pairs=min_pairs)


def fit_semivariogram(emp: Semivariogram, max_iter: int = 200) -> Semivariogram:
    """Pair-count weighted least squares of ``s (1 - exp(-h/r))``.

    Returns ``emp`` updated in place with ``range_r``, ``sill_s`` and their
    standard errors from the Gauss-Newton curvature at the optimum.
    """
    use = emp.usable
    if use.sum() < 4:
        raise ValueError(f"need at least 4 populated bins, have {int(use.sum())}")
    h = emp.lags[use]
    g = emp.gamma[use]
    w = np.sqrt(emp.counts[use].astype(float))

    gscale = float(np.max(np.abs(g))) or 1.0
    hscale = float(np.max(h))

    # fit in log-parameters scaled to O(1) so the solver sees a well-posed problem
    def resid(p):
        s, r = gscale * np.exp(p[0]), hscale * np.exp(p[1])
        return w * (exponential_semivariogram(h, s, r) - g) / gscale

    s0 = float(np.mean(g[-max(2, use.sum() // 3):]))
    r0 = float(h[np.argmin(np.abs(g - 0.63 * s0))]) if s0 > 0 else 0.3 * hscale
    p0 = np.log([max(s0, 1e-12) / gscale, max(r0, 1e-3 * hscale) / hscale])
    res = optimize.least_squares(resid, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_iter * 3)
    s, r = gscale * np.exp(res.x[0]), hscale * np.exp(res.x[1])
    if res.status <= 0:
        raise ConvergenceError(f"semivariogram fit did not converge: {res.message}", last_iterate=(r, s))

    # curvature in natural parameters (s, r)
    e = np.exp(-h / r)
    J = np.column_stack([(1 - e), -s * h / r**2 * e]) * w[:, None]
    rw = w * (exponential_semivariogram(h, s, r) - g)
    dof = max(h.size - 2, 1)
    s2 = float(rw @ rw) / dof
    try:
        cov = s2 * np.linalg.inv(J.T @ J)
        se_s, se_r = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        se_s = se_r = float("nan")
    emp.sill_s, emp.range_r, emp.se_s, emp.se_r = float(s), float(r), float(se_s), float(se_r)
    return emp
