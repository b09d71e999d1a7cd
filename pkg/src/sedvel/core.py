"""Closed-form median velocity model and layered-profile utilities.

The median profile holds ``vs0`` down to ``z* = 2.5 m`` and follows
``vs0 * (1 + k (z - z*)) ** (1/n)`` below it. ``k`` and ``n`` scale with Vs30
through a shared logistic transition; ``vs0`` is then fixed so that the
time-averaged velocity of the top 30 m equals Vs30 exactly.

All scalar functions broadcast over numpy arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .coefficients import Z_STAR, CoefficientSet

DEPTH_30 = 30.0


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ProfileError(ValueError):
    """Malformed or too-shallow layered profile."""


# --------------------------------------------------------------------------
# scaling relations
# --------------------------------------------------------------------------


def _check_vs30(vs30):
    vs30 = np.asarray(vs30, dtype=float)
    if np.any(~(vs30 > 0)):
        raise DomainError("vs30 must be positive")
    return vs30


def sigmoid(x):
    """Logistic function, overflow-safe for large ``|x|``."""
    return expit(x)


def softplus(x):
    """Smooth hinge ``ln(1 + exp(x))``; ``np.logaddexp`` keeps it finite for large x."""
    return np.logaddexp(0.0, x)


def vs30_scaled(vs30, coeffs: CoefficientSet):
    """Position on the shared Vs30 transition: ``(ln vs30 - vs30_ref) / vs30_w``."""
    vs30 = _check_vs30(vs30)
    return (np.log(vs30) - coeffs.vs30_ref) / coeffs.vs30_w


def n_of_vs30(vs30, coeffs: CoefficientSet):
    """Curvature parameter; 1 at soft sites rising to ``1 + s2`` at stiff ones."""
    return 1.0 + coeffs.s2 * sigmoid(vs30_scaled(vs30, coeffs))


def k_of_vs30(vs30, coeffs: CoefficientSet, dbr=0.0):
    """Slope parameter (1/m).

    ``dbr`` is the additive spatial adjustment to ``ln k`` (zero for the
    stationary model).
    """
    x = vs30_scaled(vs30, coeffs)
    dbr = np.asarray(dbr, dtype=float)
    if np.any(~np.isfinite(dbr)):
        raise DomainError("dbr must be finite")
    return np.exp(ln_k_of_scaled(x, coeffs.r1, coeffs.r2, coeffs.r3, coeffs.vs30_w) + dbr)


def ln_k_of_scaled(x, r1, r2, r3, vs30_w):
    return r1 + r2 * sigmoid(x) + r3 * vs30_w * softplus(x)


# --------------------------------------------------------------------------
# surface velocity from the Vs30 constraint
# --------------------------------------------------------------------------


def _power_integral(k, n, length):
    """``int_0^length (1 + k u)^(-1/n) du`` in a form continuous across n = 1."""
    a = 1.0 - 1.0 / n
    lg = np.log1p(k * length)
    with np.errstate(invalid="ignore", divide="ignore"):
        general = np.expm1(a * lg) / (a * k)
    return np.where(a == 0.0, lg / k, general)


def travel_time_factor(k, n, depth=DEPTH_30, z_star=Z_STAR):
    """``vs0 * int_0^depth dz / vs(z)`` for the median shape (units of m)."""
    return z_star + _power_integral(k, n, depth - z_star)


def vs0_of(vs30, k, n):
    """Surface velocity that makes the median profile's Vs30 equal ``vs30``."""
    vs30 = _check_vs30(vs30)
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(~(k > 0)):
        raise DomainError("k must be positive")
    if np.any(~(n >= 1)):
        raise DomainError("n must be >= 1")
    return vs30 * travel_time_factor(k, n) / DEPTH_30


def dln_vs0_dln_k(k, n):
    """Sensitivity of ``ln vs0`` to ``ln k`` at fixed Vs30 and n."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    length = DEPTH_30 - Z_STAR
    a = 1.0 - 1.0 / n
    factor = _power_integral(k, n, length)
    # k dF/dk = L (1 + kL)^(a-1) - F
    k_dfdk = length * np.exp((a - 1.0) * np.log1p(k * length)) - factor
    return k_dfdk / (Z_STAR + factor)


# --------------------------------------------------------------------------
# profile parameters and median evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfileParams:
    """Resolved parameters of a single median profile."""

    vs30: float
    k: float
    n: float
    vs0: float
    dbr: float = 0.0

    def __post_init__(self):
        if not (self.vs30 > 0 and self.k > 0 and self.n >= 1 and self.vs0 > 0):
            raise DomainError(f"invalid profile parameters {self}")

    @classmethod
    def from_vs30(cls, vs30: float, coeffs: CoefficientSet, dbr: float = 0.0) -> "ProfileParams":
        k = float(k_of_vs30(vs30, coeffs, dbr))
        n = float(n_of_vs30(vs30, coeffs))
        return cls(vs30=float(vs30), k=k, n=n, vs0=float(vs0_of(vs30, k, n)), dbr=float(dbr))


def median_shape(z, k, n, z_star=Z_STAR):
    """``vs(z) / vs0`` of the median profile."""
    dz = np.maximum(np.asarray(z, dtype=float) - z_star, 0.0)
    return np.exp(np.log1p(k * dz) / n)


def median_vs(z, params: ProfileParams):
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise DomainError("depth must be non-negative")
    return params.vs0 * median_shape(z, params.k, params.n)


def dln_vs_ddbr(z, params: ProfileParams):
    """Analytic ``d ln vs(z) / d dBr`` at fixed Vs30, including the vs0 compensation."""
    z = np.asarray(z, dtype=float)
    kz = params.k * np.maximum(z - Z_STAR, 0.0)
    return kz / (1.0 + kz) / params.n + dln_vs0_dln_k(params.k, params.n)


# --------------------------------------------------------------------------
# layered profiles
# --------------------------------------------------------------------------


class Provenance(str, enum.Enum):
    MEASURED = "measured"
    MODEL_MEDIAN = "model_median"
    MODEL_REALIZATION = "model_realization"
    BACKGROUND = "background"
    MERGED = "merged"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LayeredProfile:
    """Piecewise-constant Vs column starting at the ground surface.

    ``vs30`` is optional metadata; when absent it is computed from the layers.
    """

    thickness: np.ndarray
    vs: np.ndarray
    id: str = "profile"
    lat: float | None = None
    lon: float | None = None
    provenance: Provenance = Provenance.MEASURED
    vs30: float | None = None
    top_depth: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = _frozen(self.thickness)
        v = _frozen(self.vs)
        if h.ndim != 1 or h.shape != v.shape or h.size == 0:
            raise ProfileError("thickness and vs must be equal-length non-empty 1-D arrays")
        if np.any(~(h > 0)) or np.any(~np.isfinite(h)):
            raise ProfileError(f"{self.id}: layer thicknesses must be positive")
        if np.any(~(v > 0)) or np.any(~np.isfinite(v)):
            raise ProfileError(f"{self.id}: layer velocities must be positive")
        object.__setattr__(self, "thickness", h)
        object.__setattr__(self, "vs", v)
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        top = np.concatenate([[0.0], np.cumsum(h)[:-1]])
        object.__setattr__(self, "top_depth", _frozen(top))

    @property
    def depth(self) -> float:
        return float(self.top_depth[-1] + self.thickness[-1])

    @property
    def mid_depth(self) -> np.ndarray:
        return self.top_depth + 0.5 * self.thickness

    @property
    def bottom_depth(self) -> np.ndarray:
        return self.top_depth + self.thickness

    @property
    def n_layers(self) -> int:
        return self.vs.size

    @property
    def layers(self) -> list[dict]:
        return [
            {"top_depth": float(t), "thickness": float(h), "vs": float(v)}
            for t, h, v in zip(self.top_depth, self.thickness, self.vs)
        ]

    def replace(self, **changes) -> "LayeredProfile":
        kw = dict(
            thickness=self.thickness,
            vs=self.vs,
            id=self.id,
            lat=self.lat,
            lon=self.lon,
            provenance=self.provenance,
            vs30=self.vs30,
        )
        kw.update(changes)
        return LayeredProfile(**kw)

    def vs_at(self, z) -> np.ndarray:
        """Layer velocity at depth ``z``; interfaces belong to the layer below."""
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(self.bottom_depth, z, side="right")
        return self.vs[np.clip(idx, 0, self.n_layers - 1)]

    def site_vs30(self) -> float:
        """Vs30 from metadata, else from the layers (last layer extended if shallow)."""
        if self.vs30 is not None:
            return float(self.vs30)
        if self.depth >= DEPTH_30:
            return time_averaged_vs(self, DEPTH_30)
        tt = np.sum(self.thickness / self.vs) + (DEPTH_30 - self.depth) / self.vs[-1]
        return DEPTH_30 / tt

    def __eq__(self, other):
        if not isinstance(other, LayeredProfile):
            return NotImplemented
        return (
            np.array_equal(self.thickness, other.thickness)
            and np.array_equal(self.vs, other.vs)
            and (self.id, self.lat, self.lon, self.provenance, self.vs30)
            == (other.id, other.lat, other.lon, other.provenance, other.vs30)
        )

    __hash__ = None


@dataclass(frozen=True)
class DiscretizationRule:
    """Geometric layering: ``top`` m at the surface, growing by ``growth`` up to ``cap`` m."""

    top: float = 0.5
    growth: float = 1.05
    cap: float = 5.0

    def __post_init__(self):
        if not (self.top > 0 and self.growth >= 1 and self.cap >= self.top):
            raise DomainError(f"invalid discretization rule {self}")

    def thicknesses(self, depth_max: float) -> np.ndarray:
        out = []
        total = 0.0
        h = self.top
        while total < depth_max - 1e-9 * max(depth_max, 1.0):
            step = min(h, self.cap, depth_max - total)
            out.append(step)
            total += step
            h *= self.growth
        out = np.array(out)
        # absorb floating drift so the last bottom lands exactly on depth_max
        out[-1] = depth_max - np.sum(out[:-1])
        return out


DEFAULT_RULE = DiscretizationRule()


def discretize(
    params: ProfileParams,
    depth_max: float,
    rule: DiscretizationRule = DEFAULT_RULE,
    *,
    id: str = "median",
    lat: float | None = None,
    lon: float | None = None,
) -> LayeredProfile:
    """Layered column of the median profile, velocities taken at layer mid-depth."""
    if not depth_max > 0:
        raise DomainError("depth_max must be positive")
    h = rule.thicknesses(float(depth_max))
    mid = np.cumsum(h) - 0.5 * h
    return LayeredProfile(
        thickness=h,
        vs=median_vs(mid, params),
        id=id,
        lat=lat,
        lon=lon,
        provenance=Provenance.MODEL_MEDIAN,
        vs30=params.vs30,
    )


def travel_time(profile: LayeredProfile, depth: float) -> float:
    if not depth > 0:
        raise DomainError("depth must be positive")
    if depth > profile.depth * (1 + 1e-12):
        raise ProfileError(f"{profile.id}: profile depth {profile.depth} m < requested {depth} m")
    h_in = np.clip(depth - profile.top_depth, 0.0, profile.thickness)
    return float(np.sum(h_in / profile.vs))


def time_averaged_vs(profile: LayeredProfile, depth: float = DEPTH_30) -> float:
    """Harmonic (travel-time) average velocity of the top ``depth`` metres."""
    return depth / travel_time(profile, depth)


def fp_quarter_wavelength(profile: LayeredProfile, depth: float | None = None) -> float:
    """Quarter-wavelength fundamental frequency ``1 / (4 * travel time)`` (Hz).

    Defaults to the full profile depth.
    """
    if depth is None:
        depth = profile.depth
    return 1.0 / (4.0 * travel_time(profile, depth))


def residuals(measured: LayeredProfile, params: ProfileParams) -> tuple[np.ndarray, np.ndarray]:
    """ln-residuals of a measured column against the median, at layer mid-depths.

    Returns ``(mid_depth, eps)``.
    """
    mid = measured.mid_depth
    return mid, np.log(measured.vs) - np.log(median_vs(mid, params))


def median_profile(
    vs30: float,
    coeffs: CoefficientSet,
    depth_max: float,
    dbr: float = 0.0,
    rule: DiscretizationRule = DEFAULT_RULE,
    **meta,
) -> LayeredProfile:
    """Convenience wrapper: resolve parameters from Vs30 and discretize."""
    return discretize(ProfileParams.from_vs30(vs30, coeffs, dbr), depth_max, rule, **meta)


__all__ = [
    "DEPTH_30",
    "DEFAULT_RULE",
    "DiscretizationRule",
    "DomainError",
    "LayeredProfile",
    "ProfileError",
    "ProfileParams",
    "Provenance",
    "discretize",
    "dln_vs_ddbr",
    "dln_vs0_dln_k",
    "fp_quarter_wavelength",
    "k_of_vs30",
    "median_profile",
    "median_shape",
    "median_vs",
    "n_of_vs30",
    "residuals",
    "sigmoid",
    "softplus",
    "time_averaged_vs",
    "travel_time",
    "vs0_of",
    "vs30_scaled",
]
