"""Model coefficient sets and the bundled presets.

A coefficient file is a flat JSON document with exactly the keys in
``COEFFICIENT_KEYS``. Optional blocks (spatial ``ell_km``/``omega`` and
along-depth ``range_r_m``/``sill_s``) may be ``null``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from importlib import resources
from pathlib import Path

Z_STAR = 2.5

COEFFICIENT_KEYS = (
    "vs30_ref",
    "vs30_w",
    "r1",
    "r2",
    "r3",
    "s2",
    "sigma",
    "z_star",
    "ell_km",
    "omega",
    "range_r_m",
    "sill_s",
)

PRESETS = {
    "stationary": "stationary_tab1.json",
    "spatial": "spatial_tab2.json",
    "stationary-mean": "stationary_tab1_mean.json",
    "spatial-mean": "spatial_tab2_mean.json",
}


class CoefficientError(ValueError):
    """Raised for invalid or malformed coefficient sets."""


@dataclass(frozen=True)
class CoefficientSet:
    """Fitted scalars of the median velocity model.

    ``ell_km``/``omega`` form the optional spatial block, ``range_r_m``/``sill_s``
    the optional along-depth block. ``dbr_training`` carries per-profile
    slope adjustments when a spatial fit produced them.
    """

    vs30_ref: float
    vs30_w: float
    r1: float
    r2: float
    r3: float
    s2: float
    sigma: float
    z_star: float = Z_STAR
    ell_km: float | None = None
    omega: float | None = None
    range_r_m: float | None = None
    sill_s: float | None = None
    dbr_training: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("vs30_ref", "vs30_w", "r1", "r2", "r3", "s2", "sigma"):
            if not math.isfinite(getattr(self, name)):
                raise CoefficientError(f"{name} must be finite")
        if self.vs30_w <= 0 or self.s2 <= 0 or self.sigma <= 0:
            raise CoefficientError("vs30_w, s2 and sigma must be positive")
        if self.r2 < 0 or self.r3 < 0:
            raise CoefficientError("r2 and r3 must be non-negative")
        if self.z_star != Z_STAR:
            raise CoefficientError(f"z_star is fixed at {Z_STAR} m, got {self.z_star}")
        if (self.ell_km is None) != (self.omega is None):
            raise CoefficientError("ell_km and omega must be given together")
        if self.ell_km is not None and (self.ell_km <= 0 or self.omega < 0):
            raise CoefficientError("spatial block requires ell_km > 0 and omega >= 0")
        if (self.range_r_m is None) != (self.sill_s is None):
            raise CoefficientError("range_r_m and sill_s must be given together")
        if self.range_r_m is not None and (self.range_r_m <= 0 or self.sill_s < 0):
            raise CoefficientError("depth block requires range_r_m > 0 and sill_s >= 0")

    @property
    def has_spatial(self) -> bool:
        return self.ell_km is not None

    @property
    def has_depth(self) -> bool:
        return self.range_r_m is not None

    def with_values(self, **changes) -> "CoefficientSet":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("dbr_training")
        return d


def _from_mapping(data: dict) -> CoefficientSet:
    keys = set(data)
    expected = set(COEFFICIENT_KEYS)
    if keys != expected:
        missing = sorted(expected - keys)
        extra = sorted(keys - expected)
        raise CoefficientError(f"coefficient keys mismatch: missing={missing} extra={extra}")
    values = {}
    for k in COEFFICIENT_KEYS:
        v = data[k]
        values[k] = None if v is None else float(v)
    return CoefficientSet(**values)


def load_coefficients(path: str | Path) -> CoefficientSet:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CoefficientError(f"{path}: {exc}") from exc
    return _from_mapping(data)


def save_coefficients(coeffs: CoefficientSet, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(coeffs.to_dict(), fh, indent=2)
        fh.write("\n")


def preset(name: str = "stationary") -> CoefficientSet:
    """Load a bundled preset (``stationary``, ``spatial`` or their ``-mean`` variants)."""
    try:
        fname = PRESETS[name]
    except KeyError:
        raise CoefficientError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    text = resources.files("sedvel.data").joinpath(fname).read_text()
    return _from_mapping(json.loads(text))


def resolve_coefficients(spec: str | Path | None) -> CoefficientSet:
    """Accept a preset name or a path to a coefficient file."""
    if spec is None:
        return preset("stationary")
    if str(spec) in PRESETS:
        return preset(str(spec))
    return load_coefficients(spec)
