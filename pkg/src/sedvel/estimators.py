"""Estimator-style wrappers over the model, kriging and semivariogram code.

The classes follow the scikit-learn conventions: hyperparameters are set in
``__init__`` and exposed through ``get_params``/``set_params``, ``fit``
returns ``self``, and fitted state lives in attributes with a trailing
underscore. Inputs that are not plain arrays (layered profiles) are checked
by :func:`check_profiles`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import calibrate, core, geostat
from .coefficients import CoefficientSet, resolve_coefficients
from .core import LayeredProfile


def check_profiles(profiles, min_count: int = 1, need_coords: bool = False) -> list[LayeredProfile]:
    """Validate a collection of layered profiles and return it as a list.

    Parameters
    ----------
    profiles : iterable of LayeredProfile
    min_count : int
        Minimum number of profiles required.
    need_coords : bool
        Require latitude and longitude on every profile.

    Raises
    ------
    TypeError
        If an element is not a ``LayeredProfile``.
    ValueError
        If there are too few profiles, duplicate ids, or missing coordinates.
    """
    if isinstance(profiles, LayeredProfile):
        profiles = [profiles]
    out = list(profiles)
    for p in out:
        if not isinstance(p, LayeredProfile):
            raise TypeError(f"expected LayeredProfile, got {type(p).__name__}")
    if len(out) < min_count:
        raise ValueError(f"need at least {min_count} profiles, got {len(out)}")
    ids = [p.id for p in out]
    if len(set(ids)) != len(ids):
        raise ValueError("profile ids must be unique")
    if need_coords:
        missing = [p.id for p in out if p.lat is None or p.lon is None]
        if missing:
            raise ValueError(f"profiles without coordinates: {missing[:5]}")
    return out


def _check_columns(X, n_min: int, n_max: int, what: str) -> np.ndarray:
    X = check_array(X, dtype=float, ensure_2d=True)
    if not n_min <= X.shape[1] <= n_max:
        raise ValueError(f"{what} expects {n_min}-{n_max} columns, got {X.shape[1]}")
    return X


class SedimentaryVelocityModel(TransformerMixin, BaseEstimator):
    """Vs30-conditioned median velocity model, fitted by penalized MAP.

    Parameters
    ----------
    model : {"stationary", "spatial"}
    coefficients : CoefficientSet, str or None
        Starting coefficients and, for the spatial model, the fixed block.
        A preset name or a path is resolved on use. ``None`` means the
        stationary preset. An unfitted estimator predicts with these.
    priors : dict or None
        Prior per parameter; ``None`` uses the default priors.
    n_restarts, max_iter, seed : int
        Optimizer controls.
    vs30_source : {"profile", "metadata"}
        Vs30 used to condition each training profile.

    Attributes
    ----------
    result_ : FitResult
    coefficients_ : CoefficientSet
    field_ : SpatialField or None
        Training slope adjustments of a spatial fit.
    """

    def __init__(self, model="stationary", coefficients=None, priors=None, n_restarts=5, max_iter=500, seed=0, vs30_source="profile"):
        self.model = model
        self.coefficients = coefficients
        self.priors = priors
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.seed = seed
        self.vs30_source = vs30_source

    def _base(self) -> CoefficientSet:
        if isinstance(self.coefficients, CoefficientSet):
            return self.coefficients
        return resolve_coefficients(self.coefficients)

    def _active(self) -> tuple[CoefficientSet, geostat.SpatialField | None]:
        if hasattr(self, "coefficients_"):
            return self.coefficients_, self.field_
        return self._base(), None

    def fit(self, profiles, y=None):
        """Fit the model to measured profiles; ``y`` is ignored."""
        if self.model not in ("stationary", "spatial"):
            raise ValueError(f"unknown model {self.model!r}")
        profiles = check_profiles(profiles, need_coords=self.model == "spatial")
        options = calibrate.FitOptions(
            max_iter=self.max_iter, n_restarts=self.n_restarts, seed=self.seed, vs30_source=self.vs30_source
        )
        base = self._base()
        if self.model == "stationary":
            result = calibrate.map_fit(profiles, self.priors, "stationary", init=base, options=options)
            self.field_ = None
        else:
            result = calibrate.map_fit(profiles, self.priors, "spatial", options=options, base=base)
            self.field_ = result.spatial_field()
        self.result_ = result
        self.coefficients_ = result.coefficients
        self.n_features_in_ = 1
        return self

    def _dbr(self, lat, lon) -> np.ndarray:
        _, field = self._active()
        if field is None:
            return np.zeros(np.shape(lat))
        x, y = field.project(lat, lon)
        return geostat.krige_dbr(field, x, y)[0]

    def predict(self, X) -> np.ndarray:
        """Median vs (m/s).

        ``X`` has columns ``(vs30, depth)`` or ``(vs30, depth, lat, lon)``.
        Coordinates only matter for a fitted spatial model, where they select
        the kriged slope adjustment.
        """
        X = _check_columns(X, 2, 4, "predict")
        if X.shape[1] == 3:
            raise ValueError("give both lat and lon, or neither")
        coeffs, _ = self._active()
        dbr = self._dbr(X[:, 2], X[:, 3]) if X.shape[1] == 4 else np.zeros(X.shape[0])
        out = np.empty(X.shape[0])
        for i, (vs30, z) in enumerate(X[:, :2]):
            out[i] = core.median_vs(z, core.ProfileParams.from_vs30(vs30, coeffs, dbr[i]))
        return out

    def profile(self, vs30: float, depth_max: float, lat=None, lon=None, rule=core.DEFAULT_RULE, id="median") -> LayeredProfile:
        """Discretized median column at a site."""
        coeffs, _ = self._active()
        dbr = 0.0 if lat is None else float(self._dbr(np.array([lat]), np.array([lon]))[0])
        return core.median_profile(vs30, coeffs, depth_max, dbr, rule, id=id, lat=lat, lon=lon)

    def transform(self, profiles):
        """Depth residuals ``[(mid_depth, eps), ...]`` of each profile against its median."""
        profiles = check_profiles(profiles)
        coeffs, _ = self._active()
        out = []
        for p in profiles:
            dbr = 0.0 if p.lat is None else float(self._dbr(np.array([p.lat]), np.array([p.lon]))[0])
            vs30 = calibrate.profile_vs30(p, self.vs30_source)
            out.append(core.residuals(p, core.ProfileParams.from_vs30(vs30, coeffs, dbr)))
        return out

    def score(self, profiles, y=None) -> float:
        """Mean Gaussian log-likelihood per layer."""
        profiles = check_profiles(profiles)
        coeffs, _ = self._active()
        dbr = None
        if self.model == "spatial" and hasattr(self, "coefficients_"):
            dbr = np.array([0.0 if p.lat is None else float(self._dbr(np.array([p.lat]), np.array([p.lon]))[0]) for p in profiles])
        n = sum(p.n_layers for p in profiles)
        return calibrate.log_likelihood(profiles, coeffs, dbr=dbr, vs30_source=self.vs30_source) / n


class SlopeAdjustmentKriger(BaseEstimator):
    """Gaussian-process interpolation of the slope adjustment dBr.

    Parameters
    ----------
    omega : float
        Marginal standard deviation of dBr.
    ell : float
        Correlation length in km.
    coords : {"latlon", "km"}
        Whether ``X`` holds ``(lat, lon)`` in degrees or projected ``(x, y)`` in km.
    """

    def __init__(self, omega=0.3156, ell=1.9104, coords="latlon"):
        self.omega = omega
        self.ell = ell
        self.coords = coords

    def _xy(self, X, projection):
        if self.coords == "km":
            return X[:, 0], X[:, 1]
        if self.coords != "latlon":
            raise ValueError(f"coords must be 'latlon' or 'km', got {self.coords!r}")
        return projection.forward(X[:, 0], X[:, 1])

    def fit(self, X, y, sample_sd=None):
        """Condition on training values ``y`` at locations ``X``.

        ``sample_sd`` is the per-point observation sd (zero when omitted).
        """
        X = _check_columns(X, 2, 2, "fit")
        y = check_array(y, ensure_2d=False, dtype=float)
        if y.shape != (X.shape[0],):
            raise ValueError("y must have one value per row of X")
        sd = np.zeros_like(y) if sample_sd is None else check_array(sample_sd, ensure_2d=False, dtype=float)
        projection = geostat.LocalProjection.about_centroid(X[:, 0], X[:, 1]) if self.coords == "latlon" else None
        x, yy = self._xy(X, projection)
        self.field_ = geostat.SpatialField(x, yy, y, sd, self.omega, self.ell, projection)
        self.n_features_in_ = 2
        return self

    @classmethod
    def from_field(cls, field: geostat.SpatialField):
        est = cls(field.omega, field.ell, "latlon" if field.projection is not None else "km")
        est.field_ = field
        est.n_features_in_ = 2
        return est

    def predict(self, X, return_std: bool = False):
        check_is_fitted(self, "field_")
        X = _check_columns(X, 2, 2, "predict")
        x, y = self._xy(X, self.field_.projection)
        mean, sd = geostat.krige_dbr(self.field_, x, y)
        return (mean, sd) if return_std else mean


class DepthSemivariogram(BaseEstimator):
    """Exponential semivariogram fitted to within-profile residuals.

    ``fit`` takes ``[(depths, eps), ...]``, for example the output of
    ``SedimentaryVelocityModel.transform``.
    """

    def __init__(self, bin_edges=None, min_pairs=30, max_iter=200):
        self.bin_edges = bin_edges
        self.min_pairs = min_pairs
        self.max_iter = max_iter

    def fit(self, residuals, y=None):
        edges = geostat.DEFAULT_BIN_EDGES if self.bin_edges is None else np.asarray(self.bin_edges, dtype=float)
        emp = geostat.empirical_semivariogram(residuals, edges, self.min_pairs)
        self.semivariogram_ = geostat.fit_semivariogram(emp, self.max_iter)
        self.range_r_ = self.semivariogram_.range_r
        self.sill_s_ = self.semivariogram_.sill_s
        return self

    def predict(self, h) -> np.ndarray:
        """Model semivariance at lags ``h`` (m)."""
        check_is_fitted(self, "semivariogram_")
        return geostat.exponential_semivariogram(h, self.sill_s_, self.range_r_)

    def sample(self, depths, n_samples=1, total_var=None, random_state=None) -> np.ndarray:
        """Draw residual vectors with the fitted structure, shape ``(n_samples, len(depths))``."""
        check_is_fitted(self, "semivariogram_")
        tv = self.sill_s_ if total_var is None else total_var
        return geostat.sample_depth_residuals(depths, self.sill_s_, self.range_r_, tv, random_state, size=n_samples)


__all__ = ["DepthSemivariogram", "SedimentaryVelocityModel", "SlopeAdjustmentKriger", "check_profiles"]
