"""Vs30-conditioned sedimentary shear-wave velocity models.

Submodules
----------
core
    Median profile, Vs30 constraint, layered columns and quarter-wavelength fp.
geostat
    Slope-adjustment kriging, along-depth residual sampling and semivariograms.
calibrate
    Priors, likelihood, MAP fits and synthetic datasets.
merge
    Background model queries, profile splicing and depth-slice rasters.
siteresponse
    Linear SH transfer functions, Ricker ensembles, intensity measures and GOF.
estimators
    Estimator-style wrappers over the above.
cli
    The ``sedvel`` command.
"""

from .coefficients import CoefficientSet, load_coefficients, preset
from .core import LayeredProfile, ProfileParams, median_profile

__version__ = "0.1.0"

__all__ = ["CoefficientSet", "LayeredProfile", "ProfileParams", "load_coefficients", "median_profile", "preset", "__version__"]
