"""Multi-resolution thin-plate spline basis functions for spatial random-effects models."""

from .basis import MrtsBasis, compute_basis, top_eigenpairs
from .estimation import (
    DataPanel,
    SreFit,
    aic,
    fit_ml,
    model_covariance,
    profile_negloglik,
    sample_moment,
    select_K,
)
from .prediction import KrigingOperator, build_operator, krige
from .tps import LocationSet, TpsSystem, build_system, roughness, tps_kernel

__version__ = "0.1.0"

__all__ = [
    "DataPanel",
    "KrigingOperator",
    "LocationSet",
    "MrtsBasis",
    "SreFit",
    "TpsSystem",
    "aic",
    "build_operator",
    "build_system",
    "compute_basis",
    "fit_ml",
    "krige",
    "model_covariance",
    "profile_negloglik",
    "roughness",
    "sample_moment",
    "select_K",
    "top_eigenpairs",
    "tps_kernel",
]
