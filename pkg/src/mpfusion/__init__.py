"""Pixel-weighted multi-pose fusion for metal artifact reduction in CT."""

from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    FormatError,
    InvalidTransformError,
    InvalidWeightsError,
    MPFError,
    NonFiniteError,
    NumericalError,
    SolverError,
    UndefinedRatioError,
)
from .geometry import PoseTransform, Volume, apply_inverse, apply_transform
from .projector import ScanGeometry, Sinogram, backproject, gram_apply, project

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "DivergenceError",
    "FormatError",
    "InvalidTransformError",
    "InvalidWeightsError",
    "MPFError",
    "NonFiniteError",
    "NumericalError",
    "PoseTransform",
    "ScanGeometry",
    "Sinogram",
    "SolverError",
    "UndefinedRatioError",
    "Volume",
    "apply_inverse",
    "apply_transform",
    "backproject",
    "gram_apply",
    "project",
]
