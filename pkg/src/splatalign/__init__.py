"""Alignment of generated proxy splat objects to partial splat scans."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AnisotropicTransform,
    Camera,
    GaussianPrimitive,
    SimilarityTransform,
    SplatCloud,
)
from .errors import SplatAlignError  # noqa: E402

__all__ = [
    "AnisotropicTransform",
    "Camera",
    "GaussianPrimitive",
    "SimilarityTransform",
    "SplatAlignError",
    "SplatCloud",
    "__version__",
]
