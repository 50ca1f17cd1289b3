"""Grasp-prompt perception and diffusion-policy toolkit.

Submodules: ``rng``, ``raster`` and ``tensorfile`` (foundation),
``augfusion``, ``geometry``, ``dataset``, ``encoder``, ``policy``,
``gradcheck``, ``bench`` and ``cli``.
"""

from .errors import (BoundsError, FormatError, GeometryError, InvalidDepthError, NoDepthError, ShapeError,
                     SpatialGraspError, UsageError, ValidationError)
from .geometry import GraspBox, GraspPrompt, Intrinsics, Quaternion, box_to_prompt
from .raster import DepthMap, Image, load_depth, load_image, save_depth, save_image
from .rng import RandomStream

__all__ = [
    "BoundsError", "FormatError", "GeometryError", "InvalidDepthError", "NoDepthError", "ShapeError",
    "SpatialGraspError", "UsageError", "ValidationError",
    "GraspBox", "GraspPrompt", "Intrinsics", "Quaternion", "box_to_prompt",
    "DepthMap", "Image", "load_depth", "load_image", "save_depth", "save_image",
    "RandomStream",
]

__version__ = "0.1.0"
