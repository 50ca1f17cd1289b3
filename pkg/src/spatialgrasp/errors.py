"""Exception hierarchy shared by every module.

``UsageError`` marks caller mistakes (bad arguments, bad config) and maps to
CLI exit code 2; everything else derived from ``SpatialGraspError`` is a
runtime/domain failure and maps to exit code 1.
"""

from __future__ import annotations


class SpatialGraspError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(SpatialGraspError, ValueError):
    """Invalid arguments or configuration supplied by the caller."""


class ShapeError(UsageError):
    """Array shapes or vector lengths do not agree with the configuration."""


class FormatError(SpatialGraspError):
    """Malformed PPM/PFM/tensor file. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ValidationError(SpatialGraspError):
    """A manifest or record violates its schema or invariants."""

    def __init__(self, message: str, *, field: str | None = None, frame: int | None = None):
        self.field = field
        self.frame = frame
        where = []
        if frame is not None:
            where.append(f"frame {frame}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class GeometryError(SpatialGraspError):
    """Geometric precondition failure (non-orthonormal matrix, bad pose...)."""


class InvalidDepthError(GeometryError):
    """Depth is non-positive, infinite or NaN where a metric depth is required."""


class NoDepthError(GeometryError):
    """No valid depth sample is available around the requested pixel."""


class BoundsError(GeometryError):
    """A pixel coordinate lies outside the image."""
