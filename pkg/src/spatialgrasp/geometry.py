"""Oriented 2D grasp boxes to 6-DoF grasp prompts.

Pinhole back-projection of the box center at its sampled depth, a top-down
rotation built from the in-plane angle, and a Hamilton quaternion (x, y, z, w)
with ``w >= 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BoundsError, GeometryError, InvalidDepthError, NoDepthError, UsageError
from .raster import DepthMap

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise UsageError(f"intrinsic {name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if not (self.fx > 0 and self.fy > 0):
            raise UsageError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> Intrinsics:
        """Intrinsics for an image resized by ``factor`` (pixel-center convention)."""
        return Intrinsics(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor)

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_json(cls, doc: dict) -> Intrinsics:
        return cls(doc["fx"], doc["fy"], doc["cx"], doc["cy"])


def fold_angle(theta: float) -> float:
    """Fold an angle into (-pi/2, pi/2]; grasp rectangles repeat every pi."""
    folded = math.remainder(theta, math.pi)  # [-pi/2, pi/2]
    if folded <= -math.pi / 2:
        folded += math.pi
    return folded


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class GraspBox:
    """Oriented rectangle (x, y, w, h, theta) in pixels/radians plus confidence."""

    x: float
    y: float
    w: float
    h: float
    theta: float
    confidence: float = 1.0

    def __post_init__(self):
        for name in ("x", "y", "w", "h", "theta", "confidence"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise UsageError(f"grasp box {name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if not (self.w > 0 and self.h > 0):
            raise UsageError(f"grasp box dimensions must be positive, got w={self.w}, h={self.h}")
        if not -math.pi / 2 < self.theta <= math.pi / 2:
            raise UsageError(f"grasp box theta {self.theta} outside (-pi/2, pi/2]; use fold_angle()")
        if not 0.0 <= self.confidence <= 1.0:
            raise UsageError(f"grasp box confidence must lie in [0, 1], got {self.confidence}")

    @classmethod
    def folded(cls, x, y, w, h, theta, confidence=1.0) -> GraspBox:
        return cls(x, y, w, h, fold_angle(float(theta)), confidence)

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "theta": self.theta,
                "confidence": self.confidence}

    @classmethod
    def from_json(cls, doc: dict) -> GraspBox:
        return cls(doc["x"], doc["y"], doc["w"], doc["h"], doc["theta"], doc.get("confidence", 1.0))


@dataclass(frozen=True)
class Quaternion:
    qx: float
    qy: float
    qz: float
    qw: float

    def __post_init__(self):
        norm = math.sqrt(self.qx**2 + self.qy**2 + self.qz**2 + self.qw**2)
        if not abs(norm - 1.0) <= 1e-6:
            raise GeometryError(f"quaternion norm is {norm}, expected 1")

    @classmethod
    def from_array(cls, q: Sequence[float]) -> Quaternion:
        return cls(*(float(v) for v in q))

    def as_array(self) -> np.ndarray:
        return np.array([self.qx, self.qy, self.qz, self.qw])

    def to_matrix(self) -> np.ndarray:
        return quaternion_to_matrix(self.as_array())


def canonical_quaternion(q: np.ndarray) -> np.ndarray:
    """Unit-normalize and pick the sign with ``w >= 0`` (ties: first nonzero of x, y, z positive)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    elif q[3] == 0:
        lead = next((v for v in q[:3] if v != 0), 1.0)
        if lead < 0:
            q = -q
    return q + 0.0  # normalizes -0.0


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def check_rotation(R: np.ndarray, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise GeometryError(f"rotation must be a finite 3x3 matrix, got shape {R.shape}")
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > tol:
        raise GeometryError(f"matrix is not orthonormal (max |R^T R - I| = {err:.3g})")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise GeometryError(f"matrix is not a proper rotation (det = {det:.12g})")
    return R


def project_pixel(intr: Intrinsics, px: Sequence[float], z: float) -> np.ndarray:
    """Back-project pixel ``(u, v)`` at depth ``z`` to a camera-frame point."""
    z = float(z)
    if not (math.isfinite(z) and z > 0):
        raise InvalidDepthError(f"depth must be positive and finite, got {z}")
    u, v = float(px[0]), float(px[1])
    return np.array([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z])


def project_point(intr: Intrinsics, point: Sequence[float]) -> tuple[float, float]:
    """Forward pinhole projection of a camera-frame point with ``z > 0``."""
    x, y, z = (float(c) for c in point)
    if not (math.isfinite(z) and z > 0):
        raise InvalidDepthError(f"point must lie in front of the camera, got z={z}")
    return intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy


def rotation_from_theta(theta: float) -> np.ndarray:
    """Top-down grasp frame: x = (cos, sin, 0), z = optical axis, y = z cross x."""
    c, s = math.cos(theta), math.sin(theta)
    x_axis = np.array([c, s, 0.0])
    z_axis = np.array([0.0, 0.0, 1.0])
    y_axis = np.array([-s, c, 0.0])  # z x x, written out
    return np.column_stack([x_axis, y_axis, z_axis])


def matrix_to_quaternion(R: np.ndarray) -> Quaternion:
    """Shepperd's method: branch on the largest of trace and the diagonal."""
    R = check_rotation(R)
    m00, m11, m22 = R[0, 0], R[1, 1], R[2, 2]
    trace = m00 + m11 + m22
    pick = int(np.argmax([trace, m00, m11, m22]))
    if pick == 0:
        s = 2.0 * math.sqrt(1.0 + trace)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif pick == 1:
        s = 2.0 * math.sqrt(1.0 + m00 - m11 - m22)
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif pick == 2:
        s = 2.0 * math.sqrt(1.0 - m00 + m11 - m22)
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 - m00 - m11 + m22)
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    return Quaternion.from_array(canonical_quaternion(np.array(q)))


def quaternion_angle(a: Quaternion, b: Quaternion) -> float:
    """Geodesic angle in [0, pi] between the rotations ``a`` and ``b``."""
    dot = abs(float(np.dot(a.as_array(), b.as_array())))
    return 2.0 * math.acos(min(1.0, dot))


def gripper_width_from_box(box: GraspBox, z: float, intr: Intrinsics, axis: str = "w") -> float:
    """Metric jaw opening: the box's ``w`` (or ``h``) extent back-projected with fx."""
    z = float(z)
    if not (math.isfinite(z) and z > 0):
        raise InvalidDepthError(f"depth must be positive and finite, got {z}")
    if axis not in ("w", "h"):
        raise UsageError(f"gripper width axis must be 'w' or 'h', got {axis!r}")
    extent = box.w if axis == "w" else box.h
    return extent * z / intr.fx


def sample_depth(depth: DepthMap, x: float, y: float, mode: str = "bilinear") -> float:
    """Depth at pixel ``(x, y)``; pixel (col, row) centers sit at integer coordinates.

    Bilinear mode weights the four surrounding cells, drops NaN cells and
    renormalizes the remaining weights. If every valid neighbor has zero
    weight the valid neighbors are averaged uniformly.
    """
    h, w = depth.values.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise BoundsError(f"pixel ({x}, {y}) lies outside the {w}x{h} depth map")
    if mode == "nearest":
        value = depth.values[int(math.floor(y + 0.5)), int(math.floor(x + 0.5))]
        if math.isnan(value):
            raise NoDepthError(f"no valid depth at pixel ({x}, {y})")
        return float(value)
    if mode != "bilinear":
        raise UsageError(f"depth sampling mode must be 'bilinear' or 'nearest', got {mode!r}")
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    cells = (
        (depth.values[y0, x0], (1 - fx) * (1 - fy)),
        (depth.values[y0, x1], fx * (1 - fy)),
        (depth.values[y1, x0], (1 - fx) * fy),
        (depth.values[y1, x1], fx * fy),
    )
    valid = [(v, wt) for v, wt in cells if not math.isnan(v)]
    if not valid:
        raise NoDepthError(f"all depth neighbors of pixel ({x}, {y}) are invalid")
    total = sum(wt for _, wt in valid)
    if total == 0.0:
        return float(sum(v for v, _ in valid) / len(valid))
    return float(sum(v * wt for v, wt in valid) / total)


@dataclass(frozen=True)
class GraspPrompt:
    position: tuple[float, float, float]
    orientation: Quaternion
    gripper_width: float
    confidence: float = 1.0

    def __post_init__(self):
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 3 or not all(math.isfinite(c) for c in pos):
            raise GeometryError(f"grasp position must be a finite 3-vector, got {self.position}")
        if not pos[2] > 0:
            raise GeometryError(f"grasp position must lie in front of the camera, got z={pos[2]}")
        if not (math.isfinite(self.gripper_width) and self.gripper_width > 0):
            raise GeometryError(f"gripper width must be positive, got {self.gripper_width}")
        if not 0.0 <= self.confidence <= 1.0:
            raise GeometryError(f"confidence must lie in [0, 1], got {self.confidence}")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "gripper_width", float(self.gripper_width))
        object.__setattr__(self, "confidence", float(self.confidence))

    def as_vector(self) -> np.ndarray:
        """(x, y, z, qx, qy, qz, qw, width, confidence)."""
        return np.concatenate([self.position, self.orientation.as_array(), [self.gripper_width, self.confidence]])

    def to_json(self) -> str:
        """Single-line JSON with 17-significant-digit floats."""
        def num(v: float) -> str:
            return format(v, ".17g")
        pos = ",".join(num(v) for v in self.position)
        quat = ",".join(num(v) for v in self.orientation.as_array())
        return (f'{{"position":[{pos}],"quaternion":[{quat}],'
                f'"width":{num(self.gripper_width)},"confidence":{num(self.confidence)}}}')

    @classmethod
    def from_json(cls, text: str | dict) -> GraspPrompt:
        doc = json.loads(text) if isinstance(text, str) else text
        return cls(tuple(doc["position"]), Quaternion.from_array(doc["quaternion"]),
                   doc["width"], doc.get("confidence", 1.0))


def box_to_prompt(box: GraspBox, depth: DepthMap, intr: Intrinsics, *,
                  depth_mode: str = "bilinear", width_axis: str = "w") -> GraspPrompt:
    z = sample_depth(depth, box.x, box.y, depth_mode)
    position = project_pixel(intr, (box.x, box.y), z)
    orientation = matrix_to_quaternion(rotation_from_theta(box.theta))
    width = gripper_width_from_box(box, z, intr, width_axis)
    return GraspPrompt(tuple(position), orientation, width, box.confidence)
