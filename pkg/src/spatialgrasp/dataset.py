"""Episode manifests, annotation-to-prompt conversion, and a synthetic
oracle grasp detector used by the exposure benchmark.

Manifest schema (one JSON file per episode, paths relative to the file)::

    {
      "schema_version": 1,
      "episode_id": "pickbig-000",
      "intrinsics": {"fx": 600, "fy": 600, "cx": 320, "cy": 240},
      "depth_scale": 1.0,
      "frames": [
        {"rgb_path": "rgb/000.ppm", "depth_path": "depth/000.pfm",
         "state": {"ee_position": [x, y, z], "ee_orientation": [qx, qy, qz, qw],
                   "gripper_status": 1.0},
         "grasp_box": {"x": 320, "y": 240, "w": 60, "h": 20, "theta": 0.0,
                       "confidence": 0.9},
         "task_prompt": "pick_big"}
      ]
    }

``grasp_box`` may be ``null`` or absent. A dataset index lists episodes::

    {"schema_version": 1, "episodes": ["ep000/manifest.json", ...]}
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import GeometryError, SpatialGraspError, UsageError, ValidationError
from .geometry import GraspBox, GraspPrompt, Intrinsics, Quaternion, box_to_prompt, fold_angle, quaternion_angle
from .raster import DepthMap, Image, image_size, load_depth
from .rng import RandomStream

SCHEMA_VERSION = 1
UNIT_QUATERNION_TOL = 1e-6


@dataclass(frozen=True)
class RobotState:
    ee_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ee_orientation: Quaternion = Quaternion(0.0, 0.0, 0.0, 1.0)
    gripper_status: float = 1.0  # 0 closed, 1 open

    def __post_init__(self):
        if not 0.0 <= self.gripper_status <= 1.0:
            raise UsageError(f"gripper_status must lie in [0, 1], got {self.gripper_status}")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.ee_position, self.ee_orientation.as_array(), [self.gripper_status]])


@dataclass(frozen=True)
class Frame:
    rgb_path: Path
    depth_path: Path
    state: RobotState
    grasp_box: GraspBox | None
    task_prompt: str


@dataclass(frozen=True)
class EpisodeManifest:
    episode_id: str
    frames: tuple[Frame, ...]
    intrinsics: Intrinsics
    depth_scale: float = 1.0
    path: Path | None = None

    @property
    def annotated(self) -> list[int]:
        return [i for i, f in enumerate(self.frames) if f.grasp_box is not None]


# -- manifest parsing -----------------------------------------------------------

def _require(doc: dict, key: str, kind, *, frame: int | None = None, prefix: str = ""):
    name = prefix + key
    if key not in doc:
        raise ValidationError("missing required field", field=name, frame=frame)
    value = doc[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ValidationError(f"expected a finite number, got {value!r}", field=name, frame=frame)
        return float(value)
    if not isinstance(value, kind):
        raise ValidationError(f"expected {kind.__name__}, got {type(value).__name__}", field=name, frame=frame)
    return value


def _vector(doc: dict, key: str, n: int, *, frame: int, prefix: str) -> tuple[float, ...]:
    value = _require(doc, key, list, frame=frame, prefix=prefix)
    if len(value) != n or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
                                  for v in value):
        raise ValidationError(f"expected {n} finite numbers, got {value!r}", field=prefix + key, frame=frame)
    return tuple(float(v) for v in value)


def _parse_state(doc, frame: int) -> RobotState:
    if not isinstance(doc, dict):
        raise ValidationError("expected an object", field="state", frame=frame)
    pos = _vector(doc, "ee_position", 3, frame=frame, prefix="state.")
    quat = _vector(doc, "ee_orientation", 4, frame=frame, prefix="state.")
    norm = math.sqrt(sum(q * q for q in quat))
    if abs(norm - 1.0) > UNIT_QUATERNION_TOL:
        raise ValidationError(f"quaternion is not unit norm (|q| = {norm:.9g})",
                              field="state.ee_orientation", frame=frame)
    gripper = _require(doc, "gripper_status", float, frame=frame, prefix="state.")
    if not 0.0 <= gripper <= 1.0:
        raise ValidationError(f"must lie in [0, 1], got {gripper}", field="state.gripper_status", frame=frame)
    return RobotState(pos, Quaternion(*quat), gripper)


def _parse_box(doc, frame: int) -> GraspBox | None:
    if doc is None:
        return None
    if not isinstance(doc, dict):
        raise ValidationError("expected an object or null", field="grasp_box", frame=frame)
    vals = {k: _require(doc, k, float, frame=frame, prefix="grasp_box.") for k in ("x", "y", "w", "h", "theta")}
    conf = float(doc.get("confidence", 1.0))
    try:
        return GraspBox(vals["x"], vals["y"], vals["w"], vals["h"], vals["theta"], conf)
    except UsageError as exc:
        raise ValidationError(str(exc), field="grasp_box", frame=frame) from None


def parse_manifest(doc: dict, base_dir: str | os.PathLike = ".", *, check_files: bool = True) -> EpisodeManifest:
    """Validate a manifest document; file paths resolve against ``base_dir``."""
    base = Path(base_dir)
    if not isinstance(doc, dict):
        raise ValidationError("manifest must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})",
                              field="schema_version")
    episode_id = _require(doc, "episode_id", str)
    intr_doc = _require(doc, "intrinsics", dict)
    try:
        intr = Intrinsics(*(_require(intr_doc, k, float, prefix="intrinsics.") for k in ("fx", "fy", "cx", "cy")))
    except UsageError as exc:
        raise ValidationError(str(exc), field="intrinsics") from None
    depth_scale = _require(doc, "depth_scale", float) if "depth_scale" in doc else 1.0
    if not depth_scale > 0:
        raise ValidationError(f"must be positive, got {depth_scale}", field="depth_scale")
    frames_doc = _require(doc, "frames", list)
    if not frames_doc:
        raise ValidationError("episode has no frames", field="frames")
    frames = []
    for i, fd in enumerate(frames_doc):
        if not isinstance(fd, dict):
            raise ValidationError("expected an object", frame=i)
        rgb = base / _require(fd, "rgb_path", str, frame=i)
        depth = base / _require(fd, "depth_path", str, frame=i)
        if check_files:
            for name, p in (("rgb_path", rgb), ("depth_path", depth)):
                if not p.is_file():
                    raise ValidationError(f"file not found: {p}", field=name, frame=i)
        state = _parse_state(_require(fd, "state", dict, frame=i), i)
        box = _parse_box(fd.get("grasp_box"), i)
        task = _require(fd, "task_prompt", str, frame=i)
        frames.append(Frame(rgb, depth, state, box, task))
    return EpisodeManifest(episode_id, tuple(frames), intr, depth_scale)


def load_manifest(path: str | os.PathLike) -> EpisodeManifest:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest is not valid JSON: {exc}") from None
    m = parse_manifest(doc, path.parent)
    return EpisodeManifest(m.episode_id, m.frames, m.intrinsics, m.depth_scale, path)


def load_index(path: str | os.PathLike) -> list[Path]:
    """Episode manifest paths listed by a dataset index file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read dataset index {path}: {exc}") from None
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {doc.get('schema_version')!r}", field="schema_version")
    episodes = doc.get("episodes")
    if not isinstance(episodes, list) or not all(isinstance(e, str) for e in episodes):
        raise ValidationError("expected a list of manifest paths", field="episodes")
    return [path.parent / e for e in episodes]


def manifest_to_json(manifest: EpisodeManifest, base_dir: str | os.PathLike | None = None) -> dict:
    base = Path(base_dir) if base_dir is not None else None

    def rel(p: Path) -> str:
        return os.path.relpath(p, base) if base is not None else str(p)

    frames = []
    for f in manifest.frames:
        frames.append({
            "rgb_path": rel(f.rgb_path),
            "depth_path": rel(f.depth_path),
            "state": {"ee_position": list(f.state.ee_position),
                      "ee_orientation": f.state.ee_orientation.as_array().tolist(),
                      "gripper_status": f.state.gripper_status},
            "grasp_box": f.grasp_box.to_json() if f.grasp_box is not None else None,
            "task_prompt": f.task_prompt,
        })
    return {"schema_version": SCHEMA_VERSION, "episode_id": manifest.episode_id,
            "intrinsics": manifest.intrinsics.to_json(), "depth_scale": manifest.depth_scale,
            "frames": frames}


# -- conversion -------------------------------------------------------------------

class ConversionError(SpatialGraspError):
    def __init__(self, frame: int, cause: Exception):
        self.frame = frame
        self.cause = cause
        super().__init__(f"frame {frame}: {type(cause).__name__}: {cause}")


def convert_episode(manifest: EpisodeManifest, *, depth_mode: str = "bilinear",
                    width_axis: str = "w") -> list[GraspPrompt]:
    """One grasp prompt per annotated frame, in frame order.

    All-or-nothing: the first failing frame raises ConversionError and no
    partial list is returned.
    """
    prompts = []
    for i, frame in enumerate(manifest.frames):
        if frame.grasp_box is None:
            continue
        try:
            depth = load_depth(frame.depth_path).scaled(manifest.depth_scale)
            width, height = image_size(frame.rgb_path)
            if (depth.width, depth.height) != (width, height):
                raise ValidationError(f"depth map is {depth.width}x{depth.height} but the RGB frame is "
                                      f"{width}x{height}", field="depth_path", frame=i)
            prompts.append(box_to_prompt(frame.grasp_box, depth, manifest.intrinsics,
                                         depth_mode=depth_mode, width_axis=width_axis))
        except (SpatialGraspError, OSError) as exc:
            raise ConversionError(i, exc) from exc
    return prompts


def write_prompts_jsonl(prompts: Iterable[GraspPrompt], path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        for p in prompts:
            f.write(p.to_json() + "\n")


def read_prompts_jsonl(path: str | os.PathLike) -> list[GraspPrompt]:
    with open(path) as f:
        return [GraspPrompt.from_json(line) for line in f if line.strip()]


# -- synthetic scenes and the oracle detector -------------------------------------

@dataclass(frozen=True, eq=False)
class SyntheticScene:
    object_pose: GraspPrompt
    nominal_box: GraspBox
    image: Image
    depth: DepthMap
    intrinsics: Intrinsics

    def __post_init__(self):
        check = box_to_prompt(self.nominal_box, self.depth, self.intrinsics)
        pos_err = np.max(np.abs(np.subtract(check.position, self.object_pose.position)))
        ang_err = quaternion_angle(check.orientation, self.object_pose.orientation)
        width_err = abs(check.gripper_width - self.object_pose.gripper_width)
        if max(pos_err, ang_err, width_err) > 1e-6:
            raise GeometryError("nominal box is inconsistent with the object pose under the scene intrinsics")


# Scenes are rendered small; intrinsics are a 1/10 scale 640x480 camera.
SCENE_WIDTH = 64
SCENE_HEIGHT = 48
SCENE_INTRINSICS = Intrinsics(60.0, 60.0, 31.5, 23.5)


def make_scene(rng: RandomStream, intrinsics: Intrinsics = SCENE_INTRINSICS,
               width: int = SCENE_WIDTH, height: int = SCENE_HEIGHT) -> SyntheticScene:
    """One top-down tabletop scene: a colored block on a gray table plane.

    The depth map is a fronto-parallel plane at the table distance, so the
    ground-truth grasp is exactly recoverable from the nominal box.
    """
    z = rng.uniform_range(0.4, 0.8)
    grip = rng.uniform_range(0.03, 0.07)
    theta = fold_angle(rng.uniform_range(-math.pi / 2, math.pi / 2))
    w_px = grip * intrinsics.fx / z
    h_px = 0.4 * w_px
    margin = 0.5 * math.hypot(w_px, h_px) + 1.0
    x = rng.uniform_range(margin, width - 1 - margin)
    y = rng.uniform_range(margin, height - 1 - margin)
    box = GraspBox(x, y, w_px, h_px, theta, 1.0)

    depth = DepthMap(np.full((height, width), z))
    pose = box_to_prompt(box, depth, intrinsics)

    table = np.array([0.55, 0.55, 0.52])
    color = np.array([rng.uniform_range(0.3, 0.9), rng.uniform_range(0.1, 0.6), rng.uniform_range(0.1, 0.6)])
    vv, uu = np.mgrid[0:height, 0:width].astype(np.float64)
    c, s = math.cos(theta), math.sin(theta)
    du, dv = uu - x, vv - y
    along = du * c + dv * s
    across = -du * s + dv * c
    inside = (np.abs(along) <= w_px / 2) & (np.abs(across) <= h_px / 2)
    pixels = np.where(inside[..., None], color, table)
    return SyntheticScene(pose, box, Image(pixels), depth, intrinsics)


@dataclass(frozen=True)
class NoiseConfig:
    """Detector degradation as a function of d = |ln(exposure / reference)|.

    Position noise std is ``sigma0 + sigma_growth * d`` pixels, angle noise
    std ``theta_sigma0 + theta_growth * d`` radians. The miss probability is
    piecewise linear in ``d`` through ``miss_points`` given as
    ``(exposure_ms, probability)`` pairs; each point is mirrored onto the
    other side of the reference, so the curve is log-symmetric.
    """

    reference_ms: float = 100.0
    sigma0: float = 0.0
    sigma_growth: float = 1.0
    theta_sigma0: float = 0.0
    theta_growth: float = 0.05
    miss_at_reference: float = 0.0
    miss_points: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not self.reference_ms > 0:
            raise UsageError("reference exposure must be positive")
        for name in ("sigma0", "sigma_growth", "theta_sigma0", "theta_growth"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")
        pts = tuple((float(e), float(p)) for e, p in self.miss_points)
        for e, p in pts + ((self.reference_ms, self.miss_at_reference),):
            if not (e > 0 and 0.0 <= p <= 1.0):
                raise UsageError(f"miss point ({e}, {p}) needs a positive exposure and a probability in [0, 1]")
        object.__setattr__(self, "miss_points", pts)

    def log_distance(self, exposure_ms: float) -> float:
        return abs(math.log(exposure_ms) - math.log(self.reference_ms))

    def position_sigma(self, exposure_ms: float) -> float:
        return self.sigma0 + self.sigma_growth * self.log_distance(exposure_ms)

    def angle_sigma(self, exposure_ms: float) -> float:
        return self.theta_sigma0 + self.theta_growth * self.log_distance(exposure_ms)

    def miss_rate(self, exposure_ms: float) -> float:
        knots = sorted({(0.0, self.miss_at_reference)} | {(self.log_distance(e), p) for e, p in self.miss_points})
        ds = [k[0] for k in knots]
        ps = [k[1] for k in knots]
        return float(np.interp(self.log_distance(exposure_ms), ds, ps))

    def to_json(self) -> dict:
        return {"reference_ms": self.reference_ms, "sigma0": self.sigma0, "sigma_growth": self.sigma_growth,
                "theta_sigma0": self.theta_sigma0, "theta_growth": self.theta_growth,
                "miss_at_reference": self.miss_at_reference, "miss_points": [list(p) for p in self.miss_points]}

    @classmethod
    def from_json(cls, doc: dict) -> NoiseConfig:
        doc = dict(doc)
        if "miss_points" in doc:
            doc["miss_points"] = tuple(tuple(p) for p in doc["miss_points"])
        return cls(**doc)


def oracle_detector(scene: SyntheticScene, exposure_ms: float, noise: NoiseConfig,
                    rng: RandomStream) -> GraspBox | None:
    """Stand-in for a trained detector: the nominal box plus exposure-dependent noise.

    Always consumes one uniform and three normals so that the draw sequence
    does not depend on the outcome. Confidence is ``1 - miss_rate``. The
    perturbed center is clamped into the image.
    """
    if not exposure_ms > 0:
        raise UsageError(f"exposure must be positive, got {exposure_ms}")
    miss = noise.miss_rate(exposure_ms)
    u = rng.uniform()
    nx, ny, nt = rng.normal(3)
    if u < miss:
        return None
    box = scene.nominal_box
    sp = noise.position_sigma(exposure_ms)
    st = noise.angle_sigma(exposure_ms)
    if sp == 0.0 and st == 0.0:
        x, y, theta = box.x, box.y, box.theta
    else:
        x = min(max(box.x + sp * nx, 0.0), scene.depth.width - 1.0)
        y = min(max(box.y + sp * ny, 0.0), scene.depth.height - 1.0)
        theta = fold_angle(box.theta + st * nt)
    return GraspBox(x, y, box.w, box.h, theta, 1.0 - miss)
