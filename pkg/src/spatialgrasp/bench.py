"""Exposure-sweep benchmark: synthetic scenes, corrupted at each exposure
level, pass through detector and geometry, and the resulting grasps are
judged against ground truth.

Trial ``j`` sees the same scene and the same detector stream at every
exposure level (common random numbers), so differences between levels
reflect the exposure alone.

Outcome log: JSON lines, one trial per line::

    {"exposure_ms": 10.0, "trial": 0, "detected": true, "grasp_success": true,
     "task_success": true, "position_error_m": 0.0041, "angle_error_rad": 0.02}

Errors are ``null`` for missed detections.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .augfusion import simulate_exposure
from .dataset import NoiseConfig, SyntheticScene, make_scene, oracle_detector
from .errors import SpatialGraspError, UsageError
from .geometry import GraspPrompt, box_to_prompt, quaternion_angle
from .raster import Image
from .rng import RandomStream

EXPOSURE_LEVELS = (10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 170.0)

DEFAULT_NOISE = NoiseConfig(reference_ms=100.0, sigma0=0.2, sigma_growth=1.0, theta_sigma0=0.01,
                            theta_growth=0.05, miss_at_reference=0.02, miss_points=((10.0, 0.5),))


@dataclass(frozen=True)
class Tolerance:
    position_m: float = 0.02
    angle_rad: float = 0.15

    def __post_init__(self):
        if not (self.position_m > 0 and self.angle_rad > 0):
            raise UsageError(f"tolerances must be positive, got {self}")


def judge_grasp(pred: GraspPrompt, truth: GraspPrompt, tol: Tolerance) -> bool:
    """Boundary-inclusive: errors exactly at the tolerance still count as success."""
    pos_err = float(np.linalg.norm(np.subtract(pred.position, truth.position)))
    return pos_err <= tol.position_m and quaternion_angle(pred.orientation, truth.orientation) <= tol.angle_rad


@dataclass(frozen=True)
class TrialOutcome:
    exposure_ms: float
    detected: bool
    grasp_success: bool
    task_success: bool
    position_error_m: float | None = None
    angle_error_rad: float | None = None
    trial: int = 0

    def __post_init__(self):
        if self.task_success and not self.grasp_success:
            raise UsageError("task success requires grasp success")
        if self.grasp_success and not self.detected:
            raise UsageError("grasp success requires a detection")

    def to_json(self) -> dict:
        return {"exposure_ms": self.exposure_ms, "trial": self.trial, "detected": self.detected,
                "grasp_success": self.grasp_success, "task_success": self.task_success,
                "position_error_m": self.position_error_m, "angle_error_rad": self.angle_error_rad}

    @classmethod
    def from_json(cls, doc: dict) -> TrialOutcome:
        return cls(float(doc["exposure_ms"]), bool(doc["detected"]), bool(doc["grasp_success"]),
                   bool(doc["task_success"]), doc.get("position_error_m"), doc.get("angle_error_rad"),
                   int(doc.get("trial", 0)))


def compute_gsr(outcomes: Sequence[TrialOutcome]) -> float:
    if not outcomes:
        raise UsageError("cannot compute a success rate over zero trials")
    return sum(o.grasp_success for o in outcomes) / len(outcomes)


def compute_tsr(outcomes: Sequence[TrialOutcome]) -> float:
    if not outcomes:
        raise UsageError("cannot compute a success rate over zero trials")
    return sum(o.task_success for o in outcomes) / len(outcomes)


@dataclass(frozen=True)
class SweepConfig:
    exposure_levels: tuple[float, ...] = EXPOSURE_LEVELS
    trials_per_level: int = 100
    reference_ms: float = 100.0
    tolerance: Tolerance = Tolerance()
    scene_seed: int = 0
    noise: NoiseConfig = DEFAULT_NOISE
    task_failure_rate: float = 0.0  # post-grasp failure probability, applied after a successful grasp
    depth_mode: str = "bilinear"
    width_axis: str = "w"

    def __post_init__(self):
        levels = tuple(float(e) for e in self.exposure_levels)
        if not levels or not all(e > 0 and math.isfinite(e) for e in levels):
            raise UsageError(f"exposure levels must be a non-empty list of positive values, got {levels}")
        if len(set(levels)) != len(levels):
            raise UsageError("exposure levels must be distinct")
        object.__setattr__(self, "exposure_levels", levels)
        if not (isinstance(self.trials_per_level, int) and self.trials_per_level >= 1):
            raise UsageError(f"trials_per_level must be a positive integer, got {self.trials_per_level!r}")
        if not self.reference_ms > 0:
            raise UsageError("reference_ms must be positive")
        if self.noise.reference_ms != self.reference_ms:
            raise UsageError(f"detector reference exposure {self.noise.reference_ms} differs from "
                             f"sweep reference {self.reference_ms}")
        if not 0.0 <= self.task_failure_rate <= 1.0:
            raise UsageError("task_failure_rate must lie in [0, 1]")

    def to_json(self) -> dict:
        return {"exposure_levels": list(self.exposure_levels), "trials_per_level": self.trials_per_level,
                "reference_ms": self.reference_ms,
                "tolerance": {"position_m": self.tolerance.position_m, "angle_rad": self.tolerance.angle_rad},
                "scene_seed": self.scene_seed, "noise": self.noise.to_json(),
                "task_failure_rate": self.task_failure_rate, "depth_mode": self.depth_mode,
                "width_axis": self.width_axis}

    @classmethod
    def from_json(cls, doc: dict) -> SweepConfig:
        known = set(cls().to_json())
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown sweep config keys: {sorted(unknown)}")
        doc = dict(doc)
        ref = float(doc.get("reference_ms", 100.0))
        if "exposure_levels" in doc:
            doc["exposure_levels"] = tuple(doc["exposure_levels"])
        try:
            # defaults, then the sweep's reference, then explicit detector settings
            noise = DEFAULT_NOISE.to_json() | {"reference_ms": ref} | doc.get("noise", {})
            doc["noise"] = NoiseConfig.from_json(noise)
            if "tolerance" in doc:
                doc["tolerance"] = Tolerance(**doc["tolerance"])
            return cls(**doc)
        except TypeError as exc:
            raise UsageError(f"bad sweep config: {exc}") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> SweepConfig:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read sweep config {path}: {exc}") from None
        return cls.from_json(doc)


@dataclass(frozen=True)
class OraclePipeline:
    """Scene to prediction: oracle detector on the exposed frame, then box-to-prompt geometry."""

    noise: NoiseConfig = DEFAULT_NOISE
    depth_mode: str = "bilinear"
    width_axis: str = "w"

    def predict(self, scene: SyntheticScene, image: Image, exposure_ms: float,
                rng: RandomStream) -> GraspPrompt | None:
        box = oracle_detector(scene, exposure_ms, self.noise, rng)
        if box is None:
            return None
        return box_to_prompt(box, scene.depth, scene.intrinsics, depth_mode=self.depth_mode,
                             width_axis=self.width_axis)


class SweepError(SpatialGraspError):
    def __init__(self, exposure_ms: float, trial: int, cause: Exception):
        self.exposure_ms = exposure_ms
        self.trial = trial
        super().__init__(f"level {exposure_ms:g} ms, trial {trial}: {type(cause).__name__}: {cause}")


def run_trial(cfg: SweepConfig, pipeline, scene: SyntheticScene, exposure_ms: float, trial: int) -> TrialOutcome:
    try:
        image = simulate_exposure(scene.image, exposure_ms, cfg.reference_ms)
        detector_rng = RandomStream(cfg.scene_seed, ("detector", str(trial)))
        pred = pipeline.predict(scene, image, exposure_ms, detector_rng)
        if pred is None:
            return TrialOutcome(exposure_ms, False, False, False, None, None, trial)
        truth = scene.object_pose
        pos_err = float(np.linalg.norm(np.subtract(pred.position, truth.position)))
        ang_err = quaternion_angle(pred.orientation, truth.orientation)
        grasp_ok = judge_grasp(pred, truth, cfg.tolerance)
        task_ok = grasp_ok
        if grasp_ok and cfg.task_failure_rate > 0:
            task_ok = RandomStream(cfg.scene_seed, ("task", str(trial))).uniform() >= cfg.task_failure_rate
        return TrialOutcome(exposure_ms, True, grasp_ok, task_ok, pos_err, ang_err, trial)
    except SpatialGraspError as exc:
        raise SweepError(exposure_ms, trial, exc) from exc


def scene_for_trial(cfg: SweepConfig, trial: int) -> SyntheticScene:
    return make_scene(RandomStream(cfg.scene_seed, ("scene", str(trial))))


def _run_level(args) -> list[TrialOutcome]:
    cfg, pipeline, exposure_ms = args
    return [run_trial(cfg, pipeline, scene_for_trial(cfg, j), exposure_ms, j)
            for j in range(cfg.trials_per_level)]


def default_pipeline(cfg: SweepConfig) -> OraclePipeline:
    return OraclePipeline(cfg.noise, cfg.depth_mode, cfg.width_axis)


def run_outcomes(cfg: SweepConfig, pipeline=None, jobs: int = 1) -> list[TrialOutcome]:
    """All trial outcomes ordered by (level, trial)."""
    if pipeline is None:
        pipeline = default_pipeline(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_level = list(pool.map(_run_level, [(cfg, pipeline, e) for e in cfg.exposure_levels]))
        return [o for level in per_level for o in level]
    scenes = [scene_for_trial(cfg, j) for j in range(cfg.trials_per_level)]
    return [run_trial(cfg, pipeline, scenes[j], e, j)
            for e in cfg.exposure_levels for j in range(cfg.trials_per_level)]


@dataclass(frozen=True)
class LevelResult:
    exposure_ms: float
    tsr: float
    gsr: float
    n: int


@dataclass(frozen=True)
class SweepReport:
    levels: tuple[LevelResult, ...]
    avg_tsr: float
    avg_gsr: float

    def to_json(self) -> dict:
        return {"levels": [{"exposure_ms": lv.exposure_ms, "tsr": lv.tsr, "gsr": lv.gsr, "n": lv.n}
                           for lv in self.levels],
                "avg_tsr": self.avg_tsr, "avg_gsr": self.avg_gsr}

    @classmethod
    def from_json(cls, doc: dict) -> SweepReport:
        levels = tuple(LevelResult(float(lv["exposure_ms"]), float(lv["tsr"]), float(lv["gsr"]), int(lv["n"]))
                       for lv in doc["levels"])
        return cls(levels, float(doc["avg_tsr"]), float(doc["avg_gsr"]))


def report_from_outcomes(outcomes: Iterable[TrialOutcome], levels: Sequence[float] | None = None) -> SweepReport:
    """Aggregate per level (in ``levels`` order, else order of first appearance)."""
    groups: dict[float, list[TrialOutcome]] = {}
    for o in outcomes:
        groups.setdefault(o.exposure_ms, []).append(o)
    order = list(levels) if levels is not None else list(groups)
    if not order:
        raise UsageError("no outcomes to report")
    results = []
    for e in order:
        group = groups.get(float(e), [])
        results.append(LevelResult(float(e), compute_tsr(group), compute_gsr(group), len(group)))
    avg_tsr = math.fsum(r.tsr for r in results) / len(results)
    avg_gsr = math.fsum(r.gsr for r in results) / len(results)
    return SweepReport(tuple(results), avg_tsr, avg_gsr)


def run_sweep(cfg: SweepConfig, pipeline=None, *, jobs: int = 1,
              log_path: str | os.PathLike | None = None) -> SweepReport:
    outcomes = run_outcomes(cfg, pipeline, jobs)
    if log_path is not None:
        write_outcome_log(outcomes, log_path)
    return report_from_outcomes(outcomes, cfg.exposure_levels)


def write_outcome_log(outcomes: Iterable[TrialOutcome], path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        for o in outcomes:
            f.write(json.dumps(o.to_json(), sort_keys=True) + "\n")


def read_outcome_log(path: str | os.PathLike) -> list[TrialOutcome]:
    outcomes = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                outcomes.append(TrialOutcome.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise UsageError(f"{path}:{lineno}: bad outcome record: {exc}") from None
    return outcomes


def format_percent(rate: float) -> str:
    """Rate in [0, 1] as a percentage with one decimal, half-up on the decimal digits: 0.815 -> '81.5'."""
    pct = Decimal(repr(float(rate))) * 100
    return str(pct.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _level_label(ms: float) -> str:
    return f"{ms:g}"


def report_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", *(_level_label(lv.exposure_ms) for lv in report.levels), "AVG"])
    writer.writerow(["TSR", *(format_percent(lv.tsr) for lv in report.levels), format_percent(report.avg_tsr)])
    writer.writerow(["GSR", *(format_percent(lv.gsr) for lv in report.levels), format_percent(report.avg_gsr)])
    return buf.getvalue()


def emit_report(report: SweepReport, fmt: str, path: str | os.PathLike) -> None:
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "json":
        text = json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    else:
        raise UsageError(f"report format must be 'csv' or 'json', got {fmt!r}")
    Path(path).write_text(text)
