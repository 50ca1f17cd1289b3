"""Command-line entry point.

Every subcommand accepts ``--seed`` (default 0) and ``--jobs``. Exit codes:
0 success, 1 runtime or domain failure, 2 usage error. Diagnostics go to
stderr; data goes to the files named by flags, or stdout where noted.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import augfusion as aug
from .bench import SweepConfig, emit_report, read_outcome_log, report_csv, report_from_outcomes, run_sweep
from .dataset import ConversionError, convert_episode, load_index, load_manifest, write_prompts_jsonl
from .errors import SpatialGraspError, UsageError
from .geometry import GraspBox, Intrinsics, box_to_prompt
from .policy import DenoiserConfig, DenoiserParams, TrainConfig, sample_actions, train_policy
from .raster import load_depth, load_image, save_image
from .rng import RandomStream

TRAIN_SCHEMA_VERSION = 1


def _floats(text: str, n: int | tuple[int, ...], what: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    allowed = (n,) if isinstance(n, int) else n
    if len(values) not in allowed:
        raise UsageError(f"{what}: expected {' or '.join(map(str, allowed))} values, got {len(values)}")
    return values


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# -- subcommands ----------------------------------------------------------------

def cmd_augment(args) -> None:
    cfg = aug.AugFusionConfig.load(args.config) if args.config else aug.AugFusionConfig()
    overrides = {name: getattr(args, name) for name in ("k", "alpha", "beta", "lam") if getattr(args, name) is not None}
    cfg = dataclasses.replace(cfg, **overrides)
    image = load_image(args.input)
    rng = RandomStream(args.seed, ("augment",))
    save_image(aug.augfusion(image, cfg, rng), args.output)


def cmd_prompt(args) -> None:
    box_vals = _floats(args.box, (5, 6), "--box")
    box = GraspBox.folded(*box_vals)
    intr = Intrinsics(*_floats(args.intrinsics, 4, "--intrinsics"))
    depth = load_depth(args.depth).scaled(args.depth_scale)
    prompt = box_to_prompt(box, depth, intr, depth_mode=args.depth_mode, width_axis=args.width_axis)
    _write_text(args.output, prompt.to_json() + "\n")


def cmd_convert(args) -> None:
    if bool(args.manifest) == bool(args.index):
        raise UsageError("give exactly one of --manifest or --index")
    paths = [Path(args.manifest)] if args.manifest else load_index(args.index)
    prompts = []
    for path in paths:
        manifest = load_manifest(path)
        try:
            prompts.extend(convert_episode(manifest, depth_mode=args.depth_mode, width_axis=args.width_axis))
        except ConversionError as exc:
            raise SpatialGraspError(f"{path}: {exc}") from exc
    write_prompts_jsonl(prompts, args.output)


def load_training_set(path: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """``{"schema_version": 1, "samples": [{"conditioning": [...], "trajectory": [[...], ...]}]}``."""
    doc = _read_json(path, "training set")
    if not isinstance(doc, dict) or doc.get("schema_version") != TRAIN_SCHEMA_VERSION:
        raise UsageError(f"training set must be an object with schema_version {TRAIN_SCHEMA_VERSION}")
    samples = []
    for i, s in enumerate(doc.get("samples", [])):
        try:
            cond = np.asarray(s["conditioning"], dtype=np.float64)
            traj = np.asarray(s["trajectory"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"training sample {i} is malformed: {exc}") from None
        if traj.ndim != 2 or cond.ndim != 1:
            raise UsageError(f"training sample {i}: trajectory must be 2-D and conditioning 1-D")
        samples.append((cond, traj))
    return samples


def cmd_train(args) -> None:
    settings = _read_json(args.config, "training config") if args.config else {}
    for key in ("epochs", "batch_size", "learning_rate", "lr_schedule", "hidden"):
        flag = getattr(args, key)
        if flag is not None:
            settings[key] = flag
    unknown = set(settings) - {"epochs", "batch_size", "learning_rate", "lr_schedule", "hidden"}
    if unknown:
        raise UsageError(f"unknown training config keys: {sorted(unknown)}")
    dataset = load_training_set(args.dataset)
    if not dataset:
        raise UsageError("training set is empty")
    cond, traj = dataset[0]
    config = DenoiserConfig(horizon=traj.shape[0], dims=traj.shape[1], cond_dim=cond.size,
                            hidden=int(settings.pop("hidden", 64)))
    cfg = TrainConfig(seed=args.seed, **settings)
    result = train_policy(dataset, cfg, config)
    result.params.save(args.output)
    if args.loss_trace:
        Path(args.loss_trace).write_text(json.dumps(result.loss_trace()) + "\n")


def cmd_sample(args) -> None:
    params = DenoiserParams.load(args.params)
    if args.cond is not None:
        cond = np.asarray(_read_json(args.cond, "conditioning"), dtype=np.float64)
    else:
        cond = np.zeros(params.config.cond_dim)
    rng = RandomStream(args.seed, ("sample",))
    traj = sample_actions(params, cond, None, rng, clip_x0=args.clip_x0)
    _write_text(args.output, json.dumps({"trajectory": traj.tolist()}) + "\n")


def cmd_sweep(args) -> None:
    cfg = SweepConfig.load(args.config) if args.config else SweepConfig()
    overrides = {}
    if args.seed_given:
        overrides["scene_seed"] = args.seed
    if args.trials is not None:
        overrides["trials_per_level"] = args.trials
    cfg = dataclasses.replace(cfg, **overrides)
    report = run_sweep(cfg, jobs=args.jobs, log_path=args.log)
    if args.csv:
        emit_report(report, "csv", args.csv)
    if args.json:
        emit_report(report, "json", args.json)
    if not (args.csv or args.json):
        sys.stdout.write(report_csv(report))


def cmd_report(args) -> None:
    outcomes = read_outcome_log(args.log)
    levels = None
    if args.config:
        levels = SweepConfig.load(args.config).exposure_levels
    report = report_from_outcomes(outcomes, levels)
    if args.output:
        emit_report(report, args.format, args.output)
    elif args.format == "csv":
        sys.stdout.write(report_csv(report))
    else:
        sys.stdout.write(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")


# -- parser ---------------------------------------------------------------------

class _SeedAction(argparse.Action):
    """Records that --seed was given explicitly so it can override config-file seeds."""

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        namespace.seed_given = True


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, action=_SeedAction,
                        help="global random seed (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes where supported")

    parser = argparse.ArgumentParser(prog="spatialgrasp", description="Grasp-prompt perception and policy toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("augment", parents=[common], help="AugFusion augmentation of a PPM image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", help="AugFusion config JSON; flags below override it")
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.set_defaults(func=cmd_augment)

    geometry = argparse.ArgumentParser(add_help=False)
    geometry.add_argument("--depth-mode", choices=("bilinear", "nearest"), default="bilinear")
    geometry.add_argument("--width-axis", choices=("w", "h"), default="w")

    p = sub.add_parser("prompt", parents=[common, geometry], help="one grasp box to a grasp prompt")
    p.add_argument("--box", required=True, help="x,y,w,h,theta[,confidence]")
    p.add_argument("--depth", required=True, help="PFM depth map")
    p.add_argument("--intrinsics", required=True, help="fx,fy,cx,cy")
    p.add_argument("--depth-scale", type=float, default=1.0)
    p.add_argument("--output", help="file for the prompt JSON (default stdout)")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("convert", parents=[common, geometry], help="episode manifests to prompt JSON lines")
    p.add_argument("--manifest")
    p.add_argument("--index", help="dataset index JSON listing manifests")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", parents=[common], help="train the diffusion denoiser")
    p.add_argument("--dataset", required=True, help="training set JSON")
    p.add_argument("--output", required=True, help="parameter file (.bin, sidecar .json alongside)")
    p.add_argument("--config", help="training config JSON; flags below override it")
    p.add_argument("--loss-trace", help="JSON file for the per-epoch loss trace")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--lr-schedule", choices=("constant", "cosine"))
    p.add_argument("--hidden", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="sample an action trajectory")
    p.add_argument("--params", required=True)
    p.add_argument("--cond", help="JSON list with the conditioning vector (default zeros)")
    p.add_argument("--clip-x0", type=float, help="clamp clean-sample estimates to [-c, c]")
    p.add_argument("--output", help="trajectory JSON file (default stdout)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("sweep", parents=[common], help="exposure-sweep benchmark")
    p.add_argument("--config", help="sweep config JSON")
    p.add_argument("--trials", type=int, help="override trials per level")
    p.add_argument("--csv", help="CSV report path")
    p.add_argument("--json", help="JSON report path")
    p.add_argument("--log", help="outcome log path (JSON lines)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="rebuild a report from an outcome log")
    p.add_argument("--log", required=True)
    p.add_argument("--config", help="sweep config fixing the level order")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output", help="report path (default stdout)")
    p.set_defaults(func=cmd_report)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not hasattr(args, "seed_given"):
        args.seed_given = False
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SpatialGraspError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
