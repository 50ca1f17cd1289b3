import json
import subprocess
import sys

import numpy as np
import pytest

from spatialgrasp.cli import dispatch
from spatialgrasp.policy import DenoiserParams
from spatialgrasp.raster import DepthMap, save_depth, save_image

from test_dataset import BOX, write_episode


@pytest.fixture
def depth_file(tmp_path):
    path = tmp_path / "d.pfm"
    save_depth(DepthMap(np.full((480, 640), 0.5)), path)
    return path


def run_cli(*argv):
    return subprocess.run([sys.executable, "-m", "spatialgrasp", *map(str, argv)], capture_output=True, text=True)


def test_prompt_to_stdout(depth_file):
    proc = run_cli("prompt", "--box", "320,240,60,20,0", "--depth", depth_file, "--intrinsics", "600,600,320,240")
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(proc.stdout)
    assert doc["position"] == [0, 0, 0.5]
    assert doc["quaternion"] == [0, 0, 0, 1]
    assert doc["width"] == pytest.approx(0.05, abs=1e-12)
    assert doc["confidence"] == 1


def test_prompt_folds_theta_and_writes_file(depth_file, tmp_path):
    out = tmp_path / "p.json"
    code = dispatch(["prompt", "--box", "320,240,60,20,3.5,0.7", "--depth", str(depth_file),
                     "--intrinsics", "600,600,320,240", "--output", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["confidence"] == 0.7
    assert abs(np.linalg.norm(doc["quaternion"]) - 1) < 1e-12


def test_usage_errors_exit_2(depth_file, capsys):
    assert dispatch(["prompt", "--bogus"]) == 2
    assert dispatch(["nonsense"]) == 2
    assert dispatch(["prompt", "--box", "1,2,3", "--depth", str(depth_file), "--intrinsics", "1,1,0,0"]) == 2
    assert dispatch(["sweep", "--jobs", "0"]) == 2
    assert "error" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path, depth_file):
    save_depth(DepthMap(np.full((480, 640), np.nan)), tmp_path / "nan.pfm")
    assert dispatch(["prompt", "--box", "320,240,60,20,0", "--depth", str(tmp_path / "nan.pfm"),
                     "--intrinsics", "600,600,320,240"]) == 1
    assert dispatch(["augment", "--input", str(tmp_path / "missing.ppm"), "--output", str(tmp_path / "o.ppm")]) == 1


def test_augment_is_seeded(tmp_path, rgb):
    save_image(rgb, tmp_path / "in.ppm")
    outs = []
    for name, seed in (("a", 3), ("b", 3), ("c", 4)):
        assert dispatch(["augment", "--input", str(tmp_path / "in.ppm"), "--output", str(tmp_path / f"{name}.ppm"),
                         "--seed", str(seed)]) == 0
        outs.append((tmp_path / f"{name}.ppm").read_bytes())
    assert outs[0] == outs[1] != outs[2]


def test_augment_zero_blend_is_identity(tmp_path, rgb):
    save_image(rgb, tmp_path / "in.ppm")
    assert dispatch(["augment", "--input", str(tmp_path / "in.ppm"), "--output", str(tmp_path / "o.ppm"),
                     "--beta", "0", "--lambda", "0"]) == 0
    assert (tmp_path / "o.ppm").read_bytes() == (tmp_path / "in.ppm").read_bytes()


def test_convert_manifest_and_index(tmp_path):
    m = write_episode(tmp_path / "ep", [BOX, None, BOX])
    (tmp_path / "index.json").write_text(json.dumps({"schema_version": 1, "episodes": [str(m)]}))
    assert dispatch(["convert", "--manifest", str(m), "--output", str(tmp_path / "a.jsonl")]) == 0
    assert dispatch(["convert", "--index", str(tmp_path / "index.json"), "--output", str(tmp_path / "b.jsonl")]) == 0
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert len(lines) == 2
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert dispatch(["convert", "--output", str(tmp_path / "c.jsonl")]) == 2


def test_train_and_sample(tmp_path):
    samples = [{"conditioning": [float(i % 2)], "trajectory": [[0.5 * (i % 2)], [-0.5]]} for i in range(16)]
    (tmp_path / "data.json").write_text(json.dumps({"schema_version": 1, "samples": samples}))
    args = ["train", "--dataset", str(tmp_path / "data.json"), "--epochs", "4", "--batch-size", "8", "--hidden", "8"]
    for name in ("a", "b"):
        assert dispatch(args + ["--output", str(tmp_path / f"{name}.bin"),
                                "--loss-trace", str(tmp_path / f"{name}.trace.json")]) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    trace = json.loads((tmp_path / "a.trace.json").read_text())
    assert len(trace) == 4
    params = DenoiserParams.load(tmp_path / "a.bin")
    assert params.config.hidden == 8 and params.config.horizon == 2

    (tmp_path / "cond.json").write_text("[1.0]")
    assert dispatch(["sample", "--params", str(tmp_path / "a.bin"), "--cond", str(tmp_path / "cond.json"),
                     "--output", str(tmp_path / "traj.json"), "--clip-x0", "1.0"]) == 0
    traj = np.asarray(json.loads((tmp_path / "traj.json").read_text())["trajectory"])
    assert traj.shape == (2, 1) and np.all(np.isfinite(traj))


def test_train_rejects_bad_input(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"schema_version": 2, "samples": []}))
    assert dispatch(["train", "--dataset", str(tmp_path / "bad.json"), "--output", str(tmp_path / "p.bin")]) == 2
    (tmp_path / "cfg.json").write_text(json.dumps({"epoch": 3}))
    (tmp_path / "ok.json").write_text(json.dumps(
        {"schema_version": 1, "samples": [{"conditioning": [0.0], "trajectory": [[0.0]]}]}))
    assert dispatch(["train", "--dataset", str(tmp_path / "ok.json"), "--config", str(tmp_path / "cfg.json"),
                     "--output", str(tmp_path / "p.bin")]) == 2


def test_sweep_twice_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert dispatch(["sweep", "--trials", "10", "--seed", "5", "--csv", str(tmp_path / f"{name}.csv"),
                         "--json", str(tmp_path / f"{name}.json"), "--log", str(tmp_path / f"{name}.jsonl")]) == 0
    for ext in ("csv", "json", "jsonl"):
        assert (tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "metric,10,20,40,60,80,100,120,140,160,170,AVG"


def test_sweep_seed_overrides_config(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"trials_per_level": 8, "scene_seed": 1}))
    assert dispatch(["sweep", "--config", str(tmp_path / "cfg.json"), "--log", str(tmp_path / "a.jsonl"),
                     "--csv", str(tmp_path / "a.csv")]) == 0
    assert dispatch(["sweep", "--config", str(tmp_path / "cfg.json"), "--seed", "1",
                     "--log", str(tmp_path / "b.jsonl"), "--csv", str(tmp_path / "b.csv")]) == 0
    assert dispatch(["sweep", "--config", str(tmp_path / "cfg.json"), "--seed", "2",
                     "--log", str(tmp_path / "c.jsonl"), "--csv", str(tmp_path / "c.csv")]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


def test_report_rebuilds_sweep_output(tmp_path):
    assert dispatch(["sweep", "--trials", "12", "--csv", str(tmp_path / "s.csv"), "--json", str(tmp_path / "s.json"),
                     "--log", str(tmp_path / "log.jsonl")]) == 0
    assert dispatch(["report", "--log", str(tmp_path / "log.jsonl"), "--output", str(tmp_path / "r.csv")]) == 0
    assert dispatch(["report", "--log", str(tmp_path / "log.jsonl"), "--format", "json",
                     "--output", str(tmp_path / "r.json")]) == 0
    assert (tmp_path / "r.csv").read_bytes() == (tmp_path / "s.csv").read_bytes()
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "s.json").read_bytes()


def test_sweep_csv_to_stdout(capsys):
    assert dispatch(["sweep", "--trials", "3"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("metric,10,")
    assert len(out.splitlines()) == 3
