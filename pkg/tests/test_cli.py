"""End-to-end CLI runs and exit-code contract."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from facereg import depthio, ply
from facereg.cli import main
from facereg.geometry import PointCloud


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory, runner):
    out = tmp_path_factory.mktemp("phantom")
    result = runner.invoke(main, ["phantom", "--outdir", str(out)])
    assert result.exit_code == 0, result.output
    return out


def test_phantom_artifacts(phantom_dir):
    for name in ("ct.raw", "ct.volume.json", "depth.pgm",
                 "depth.intrinsics.json", "landmarks.json",
                 "surface_landmarks.ply", "phantom.json", "ground_truth.json"):
        assert (phantom_dir / name).exists(), name


def test_depth2cloud(phantom_dir, runner, tmp_path):
    out = tmp_path / "cloud.ply"
    result = runner.invoke(main, ["depth2cloud", str(phantom_dir / "depth.pgm"),
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    cloud = ply.read_cloud(out)
    assert len(cloud) > 1000


def test_extract_and_render(phantom_dir, runner, tmp_path):
    mesh_path = tmp_path / "mesh.ply"
    result = runner.invoke(main, ["extract", str(phantom_dir / "ct.raw"),
                                  "--out", str(mesh_path)])
    assert result.exit_code == 0, result.output
    v, n, f = ply.read_mesh(mesh_path)
    assert len(v) > 1000 and len(f) > 1000 and n is not None

    img_path = tmp_path / "img.pgm"
    result = runner.invoke(main, ["render", str(mesh_path),
                                  "--axis", "0,0,-1", "--out", str(img_path)])
    assert result.exit_code == 0, result.output
    assert img_path.exists()
    assert img_path.with_suffix(".lookup.bin").exists()


def test_keypoints_iss(runner, tmp_path):
    g = np.arange(0.0, 30.0, 1.0)
    X, Y = np.meshgrid(g, g, indexing="ij")
    Z = 6.0 * np.exp(-((X - 15.0) ** 2 + (Y - 15.0) ** 2) / 18.0)
    src = tmp_path / "grid.ply"
    ply.write_cloud(src, PointCloud(np.column_stack(
        [X.ravel(), Y.ravel(), Z.ravel()])))
    out = tmp_path / "kp.ply"
    result = runner.invoke(main, ["keypoints", str(src), "--method", "iss",
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert len(ply.read_cloud(out)) > 0


def test_register_ours(phantom_dir, runner, tmp_path):
    frame = depthio.read_depth_frame(phantom_dir / "depth.pgm")
    cloud_path = tmp_path / "cloud.ply"
    ply.write_cloud(cloud_path, depthio.depth_to_cloud(frame))
    lm = depthio.select_eyes_nose(
        depthio.read_landmarks(phantom_dir / "landmarks.json"))
    kp, _ = depthio.lift_landmarks(frame, lm)
    tgt_kp_path = tmp_path / "tgt_kp.ply"
    ply.write_cloud(tgt_kp_path, kp)

    out = tmp_path / "result.json"
    result = runner.invoke(main, [
        "register", str(cloud_path), str(cloud_path),
        "--src-landmarks", str(phantom_dir / "landmarks.json"),
        "--src-frame", str(phantom_dir / "depth.pgm"),
        "--tgt-keypoints", str(tgt_kp_path),
        "--out", str(out)])
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert doc["method"] == "ours"
    # same cloud registered to itself from identical keypoints
    assert doc["fine"]["rmse"] < 1e-6


def test_register_requires_keypoint_source(phantom_dir, runner, tmp_path):
    cloud_path = phantom_dir / "surface_landmarks.ply"
    result = runner.invoke(main, ["register", str(cloud_path), str(cloud_path),
                                  "--out", str(tmp_path / "r.json")])
    assert result.exit_code == 1


def test_bench_csv_and_figures(runner, tmp_path):
    out = tmp_path / "report.csv"
    result = runner.invoke(main, ["bench", "--methods", "ours", "--trials", "1",
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    lines = out.read_text().splitlines()
    assert lines[0].startswith("method,")
    assert lines[1].startswith("ours,")
    figs = sorted(p.name for p in (tmp_path / "figures").glob("*.png"))
    assert figs == ["convergence.png", "rmse.png", "timing.png"]


def test_bench_unknown_method_is_usage_error(runner, tmp_path):
    result = runner.invoke(main, ["bench", "--methods", "bogus",
                                  "--out", str(tmp_path / "r.csv")])
    assert result.exit_code == 1


def test_missing_input_exit_code(runner, tmp_path):
    result = runner.invoke(main, ["depth2cloud", str(tmp_path / "nope.pgm"),
                                  "--out", str(tmp_path / "c.ply")])
    assert result.exit_code == 1


def test_computation_error_exit_code(phantom_dir, runner, tmp_path):
    # iso far outside the value range: empty isosurface
    result = runner.invoke(main, ["extract", str(phantom_dir / "ct.raw"),
                                  "--iso", "999999",
                                  "--out", str(tmp_path / "m.ply")])
    assert result.exit_code == 2
