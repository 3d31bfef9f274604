import json

import numpy as np
import pytest

from artifit import io
from artifit.cli import EXIT_DATA, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, bundled_data, run
from artifit.fixtures import noisy_sinusoid, penetration_scenes, random_rigid, three_planes
from artifit.geometry import PointSet

SUBCOMMANDS = ["fit", "align-space", "align-time", "voxelize", "mesh", "fix-penetration", "eval"]


@pytest.mark.parametrize("cmd", [[]] + [[c] for c in SUBCOMMANDS])
def test_help(cmd, capsys):
    assert run(cmd + ["--help"]) == EXIT_OK
    assert "usage:" in capsys.readouterr().out


def test_unknown_subcommand(tmp_path, capsys):
    out = tmp_path / "out"
    assert run(["frobnicate", "--out", str(out)]) == EXIT_USAGE
    assert capsys.readouterr().err.startswith("artifit: error:")
    assert not out.exists()


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert run(["mesh", str(tmp_path / "none.voxg"), "--out", str(tmp_path)]) == EXIT_USAGE
    assert "input not found" in capsys.readouterr().err


def test_bad_container_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.voxg"
    bad.write_bytes(b"nope" * 20)
    assert run(["mesh", str(bad), "--out", str(tmp_path)]) == EXIT_DATA
    assert capsys.readouterr().err.startswith("artifit: error:")


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"lambda_q": 1}')
    assert run(["mesh", str(bundled_data() / "target.voxg"), "--out", str(tmp_path), "--config", str(cfg)]) == EXIT_DATA


def test_fit_bundled_fixture(tmp_path):
    assert run(["fit", "--out", str(tmp_path), "--quiet", "--target-mesh"]) == EXIT_OK
    doc = json.loads((tmp_path / "fit_result.json").read_text())
    assert doc["converged"] is True
    assert abs(doc["joint_state"][0] - 0.15) < np.deg2rad(2)
    assert (tmp_path / "object.obj").stat().st_size > 0
    assert (tmp_path / "target_mc.obj").stat().st_size > 0


def test_config_precedence_and_non_convergence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_iters": 3, "step_size": 0.005}))
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run(["fit", "--out", str(out1), "--config", str(cfg), "--quiet"]) == EXIT_NOT_CONVERGED
    d1 = json.loads((out1 / "fit_result.json").read_text())
    assert d1["iterations"] == 3 and d1["metadata"]["config"]["step_size"] == 0.005
    assert run(["fit", "--out", str(out2), "--config", str(cfg), "--max-iters", "4", "--quiet"]) == EXIT_NOT_CONVERGED
    d2 = json.loads((out2 / "fit_result.json").read_text())
    assert d2["iterations"] == 4 and d2["metadata"]["config"]["max_iters"] == 4


def test_align_space(tmp_path):
    P = three_planes(1000)
    T = random_rigid(np.random.default_rng(0), 10, 0.1)
    io.save_points(tmp_path / "p.ply", PointSet(P))
    io.save_points(tmp_path / "q.ply", PointSet(P @ T[:3, :3].T + T[:3, 3]))
    assert run(["align-space", str(tmp_path / "p.ply"), str(tmp_path / "q.ply"), "--out", str(tmp_path)]) == EXIT_OK
    M = np.array(json.loads((tmp_path / "transform.json").read_text())["matrix"])
    np.testing.assert_allclose(M, T, atol=1e-5)


def test_align_time(tmp_path):
    rng = np.random.default_rng(0)
    base = np.column_stack([noisy_sinusoid(900, rng) for _ in range(3)])
    io.save_sequences(tmp_path / "a.csv", base[200:800])
    io.save_sequences(tmp_path / "b.csv", base[200 - 23:800 - 23])
    assert run(["align-time", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"), "--out", str(tmp_path),
                "--max-lag", "50"]) == EXIT_OK
    assert json.loads((tmp_path / "lag.json").read_text())["lag"] == 23


def test_voxelize_then_mesh(tmp_path):
    mesh = bundled_data() / "seat.obj"
    assert run(["voxelize", str(mesh), "--out", str(tmp_path), "--resolution", "32"]) == EXIT_OK
    grid = io.load_voxel(tmp_path / "seat.voxg")
    assert grid.spec.resolution == (32, 32, 32) and grid.occupancy.sum() > 0
    assert run(["mesh", str(tmp_path / "seat.voxg"), "--out", str(tmp_path)]) == EXIT_OK
    assert len(io.load_mesh(tmp_path / "seat.obj").triangles) > 0


def test_fix_penetration(tmp_path):
    sc = penetration_scenes()[0]
    io.save_points(tmp_path / "obj.ply", sc.surface)
    io.write_json(tmp_path / "body.json", sc.params.to_dict())
    assert run(["fix-penetration", str(tmp_path / "body.json"), str(tmp_path / "obj.ply"), "--out",
                str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "corrected_params.json").read_text())
    assert doc["depth_after_mm"] < 0.5 * doc["depth_before_mm"]


def _scene_file(path, shift):
    data = bundled_data()
    path.write_text(json.dumps({
        "model": str(data / "chair.urdf"),
        "pose": {"rotation6d": [1, 0, 0, 0, 1, 0], "translation": [shift, -0.22, 0.05], "joint_state": [0.15]},
        "body": str(data / "body_params.json"), "body_asset": str(data / "body.npz")}))


def test_eval_directories(tmp_path, monkeypatch):
    (tmp_path / "gt").mkdir()
    (tmp_path / "est").mkdir()
    for k in range(2):
        _scene_file(tmp_path / "gt" / f"{k:03d}.json", 0.0)
        _scene_file(tmp_path / "est" / f"{k:03d}.json", 0.01 * k)
    monkeypatch.setenv("ARTIFIT_THREADS", "2")
    assert run(["eval", "--gt", str(tmp_path / "gt"), "--est", str(tmp_path / "est"), "--out", str(tmp_path),
                "--resolution", "32"]) == EXIT_OK
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert rows[0].startswith("frame,Rot,Transl,CD,IoU")
    assert rows[1].split(",")[2] == "0.0" and float(rows[2].split(",")[2]) == pytest.approx(10.0)


def test_bad_thread_cap(tmp_path, monkeypatch):
    _scene_file(tmp_path / "s.json", 0.0)
    monkeypatch.setenv("ARTIFIT_THREADS", "zero")
    assert run(["eval", "--gt", str(tmp_path / "s.json"), "--est", str(tmp_path / "s.json"),
                "--out", str(tmp_path)]) == EXIT_USAGE
