import json

import numpy as np

from crosspaint import __version__
from crosspaint.cli import main
from crosspaint.dynamics import load_model, save_dataset, synthetic_dataset
from crosspaint.fixtures import fixture_robot
from crosspaint.geometry import format_pose_record, save_camera
from crosspaint.harness import default_camera, perturb_camera, spec_to_dict, ExperimentSpec
from crosspaint.imageops import load_mask
from crosspaint.raster import load_frameset, render, save_frameset
from crosspaint.urdf import forward_kinematics

from conftest import tabletop


def test_help_and_version(capsys):
    assert main(["--help"]) == 0
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out
    for cmd in ("run", "reproject", "render", "fit-dynamics", "simulate", "ik-check"):
        assert main([cmd, "--help"]) == 0


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["paint"]) == 2
    assert main(["fit-dynamics", "--out", str(tmp_path / "m.json")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": "x", "out": "y", "colour": 1}))
    assert main(["fit-dynamics", "--config", str(cfg)]) == 2
    assert main(["ik-check", "--robot", "arm7_a", "--pose", "0 0 0 1 0 0 0", "--pos-tol", "abc"]) == 2
    assert "usage" in capsys.readouterr().err


def test_domain_error_on_missing_file(tmp_path):
    assert main(["fit-dynamics", "--data", str(tmp_path / "none.txt"), "--out", str(tmp_path / "m.json")]) == 1


def test_fit_dynamics_identity(tmp_path):
    data = tmp_path / "traj.txt"
    save_dataset(synthetic_dataset(np.ones(7), np.zeros(7), 500, seed=3), data)
    out = tmp_path / "model.json"
    assert main(["fit-dynamics", "--data", str(data), "--out", str(out)]) == 0
    m = load_model(out)
    assert np.allclose(m.slope, 1, atol=1e-9) and np.allclose(m.intercept, 0, atol=1e-9)


def test_flag_beats_config_file(tmp_path):
    data = tmp_path / "traj.txt"
    save_dataset(synthetic_dataset(np.ones(7), np.zeros(7), 5, seed=3), data)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": str(data), "out": str(tmp_path / "m.json"), "min_transitions": 100}))
    assert main(["fit-dynamics", "--config", str(cfg)]) == 1
    assert main(["fit-dynamics", "--config", str(cfg), "--min-transitions", "3"]) == 0


def test_ik_check(capsys):
    m = fixture_robot("arm6_b")
    q = m.home_state()
    target = forward_kinematics(m, q).eef
    assert main(["ik-check", "--robot", "arm6_b", "--pose", format_pose_record(target)]) == 0
    assert "converged" in capsys.readouterr().out
    assert main(["ik-check", "--robot", "arm6_b", "--pose", "5 5 5 1 0 0 0"]) == 1
    assert "not converged" in capsys.readouterr().out


def test_render_scene_json(tmp_path):
    scene = {
        "objects": [{"id": 50, "kind": "box", "size": [0.1, 0.1, 0.1], "pose": "0.45 0 0.1 1 0 0 0"}],
        "robots": [{"robot": "arm6_b"}],
    }
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(scene))
    assert main(["render", "--scene", str(path), "--out", str(tmp_path / "f")]) == 0
    f = load_frameset(tmp_path / "f")
    assert f.rgb.shape == (84, 84, 3)
    assert (f.seg == 50).any() and ((f.seg > 0) & (f.seg != 50)).any()


def test_reproject_writes_holes(tmp_path):
    cam = default_camera()
    frame = render(tabletop(), cam)
    save_frameset(frame, tmp_path / "f")
    save_camera(cam, tmp_path / "a.json")
    save_camera(perturb_camera(cam, "medium"), tmp_path / "b.json")
    args = ["reproject", "--frame", str(tmp_path / "f"), "--from-camera", str(tmp_path / "a.json"),
            "--to-camera", str(tmp_path / "b.json"), "--out", str(tmp_path / "o")]
    assert main(args) == 0
    holes = load_mask(tmp_path / "o" / "holes.png")
    assert holes.shape == (84, 84) and 0 < holes.mean() < 0.5


def _frames(tmp_path, n=2):
    m = fixture_robot("arm6_b")
    cam = default_camera()
    root = tmp_path / "frames"
    for k in range(n):
        q = m.home_state()
        d = save_frameset(render(tabletop(m, q), cam), root / f"{k:03d}")
        (d / "state.txt").write_text(" ".join(map(str, [*q.arm_q, q.gripper_width])))
    return root


def test_run_directory_of_frames(tmp_path):
    root = _frames(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--in", str(root), "--out", str(out), "--source", "arm7_a", "--target", "arm6_b"]) == 0
    recs = [json.loads(line) for line in (out / "diagnostics.jsonl").read_text().splitlines()]
    assert len(recs) == 2 and all(r["ik_success"] for r in recs)
    assert (out / "000" / "rgb.png").exists()


def test_run_single_frameset_and_config(tmp_path):
    root = _frames(tmp_path, 1)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"in": str(root / "000"), "out": str(tmp_path / "o"), "dilate_arm_iters": 5}))
    assert main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "o" / "rgb.png").exists()


def test_run_rejects_bad_state(tmp_path):
    root = _frames(tmp_path, 1)
    (root / "000" / "state.txt").write_text("0 0")
    assert main(["run", "--in", str(root), "--out", str(tmp_path / "o")]) == 1


def test_simulate_seed_override(tmp_path):
    spec = ExperimentSpec(tasks=("reach",), modes=("blocking",), episodes=2, seed=0)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec_to_dict(spec)))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--spec", str(path), "--out", str(a), "--workers", "1"]) == 0
    assert main(["simulate", "--spec", str(path), "--out", str(b), "--workers", "1", "--seed", "0"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["simulate", "--spec", str(path), "--out", str(b), "--workers", "1", "--seed", "9"]) == 0
    assert "reach" in b.read_text()
