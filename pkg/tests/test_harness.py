import sys

import numpy as np
import pytest

from crosspaint.geometry import RigidTransform
from crosspaint.harness import (
    CAMERA_LEVELS,
    CUBE_SIZE,
    DEFAULT_TARGET_BASE,
    EpisodeConfig,
    ExperimentReport,
    ExperimentSpec,
    Perturbation,
    Task,
    World,
    default_camera,
    episode_seed,
    perturb_camera,
    run_episode,
    run_grid,
    spec_to_dict,
    task_success,
    worker_count,
)


def seeds(task, n, master=0):
    return [Task(task, episode_seed(master, task, i)) for i in range(n)]


def rate(task, n, cfg, master=0):
    return sum(run_episode(t, cfg).success for t in seeds(task, n, master)) / n


SOURCE_ON_ITSELF = dict(source="arm7_a", target="arm7_a", target_gain=1.0, target_base=RigidTransform())


def test_task_validation_and_layout():
    with pytest.raises(ValueError):
        Task("juggle", 0)
    t = Task("stack", 5)
    a, b = t.initial_cubes(), Task("stack", 5).initial_cubes()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert np.linalg.norm(a["cube"][:2] - a["base_cube"][:2]) >= 0.1


def world(cubes):
    return World(cubes, {k: v.copy() for k, v in cubes.items()}, RigidTransform([0.5, 0, 0.3]), 0.08, 0.08)


def test_grasp_attach_and_carry():
    w = world({"cube": np.array([0.5, 0.0, 0.02])})
    w.move(RigidTransform([0.5, 0.0, 0.025]), 0.08)
    w.move(RigidTransform([0.5, 0.0, 0.025]), 0.0)
    assert w.attached == "cube" and w.width == CUBE_SIZE
    w.move(RigidTransform([0.5, 0.0, 0.2]), 0.0)
    assert np.allclose(w.cubes["cube"], [0.5, 0, 0.195])


def test_grasp_misses_off_centre():
    w = world({"cube": np.array([0.5, 0.0, 0.02])})
    w.move(RigidTransform([0.5, 0.012, 0.02]), 0.08)
    w.move(RigidTransform([0.5, 0.012, 0.02]), 0.0)
    assert w.attached is None and w.width == 0.0


def test_release_rests_or_topples():
    base = np.array([0.5, 0.0, 0.02])
    for height, toppled in ((0.062, False), (0.1, True)):
        w = world({"cube": np.array([0.5, 0.0, 0.02]), "base_cube": base.copy()})
        w.attached, w.grip_offset = "cube", np.zeros(3)
        w.move(RigidTransform([0.5, 0.0, height]), 0.0)
        w.move(RigidTransform([0.5, 0.0, height]), 0.08)
        assert w.toppled is toppled
        if not toppled:
            assert np.allclose(w.cubes["cube"], [0.5, 0.0, 0.06])


def test_success_predicates_read_final_state():
    cubes = {"cube": np.array([0.5, 0.0, 0.02])}
    w = world(cubes)
    w.tcp_w = RigidTransform([0.5, 0.0, 0.12])
    assert task_success(Task("reach", 0), w)
    assert not task_success(Task("lift", 0), w)
    w.attached, w.cubes["cube"] = "cube", np.array([0.5, 0.0, 0.13])
    assert task_success(Task("lift", 0), w)


def test_episode_is_deterministic():
    cfg = EpisodeConfig(mode="delta")
    a = run_episode(Task("stack", 11), cfg)
    b = run_episode(Task("stack", 11), cfg)
    assert a == b


def test_source_on_its_own_plant_always_succeeds():
    cfg = EpisodeConfig(mode="blocking", **SOURCE_ON_ITSELF)
    assert rate("lift", 50, cfg) == 1.0


def test_delta_below_blocking_on_slow_plant():
    b = rate("lift", 30, EpisodeConfig(mode="blocking"))
    d = rate("lift", 30, EpisodeConfig(mode="delta"))
    assert d < b


def test_playback_with_proprio_offset_fails():
    cfg = EpisodeConfig(mode="playback", perturbation=Perturbation(proprio_offset=(0, 0, -0.08)))
    assert rate("lift", 20, cfg) == 0.0


def test_retry_recovers_from_grasp_offset():
    off = Perturbation(perception_offset=(0.01, 0.0, 0.0))
    no = rate("lift", 30, EpisodeConfig(perturbation=off))
    yes = rate("lift", 30, EpisodeConfig(perturbation=Perturbation(perception_offset=(0.01, 0, 0), retry=True)))
    assert no < yes


def test_vision_matches_oracle_for_identical_robots():
    kw = dict(source="arm6_b", target="arm6_b", target_gain=1.0, target_base=RigidTransform())
    vision = rate("lift", 200, EpisodeConfig(observation="vision", **kw))
    oracle = rate("lift", 200, EpisodeConfig(observation="oracle", **kw))
    assert abs(vision - oracle) <= 0.02


def test_external_zero_policy_holds_pose():
    cfg = EpisodeConfig(policy_command=(sys.executable, "-m", "crosspaint.policy"), policy_timeout=20)
    r = run_episode(Task("reach", 0, horizon=3), cfg)
    assert not r.success and not r.invalid and r.failure == "horizon"
    assert r.latency > 0


def test_malformed_external_policy_marks_invalid(tmp_path):
    p = tmp_path / "bad.py"
    p.write_text("import sys\nfor line in sys.stdin:\n    print('{}', flush=True)\n")
    cfg = EpisodeConfig(policy_command=(sys.executable, str(p)), policy_timeout=20)
    r = run_episode(Task("reach", 0, horizon=3), cfg)
    assert r.invalid and r.failure == "protocol"


def test_perturbation_parsing():
    p = Perturbation.from_dict({"proprio_offset": -0.08, "camera": "large", "reproject": True})
    assert p.proprio_offset == (0.0, 0.0, -0.08)
    assert p.label == "camera=large;reproject=True;proprio_offset=0/0/-0.08"
    assert Perturbation().label == "none"
    with pytest.raises(ValueError):
        Perturbation.from_dict({"wobble": 1})
    with pytest.raises(ValueError):
        Perturbation.from_dict({"camera": "huge"})


def test_camera_levels_move_as_declared():
    cam = default_camera()
    assert perturb_camera(cam, "none").pose.as_matrix().tolist() == cam.pose.as_matrix().tolist()
    for level, (shift, deg) in CAMERA_LEVELS.items():
        moved = perturb_camera(cam, level)
        fwd0, fwd1 = cam.pose.rotation_matrix[:, 2], moved.pose.rotation_matrix[:, 2]
        ang = np.degrees(np.arccos(np.clip(fwd0[:2] @ fwd1[:2] / np.linalg.norm(fwd0[:2]) / np.linalg.norm(fwd1[:2]), -1, 1)))
        assert abs(ang - deg) < 1e-6
    with pytest.raises(ValueError):
        perturb_camera(cam, "huge")


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(modes=("teleport",))
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({"tasks": ["lift"], "colour": "red"})
    with pytest.raises(ValueError):
        ExperimentSpec(episodes=0)
    s = ExperimentSpec(tasks=("reach", "lift"), modes=("blocking", "delta"), perturbations=({}, {"mask_offset_px": 10}))
    assert len(s.cells()) == 8
    assert ExperimentSpec.from_dict(spec_to_dict(s)) .cells() == s.cells()


def test_paired_seeds():
    assert episode_seed(0, "lift", 3) == episode_seed(0, "lift", 3)
    assert episode_seed(0, "lift", 3) != episode_seed(1, "lift", 3)
    assert episode_seed(0, "lift", 3) != episode_seed(0, "reach", 3)


def test_one_cell_grid_aggregates_episodes():
    spec = ExperimentSpec(tasks=("reach",), modes=("delta",), episodes=6, seed=3)
    report = run_grid(spec, workers=1)
    cell = report.cells[0]
    eps = [run_episode(t, spec.episode_config("arm7_a", "arm6_b", "delta", 0)) for t in seeds("reach", 6, 3)]
    assert cell.successes == sum(e.success for e in eps)
    assert cell.mean_ticks == pytest.approx(np.mean([e.ticks for e in eps]))
    assert 0.0 <= cell.success_rate <= 1.0


def test_grid_csv_and_worker_independence(tmp_path):
    spec = ExperimentSpec(tasks=("reach", "lift"), modes=("blocking", "delta"), episodes=3, seed=1)
    a = run_grid(spec, tmp_path / "a.csv", workers=1)
    run_grid(spec, tmp_path / "b.csv", workers=2)
    text = (tmp_path / "a.csv").read_bytes()
    assert text == (tmp_path / "b.csv").read_bytes()
    header = text.decode().splitlines()[0]
    assert header == ",".join(ExperimentReport.CSV_COLUMNS)
    assert len(text.decode().splitlines()) == 1 + len(spec.cells())
    assert a.cell(task="lift", mode="delta").episodes == 3


def test_broken_cell_is_flagged_and_grid_continues():
    spec = ExperimentSpec(tasks=("reach",), pairs=(("arm7_a", "/nonexistent.urdf"), ("arm7_a", "arm6_b")), episodes=2)
    report = run_grid(spec, workers=1)
    assert len(report.flagged) == 1
    assert report.cells[1].episodes == 2 and not report.cells[1].error


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("CROSSPAINT_THREADS", "3")
    assert worker_count(10) == 3
    assert worker_count(2) == 2
    monkeypatch.setenv("CROSSPAINT_THREADS", "0")
    assert worker_count(5) == 1


def test_default_target_base_is_offset():
    assert np.linalg.norm(DEFAULT_TARGET_BASE.translation) > 0
