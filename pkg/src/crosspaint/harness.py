"""Synthetic tabletop tasks, episode execution and experiment grids.

The world is kinematic: a table, a back wall, one or two cubes and the
target robot. A cube attaches rigidly to the gripper when the gripper
closes around it and drops onto whatever is below when released. No
contact forces are simulated.

Every pose here is a ``RigidTransform``. World poses carry a ``_w`` suffix
where it matters; the target robot's true EEF pose is kept in its own base
frame, the scripted policy sees everything in the source base frame.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dynamics import (
    ControllerConfig,
    DynamicsModel,
    blocking_step,
    delta_step,
    fit_forward_dynamics,
    predict_desired_pose,
    synthetic_dataset,
)
from .fixtures import ROBOTS, fixture_robot
from .geometry import (
    CameraModel,
    RigidTransform,
    parse_pose_record,
    quat_from_axis_angle,
    transform_pose,
)
from .pipeline import CrosspaintConfig, TargetObservation, cross_paint
from .policy import (
    CubeLocator,
    ObjectDetector,
    PolicyError,
    PolicyQuery,
    SceneState,
    ScriptedPolicy,
    SubprocessEndpoint,
    TaskGeometry,
    VisualPolicy,
    query_external,
)
from .raster import FrameSet, Light, Scene, SceneObject, SceneRobot, render
from .urdf import Geometry, JointState, RobotModel, forward_kinematics, load_robot, make_joint_state, solve_ik

# ---------------------------------------------------------------- scene constants

CUBE_SIZE = 0.04
CUBE_COLOR = (200, 40, 40)
BASE_CUBE_COLOR = (40, 150, 60)
TABLE_COLOR = (170, 135, 95)
WALL_COLOR = (150, 160, 175)
TABLE_ID, WALL_ID, CUBE_ID, BASE_CUBE_ID = 201, 202, 203, 204

CUBE_X = (0.40, 0.60)
CUBE_Y = (-0.15, 0.15)

LOOK_AT = np.array([0.45, 0.0, 0.1])
CAMERA_EYE = np.array([0.45, -0.9, 1.0])
CAMERA_FOV = 42.0
IMAGE_SIZE = 84

# grasp predicate: TCP must be centred on the cube within these limits; the
# vertical one admits the residual a blocking controller leaves behind
GRASP_LATERAL = 0.008
GRASP_VERTICAL = 0.018
# released this far above its support, a cube tips over instead of resting
DROP_TOLERANCE = 0.02
GOAL_TOLERANCE = 0.02
LIFT_SUCCESS = 0.10  # held cube raised this far above its start

HORIZONS = {"reach": 30, "lift": 50, "stack": 80}
MODES = ("blocking", "delta", "playback")
OBSERVATIONS = ("state", "vision", "oracle")
# translation along the camera x axis (m), orbit about the vertical through LOOK_AT (deg)
CAMERA_LEVELS = {
    "none": (0.0, 0.0),
    "small": (0.01, 5.0),
    "medium": (0.05, 15.0),
    "large": (0.10, 15.0),
}

DEFAULT_TARGET_BASE = RigidTransform([0.0, 0.05, 0.0], quat_from_axis_angle([0, 0, 1], math.radians(10.0)))


def default_camera() -> CameraModel:
    return CameraModel.looking_at(CAMERA_EYE, LOOK_AT, fov_deg=CAMERA_FOV, width=IMAGE_SIZE, height=IMAGE_SIZE)


def perturb_camera(cam: CameraModel, level: str) -> CameraModel:
    """Move ``cam`` by one of the named mismatch levels."""
    if level not in CAMERA_LEVELS:
        raise ValueError(f"unknown camera level {level!r}; choose from {sorted(CAMERA_LEVELS)}")
    shift, deg = CAMERA_LEVELS[level]
    pivot = RigidTransform(LOOK_AT)
    orbit = pivot @ RigidTransform(rotation=quat_from_axis_angle([0, 0, 1], math.radians(deg))) @ pivot.inverse()
    pose = orbit @ cam.pose @ RigidTransform([shift, 0.0, 0.0])
    return cam.with_pose(pose)


def _box(size) -> Geometry:
    return Geometry("box", tuple(float(s) for s in size))


_TABLE = SceneObject(TABLE_ID, _box((2.4, 2.4, 0.05)), RigidTransform([0.45, 0.0, -0.025]), TABLE_COLOR)
_WALL = SceneObject(WALL_ID, _box((3.0, 0.05, 2.0)), RigidTransform([0.45, 0.7, 0.8]), WALL_COLOR)
_CUBE = _box((CUBE_SIZE,) * 3)


def static_objects() -> tuple:
    return (_TABLE, _WALL)


def cube_objects(cubes: dict) -> tuple:
    colors = {"cube": (CUBE_ID, CUBE_COLOR), "base_cube": (BASE_CUBE_ID, BASE_CUBE_COLOR)}
    return tuple(SceneObject(colors[k][0], _CUBE, RigidTransform(v), colors[k][1]) for k, v in sorted(cubes.items()))


# ---------------------------------------------------------------- tasks and world


@dataclass(frozen=True)
class Task:
    id: str
    seed: int
    horizon: int | None = None

    def __post_init__(self):
        if self.id not in HORIZONS:
            raise ValueError(f"unknown task {self.id!r}; choose from {sorted(HORIZONS)}")
        if self.horizon is None:
            object.__setattr__(self, "horizon", HORIZONS[self.id])

    @property
    def policy_kind(self) -> str:
        return {"reach": "reach", "lift": "pick-place", "stack": "stack"}[self.id]

    def initial_cubes(self) -> dict:
        rng = np.random.default_rng(self.seed)
        z = CUBE_SIZE / 2

        def sample():
            return np.array([rng.uniform(*CUBE_X), rng.uniform(*CUBE_Y), z])

        cubes = {"cube": sample()}
        if self.id == "stack":
            other = sample()
            while np.linalg.norm(other[:2] - cubes["cube"][:2]) < 0.1:
                other = sample()
            cubes["base_cube"] = other
        return cubes


@dataclass
class World:
    """Mutable kinematic state of one episode."""

    cubes: dict
    start: dict
    tcp_w: RigidTransform
    width: float
    max_width: float
    attached: str | None = None
    grip_offset: np.ndarray | None = None  # cube centre in the TCP frame
    toppled: bool = False

    def move(self, tcp_w: RigidTransform, width_cmd: float) -> None:
        """Gripper first, then the arm: the fingers act at once, the arm lags."""
        self._gripper(float(np.clip(width_cmd, 0.0, self.max_width)))
        self.tcp_w = tcp_w
        if self.attached is not None:
            self.cubes[self.attached] = tcp_w.apply(self.grip_offset)

    def _gripper(self, cmd: float) -> None:
        if self.attached is not None:
            if cmd > CUBE_SIZE + 0.002:
                self._release()
                self.width = cmd
            return
        closing_past = self.width >= CUBE_SIZE and cmd < CUBE_SIZE
        if closing_past:
            for name in sorted(self.cubes):
                if self.grasp_ok(name):
                    self.attached = name
                    self.grip_offset = self.tcp_w.inverse().apply(self.cubes[name])
                    self.width = CUBE_SIZE
                    return
        self.width = cmd

    def grasp_ok(self, name: str) -> bool:
        d = self.cubes[name] - self.tcp_w.translation
        return bool(np.linalg.norm(d[:2]) <= GRASP_LATERAL and abs(d[2]) <= GRASP_VERTICAL)

    def _release(self) -> None:
        name, self.attached, self.grip_offset = self.attached, None, None
        c = self.cubes[name].copy()
        support = 0.0
        for other, p in self.cubes.items():
            if other != name and np.all(np.abs(p[:2] - c[:2]) < CUBE_SIZE):
                support = max(support, p[2] + CUBE_SIZE / 2)
        drop = c[2] - CUBE_SIZE / 2 - support
        if support > 0.0 and drop > DROP_TOLERANCE:
            # tips off the lower cube and lands beside it
            self.toppled = True
            support = 0.0
            c[0] += CUBE_SIZE
        c[2] = support + CUBE_SIZE / 2
        self.cubes[name] = c


def task_success(task: Task, world: World) -> bool:
    """Pure function of the final world state."""
    cube = world.cubes["cube"]
    if task.id == "reach":
        goal = world.start["cube"] + [0.0, 0.0, TaskGeometry().reach_height]
        return bool(np.linalg.norm(world.tcp_w.translation - goal) < GOAL_TOLERANCE)
    if task.id == "lift":
        return bool(world.attached == "cube" and cube[2] - world.start["cube"][2] >= LIFT_SUCCESS)
    base = world.cubes["base_cube"]
    return bool(
        world.attached is None
        and not world.toppled
        and np.linalg.norm(cube[:2] - base[:2]) < GOAL_TOLERANCE
        and abs(cube[2] - base[2] - CUBE_SIZE) < 0.005
    )


# ---------------------------------------------------------------- robots


def resolve_robot(name: str) -> RobotModel:
    """A fixture name, or a path to a URDF (sidecar ``.json`` beside it if present)."""
    if name in ROBOTS:
        return fixture_robot(name)
    p = Path(name)
    side = p.with_suffix(".json")
    return load_robot(p, side if side.exists() else None)


@lru_cache(maxsize=8)
def source_dynamics(gain: float = 1.0, convention: str = "axis-angle", n: int = 300, seed: int = 0) -> DynamicsModel:
    """Forward model fit on random transitions of the source plant."""
    slope = np.full(7, float(gain))
    slope[6] = 1.0
    return fit_forward_dynamics(synthetic_dataset(slope, np.zeros(7), n, seed, convention))


# ---------------------------------------------------------------- episodes


@dataclass(frozen=True)
class Perturbation:
    mask_offset_px: int = 0
    camera: str = "none"
    reproject: bool = False
    luminance_offset: int = 0
    proprio_offset: tuple = (0.0, 0.0, 0.0)
    gain_scale: float = 1.0
    perception_offset: tuple = (0.0, 0.0, 0.0)
    retry: bool = False

    @classmethod
    def from_dict(cls, d: dict | None) -> "Perturbation":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown perturbation keys {sorted(unknown)}")
        for k in ("proprio_offset", "perception_offset"):
            if k in d:
                v = d[k]
                d[k] = (0.0, 0.0, float(v)) if np.isscalar(v) else tuple(float(x) for x in v)
        if "camera" in d and d["camera"] not in CAMERA_LEVELS:
            raise ValueError(f"unknown camera level {d['camera']!r}")
        return cls(**d)

    @property
    def label(self) -> str:
        base = Perturbation()
        parts = []
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            if v != getattr(base, k):
                if isinstance(v, tuple):
                    v = "/".join(f"{x:g}" for x in v)
                elif isinstance(v, float):
                    v = f"{v:g}"
                parts.append(f"{k}={v}")
        return ";".join(parts) or "none"


@dataclass
class EpisodeConfig:
    source: str = "arm7_a"
    target: str = "arm6_b"
    mode: str = "blocking"
    observation: str = "state"
    source_gain: float = 1.0
    target_gain: float = 0.5
    threshold: float = 0.015
    max_ticks: int = 100
    target_base: RigidTransform = field(default_factory=lambda: DEFAULT_TARGET_BASE)
    source_base: RigidTransform = field(default_factory=RigidTransform)
    perturbation: Perturbation = field(default_factory=Perturbation)
    pipeline: dict = field(default_factory=dict)  # CrosspaintConfig overrides
    policy_command: tuple | None = None  # argv of an external policy process
    policy_timeout: float = 5.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.observation not in OBSERVATIONS:
            raise ValueError(f"unknown observation {self.observation!r}; choose from {OBSERVATIONS}")


@dataclass
class EpisodeResult:
    task: str
    seed: int
    success: bool
    invalid: bool
    steps: int
    ticks: int
    failure: str = ""  # "", "horizon", "no-convergence", "timeout", "protocol"
    latency: float = 0.0
    warnings: list = field(default_factory=list)


class _Episode:
    """Shared state and helpers for one run."""

    def __init__(self, task: Task, cfg: EpisodeConfig):
        self.task, self.cfg = task, cfg
        pert = cfg.perturbation
        self.src_model = resolve_robot(cfg.source)
        self.tgt_model = resolve_robot(cfg.target)
        self.T_ts = cfg.source_base.inverse() @ cfg.target_base
        self.T_st = self.T_ts.inverse()
        self.ctrl = ControllerConfig(
            cfg.target_gain * pert.gain_scale, cfg.threshold, cfg.max_ticks, pert.proprio_offset
        )
        self.f = source_dynamics(cfg.source_gain)
        cubes = task.initial_cubes()
        home = forward_kinematics(self.tgt_model, self.tgt_model.home_state()).eef
        self.eef_t = home
        self.q_t = self.tgt_model.home_state()
        self.world = World(
            cubes, {k: v.copy() for k, v in cubes.items()}, cfg.target_base @ home,
            self.tgt_model.gripper.max_width, self.tgt_model.gripper.max_width,
        )
        self.ticks = 0
        self.src_cam = default_camera()
        self.tgt_cam = perturb_camera(self.src_cam, pert.camera)

    # views -------------------------------------------------------
    def measured_source_pose(self) -> RigidTransform:
        return transform_pose(self.T_ts, self.ctrl.measure(self.eef_t))

    def scene_state(self) -> SceneState:
        inv = self.cfg.source_base.inverse()
        objects = {k: inv @ RigidTransform(v) for k, v in self.world.cubes.items()}
        return SceneState(self.measured_source_pose(), self.world.width, objects)

    def target_joint_state(self) -> JointState:
        ik = solve_ik(self.tgt_model, self.eef_t, self.q_t)
        self.q_t = make_joint_state(self.tgt_model, ik.state.arm_q, self.world.width)
        return self.q_t

    def target_frame(self) -> tuple[FrameSet, JointState]:
        q = self.target_joint_state()
        scene = Scene(
            static_objects() + cube_objects(self.world.cubes),
            (SceneRobot(self.tgt_model, q, self.cfg.target_base),),
        )
        return render(scene, self.tgt_cam), q

    def crosspaint_config(self) -> CrosspaintConfig:
        pert = self.cfg.perturbation
        return CrosspaintConfig(
            self.src_model, self.tgt_model, self.src_cam, self.tgt_cam,
            self.cfg.source_base, self.cfg.target_base,
            use_depth_occlusion=bool(self.cfg.pipeline.get("use_depth_occlusion", False)),
            dilate_arm_iters=int(self.cfg.pipeline.get("dilate_arm_iters", 20)),
            dilate_gripper_iters=int(self.cfg.pipeline.get("dilate_gripper_iters", 10)),
            inpaint_radius=int(self.cfg.pipeline.get("inpaint_radius", 3)),
            reproject=pert.reproject,
            mask_offset_px=(pert.mask_offset_px, 0),
            luminance_offset=pert.luminance_offset,
        )

    def painted(self, seed_q=None) -> tuple[np.ndarray, list]:
        frame, q = self.target_frame()
        obs = TargetObservation(frame, q, forward_kinematics(self.tgt_model, q).eef)
        out, diag = cross_paint(self.crosspaint_config(), obs, seed_q)
        self._src_q = diag.source_state
        return out.rgb, diag.warnings

    def oracle(self) -> np.ndarray:
        """What the source robot's camera would see had it done the task itself."""
        src_eef = transform_pose(self.T_ts, self.eef_t)
        ik = solve_ik(self.src_model, src_eef, self.src_model.home_state())
        q = make_joint_state(self.src_model, ik.state.arm_q, self.world.width)
        scene = Scene(
            static_objects() + cube_objects(self.world.cubes),
            (SceneRobot(self.src_model, q, self.cfg.source_base),),
        )
        return render(scene, self.src_cam).rgb

    def image(self) -> tuple[np.ndarray, list]:
        if self.cfg.observation == "oracle":
            return self.oracle(), []
        return self.painted(getattr(self, "_src_q", None))

    # execution ---------------------------------------------------
    def apply_blocking(self, desired_t: RigidTransform, width_cmd: float) -> bool:
        res = blocking_step(self.ctrl, self.eef_t, desired_t)
        self.ticks += max(res.ticks, 1)
        self.eef_t = res.pose
        self.world.move(self.cfg.target_base @ self.eef_t, width_cmd)
        return res.converged

    def apply_delta(self, a_src: np.ndarray) -> None:
        R = self.T_st.rotation_matrix
        a = np.asarray(a_src, float).copy()
        a[:3], a[3:6] = R @ a[:3], R @ a[3:6]
        self.eef_t = delta_step(self.eef_t, a, self.ctrl.plant)
        self.ticks += 1
        self.world.move(self.cfg.target_base @ self.eef_t, self.world.width + a[6])


def _make_policy(task: Task, ep: _Episode):
    pert = ep.cfg.perturbation
    inner = ScriptedPolicy(task.policy_kind, retry=pert.retry, perception_offset=pert.perception_offset)
    if ep.cfg.observation == "state":
        return inner
    light = Light()

    def render_cube(c):
        scene = Scene(static_objects() + cube_objects({"cube": np.asarray(c, float)}), light=light)
        return render(scene, ep.src_cam).rgb

    locator = CubeLocator(ep.src_cam, render_cube, ObjectDetector(CUBE_COLOR, light.ambient), CUBE_SIZE)
    return VisualPolicy(inner, locator, ep.cfg.source_base)


def record_source_episode(task: Task, cfg: EpisodeConfig) -> list[tuple[RigidTransform, float]]:
    """Achieved source poses (source base frame) and gripper commands of a source run.

    The source executes on its own plant with its native non-blocking
    controller, the way its demonstrations would have been collected.
    """
    src = replace(
        cfg, target=cfg.source, mode="delta", observation="state", target_gain=cfg.source_gain,
        target_base=cfg.source_base, perturbation=Perturbation(), policy_command=None,
    )
    rec: list = []
    # run to the policy's own end; stopping at first success would cut the path short
    run_episode(task, src, _record=rec, _stop_on_success=False)
    return rec


def run_episode(
    task: Task, cfg: EpisodeConfig, *, _record: list | None = None, _stop_on_success: bool = True
) -> EpisodeResult:
    """Run one seeded episode; see the module docstring for the world model."""
    ep = _Episode(task, cfg)
    warnings: list = []
    latency = 0.0

    def result(success, steps, failure="", invalid=False):
        return EpisodeResult(task.id, task.seed, success, invalid, steps, ep.ticks, failure, latency, warnings)

    if cfg.mode == "playback":
        recorded = record_source_episode(task, cfg)
        for k, (pose_s, width) in enumerate(recorded[: task.horizon]):
            if not ep.apply_blocking(transform_pose(ep.T_st, pose_s), width):
                return result(False, k + 1, "no-convergence")
            if task_success(task, ep.world):
                return result(True, k + 1)
        return result(task_success(task, ep.world), len(recorded), "" if task_success(task, ep.world) else "horizon")

    endpoint = None
    policy = None
    if cfg.policy_command:
        endpoint = SubprocessEndpoint(list(cfg.policy_command), cfg.policy_timeout)
    else:
        policy = _make_policy(task, ep)
    try:
        for step in range(task.horizon):
            s = ep.scene_state()
            if endpoint is not None:
                if cfg.observation == "state":
                    img, _ = ep.target_frame()
                    img = img.rgb
                else:
                    img, w = ep.image()
                    warnings.extend(w)
                q = PolicyQuery(img, s.eef, s.gripper_width, step)
                try:
                    reply, dt = query_external(endpoint, q)
                except PolicyError as e:
                    return result(False, step, e.code, invalid=True)
                latency += dt
                a, done = reply.action, reply.done
            elif isinstance(policy, VisualPolicy):
                img = None
                if policy.needs_image:
                    img, w = ep.image()
                    warnings.extend(w)
                a, done = policy.act(s, img)
            else:
                a, done = policy.act(s)
            if done:
                break
            width_cmd = ep.world.width + float(a[6])
            if cfg.mode == "blocking":
                desired, _ = predict_desired_pose(ep.f, s.eef, a, ep.T_st, ep.f.convention)
                if not ep.apply_blocking(desired, width_cmd):
                    return result(False, step + 1, "no-convergence")
            else:
                ep.apply_delta(a)
            if _record is not None:
                _record.append((transform_pose(ep.T_ts, ep.eef_t), width_cmd))
            if _stop_on_success and task_success(task, ep.world):
                return result(True, step + 1)
        else:
            step = task.horizon - 1
    finally:
        if endpoint is not None:
            endpoint.close()
    ok = task_success(task, ep.world)
    return result(ok, step + 1, "" if ok else "horizon")


# ---------------------------------------------------------------- grids


@dataclass
class ExperimentSpec:
    tasks: tuple = ("lift",)
    pairs: tuple = (("arm7_a", "arm6_b"),)
    modes: tuple = ("blocking",)
    perturbations: tuple = ({},)
    episodes: int = 100
    seed: int = 0
    observation: str = "state"
    source_gain: float = 1.0
    target_gain: float = 0.5
    threshold: float = 0.015
    max_ticks: int = 100
    target_base: str | None = None  # pose record; None keeps the default offset
    pipeline: dict = field(default_factory=dict)
    policy_command: tuple | None = None

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        self.pairs = tuple(tuple(p) for p in self.pairs)
        self.modes = tuple(self.modes)
        self.perturbations = tuple(dict(p) for p in self.perturbations)
        for t in self.tasks:
            Task(t, 0)
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}")
        if self.observation not in OBSERVATIONS:
            raise ValueError(f"unknown observation {self.observation!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        for p in self.perturbations:
            Perturbation.from_dict(p)
        if self.policy_command is not None:
            self.policy_command = tuple(self.policy_command)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def cells(self) -> list[tuple]:
        return [
            (task, src, tgt, mode, i)
            for task in self.tasks
            for src, tgt in self.pairs
            for mode in self.modes
            for i in range(len(self.perturbations))
        ]

    def episode_config(self, src, tgt, mode, pert_index) -> EpisodeConfig:
        base = DEFAULT_TARGET_BASE if self.target_base is None else parse_pose_record(self.target_base)[0]
        return EpisodeConfig(
            src, tgt, mode, self.observation, self.source_gain, self.target_gain, self.threshold,
            self.max_ticks, base, RigidTransform(), Perturbation.from_dict(self.perturbations[pert_index]),
            dict(self.pipeline), self.policy_command,
        )


def episode_seed(master: int, task: str, index: int) -> int:
    """Same seed for the same (task, episode) in every cell, so cells are paired."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(task.encode()), int(index)])
    return int(ss.generate_state(1)[0])


@dataclass
class CellResult:
    task: str
    source: str
    target: str
    mode: str
    perturbation: str
    episodes: int
    successes: int
    invalid: int
    mean_ticks: float
    error: str = ""
    results: list = field(default_factory=list, repr=False)

    @property
    def success_rate(self) -> float:
        valid = self.episodes - self.invalid
        return self.successes / valid if valid else 0.0


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    cells: list

    CSV_COLUMNS = ("task", "source", "target", "mode", "perturbation", "episodes", "successes", "invalid", "mean_ticks")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for c in self.cells:
            w.writerow([c.task, c.source, c.target, c.mode, c.perturbation, c.episodes, c.successes,
                        c.invalid, f"{c.mean_ticks:.3f}"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def cell(self, **match) -> CellResult:
        hits = [c for c in self.cells if all(getattr(c, k) == v for k, v in match.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} cells match {match}")
        return hits[0]

    @property
    def flagged(self) -> list:
        return [c for c in self.cells if c.error]


def run_cell(spec: ExperimentSpec, cell: tuple) -> CellResult:
    task_id, src, tgt, mode, pi = cell
    cfg = spec.episode_config(src, tgt, mode, pi)
    label = cfg.perturbation.label
    results = []
    error = ""
    try:
        for i in range(spec.episodes):
            results.append(run_episode(Task(task_id, episode_seed(spec.seed, task_id, i)), cfg))
    except Exception as e:  # noqa: BLE001 - a broken cell is flagged, the grid goes on
        error = f"{type(e).__name__}: {e}"
    succ = sum(r.success for r in results if not r.invalid)
    inv = sum(r.invalid for r in results)
    valid = [r.ticks for r in results if not r.invalid]
    mean_ticks = float(np.mean(valid)) if valid else 0.0
    return CellResult(task_id, src, tgt, mode, label, spec.episodes, succ, inv, mean_ticks, error, results)


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("CROSSPAINT_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, n_jobs))


def _run_cell_args(args):
    return run_cell(*args)


def run_grid(spec: ExperimentSpec, out_csv=None, workers: int | None = None) -> ExperimentReport:
    """Run every cell; the report lists cells in spec order whatever the worker count."""
    cells = spec.cells()
    n = workers or worker_count(len(cells))
    if n <= 1:
        results = [run_cell(spec, c) for c in cells]
    else:
        with ProcessPoolExecutor(n) as pool:
            results = list(pool.map(_run_cell_args, [(spec, c) for c in cells]))
    report = ExperimentReport(spec, results)
    if out_csv is not None:
        report.write_csv(out_csv)
    return report


def spec_to_dict(spec: ExperimentSpec) -> dict:
    d = asdict(spec)
    d["tasks"], d["modes"] = list(spec.tasks), list(spec.modes)
    d["pairs"] = [list(p) for p in spec.pairs]
    d["perturbations"] = [dict(p) for p in spec.perturbations]
    if spec.policy_command is not None:
        d["policy_command"] = list(spec.policy_command)
    return d
