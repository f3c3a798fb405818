"""Per-dimension linear forward dynamics, pose plants and execution modes.

Actions are 7-vectors ``[dx, dy, dz, r1, r2, r3, dgrip]`` in the robot base
frame. The rotation part is a world-frame rotation vector
(``axis-angle``) or per-axis Euler increments (``euler-xyz``); a dataset
declares which, and a model fit on one cannot be used with the other.

The fitted model treats every dimension independently::

    next[d] = current[d] + slope[d] * action[d] + intercept[d]
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    RigidTransform,
    interpolate_pose,
    parse_numbers,
    pose_error_norm,
    quat_conj,
    quat_from_euler_xyz,
    quat_from_rotvec,
    quat_mul,
    quat_to_euler_xyz,
    quat_to_rotvec,
)

CONVENTIONS = ("axis-angle", "euler-xyz")
DIMS = ("x", "y", "z", "r1", "r2", "r3", "gripper")
THRESHOLD = 0.015


class InsufficientDataError(ValueError):
    pass


class ConventionMismatchError(ValueError):
    pass


class TrajectoryFormatError(ValueError):
    pass


def _check_convention(c: str) -> str:
    if c not in CONVENTIONS:
        raise ConventionMismatchError(f"unknown rotation convention {c!r}; use one of {CONVENTIONS}")
    return c


def _wrap(a):
    return (np.asarray(a) + math.pi) % (2 * math.pi) - math.pi


def rotation_coords(q, convention: str) -> np.ndarray:
    """The three rotation numbers a convention uses to describe orientation ``q``."""
    if convention == "euler-xyz":
        return quat_to_euler_xyz(q)
    return quat_to_rotvec(q)


def rotation_delta(q0, q1, convention: str) -> np.ndarray:
    """Rotation increment taking ``q0`` to ``q1``."""
    if convention == "euler-xyz":
        return _wrap(quat_to_euler_xyz(q1) - quat_to_euler_xyz(q0))
    # world frame: q1 = exp(r) * q0
    return quat_to_rotvec(quat_mul(q1, quat_conj(q0)))


def apply_rotation_delta(q, r, convention: str) -> np.ndarray:
    if convention == "euler-xyz":
        return quat_from_euler_xyz(quat_to_euler_xyz(q) + np.asarray(r, float))
    return quat_mul(quat_from_rotvec(r), q)


def apply_action(pose: RigidTransform, a, convention: str = "axis-angle") -> RigidTransform:
    """``pose ⊕ a``: translate by ``a[:3]``, rotate by ``a[3:6]``."""
    a = np.asarray(a, float)
    return RigidTransform(pose.translation + a[:3], apply_rotation_delta(pose.rotation, a[3:6], convention))


# ---------------------------------------------------------------- data


@dataclass(eq=False)
class Trajectory:
    """Time-indexed records; ``actions[k]`` is applied after observing record ``k``."""

    t: np.ndarray
    poses: list
    widths: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.widths = np.asarray(self.widths, float)
        self.actions = np.asarray(self.actions, float).reshape(len(self.t), -1)
        n = len(self.t)
        if not (len(self.poses) == len(self.widths) == len(self.actions) == n):
            raise TrajectoryFormatError("trajectory columns have different lengths")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise TrajectoryFormatError("timestamps must be strictly increasing")
        if self.actions.shape[1] != 7:
            raise TrajectoryFormatError(f"actions must have 7 components, got {self.actions.shape[1]}")

    @property
    def horizon(self) -> int:
        return len(self.t)


@dataclass(eq=False)
class Dataset:
    trajectories: list
    convention: str = "axis-angle"
    frame_id: str = "source_base"

    def __post_init__(self):
        _check_convention(self.convention)

    @property
    def n_transitions(self) -> int:
        return sum(max(tr.horizon - 1, 0) for tr in self.trajectories)

    def transitions(self):
        """Arrays ``(current, action, next)``, each ``(N, 7)``, in dataset order."""
        cur, act, nxt = [], [], []
        for tr in self.trajectories:
            for k in range(tr.horizon - 1):
                p0, p1 = tr.poses[k], tr.poses[k + 1]
                c = np.concatenate([p0.translation, np.zeros(3), [tr.widths[k]]])
                n = np.concatenate([
                    p1.translation, rotation_delta(p0.rotation, p1.rotation, self.convention), [tr.widths[k + 1]]
                ])
                cur.append(c)
                act.append(tr.actions[k])
                nxt.append(n)
        if not cur:
            z = np.zeros((0, 7))
            return z, z, z
        return np.array(cur), np.array(act), np.array(nxt)


_HEADER = "# crosspaint-trajectories"


def save_dataset(data: Dataset, path) -> None:
    """Text file: a header line, then one record per line, blank line between trajectories."""
    lines = [f"{_HEADER} convention={data.convention} frame={data.frame_id}"]
    for i, tr in enumerate(data.trajectories):
        if i:
            lines.append("")
        for k in range(tr.horizon):
            vals = [tr.t[k], *tr.poses[k].to_record(), tr.widths[k], *tr.actions[k]]
            lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line: str) -> dict:
    if not line.startswith(_HEADER):
        raise TrajectoryFormatError(f"missing header line starting with {_HEADER!r}")
    out = {}
    for tok in line[len(_HEADER):].split():
        key, _, val = tok.partition("=")
        out[key] = val
    if "convention" not in out:
        raise TrajectoryFormatError("header must declare convention=<axis-angle|euler-xyz>")
    return out


def _parse_block(rows: list[tuple[int, str]]) -> Trajectory:
    t, poses, widths, actions = [], [], [], []
    for lineno, text in rows:
        vals = parse_numbers(text)
        if len(vals) != 16:
            raise TrajectoryFormatError(f"line {lineno}: expected 16 numbers, got {len(vals)}")
        t.append(vals[0])
        poses.append(RigidTransform(vals[1:4], vals[4:8]))
        widths.append(vals[8])
        actions.append(vals[9:16])
    return Trajectory(np.array(t), poses, np.array(widths), np.array(actions))


def load_dataset(path) -> Dataset:
    """Read one trajectory file, or every ``*.txt`` file of a directory (sorted)."""
    p = Path(path)
    files = sorted(p.glob("*.txt")) if p.is_dir() else [p]
    if not files:
        raise TrajectoryFormatError(f"no trajectory files in {p}")
    trajs, conv, frame = [], None, None
    for f in files:
        lines = f.read_text().splitlines()
        if not lines:
            raise TrajectoryFormatError(f"{f}: empty file")
        hdr = _parse_header(lines[0])
        c, fr = _check_convention(hdr["convention"]), hdr.get("frame", "source_base")
        if conv is not None and (c, fr) != (conv, frame):
            raise ConventionMismatchError(f"{f}: header {c}/{fr} differs from {conv}/{frame}")
        conv, frame = c, fr
        block: list = []
        for i, line in enumerate(lines[1:], start=2):
            if line.strip() and not line.lstrip().startswith("#"):
                block.append((i, line))
            elif not line.strip() and block:
                trajs.append(_parse_block(block))
                block = []
        if block:
            trajs.append(_parse_block(block))
    return Dataset(trajs, conv, frame)


# ---------------------------------------------------------------- model


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    slope: np.ndarray
    intercept: np.ndarray
    residual_rms: np.ndarray
    rank_deficient: tuple = (False,) * 7
    convention: str = "axis-angle"
    frame_id: str = "source_base"

    @classmethod
    def identity(cls, convention: str = "axis-angle") -> "DynamicsModel":
        return cls(np.ones(7), np.zeros(7), np.zeros(7), (False,) * 7, convention)

    def step(self, current: np.ndarray, action) -> np.ndarray:
        return current + self.slope * np.asarray(action, float) + self.intercept

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "frame_id": self.frame_id,
            "dims": [
                {
                    "name": name,
                    "slope": float(self.slope[i]),
                    "intercept": float(self.intercept[i]),
                    "residual_rms": float(self.residual_rms[i]),
                    "rank_deficient": bool(self.rank_deficient[i]),
                }
                for i, name in enumerate(DIMS)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsModel":
        dims = {e["name"]: e for e in d["dims"]}
        missing = [n for n in DIMS if n not in dims]
        if missing:
            raise ValueError(f"dynamics model lacks dimensions {missing}")
        get = lambda k: np.array([float(dims[n][k]) for n in DIMS])  # noqa: E731
        return cls(
            get("slope"), get("intercept"), get("residual_rms"),
            tuple(bool(dims[n].get("rank_deficient", False)) for n in DIMS),
            _check_convention(d.get("convention", "axis-angle")), d.get("frame_id", "source_base"),
        )


def save_model(model: DynamicsModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> DynamicsModel:
    return DynamicsModel.from_dict(json.loads(Path(path).read_text()))


def fit_forward_dynamics(data: Dataset, min_transitions: int = 3) -> DynamicsModel:
    """Least squares of ``next - current`` on ``[action, 1]``, one dimension at a time.

    A dimension whose action column never varies cannot separate slope from
    intercept; it falls back to slope 1, intercept 0 and is flagged.
    """
    cur, act, nxt = data.transitions()
    n = len(cur)
    if n < min_transitions:
        raise InsufficientDataError(f"need at least {min_transitions} transitions, got {n}")
    slope, intercept, rms = np.ones(7), np.zeros(7), np.zeros(7)
    flagged = []
    for d in range(7):
        y = nxt[:, d] - cur[:, d]
        X = np.column_stack([act[:, d], np.ones(n)])
        coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < 2:
            flagged.append(True)
            coef = np.array([1.0, 0.0])
        else:
            flagged.append(False)
        slope[d], intercept[d] = coef
        rms[d] = math.sqrt(float(np.mean((X @ coef - y) ** 2)))
    return DynamicsModel(slope, intercept, rms, tuple(flagged), data.convention, data.frame_id)


def predict_desired_pose(
    f: DynamicsModel,
    p_src: RigidTransform,
    a,
    T_st: RigidTransform,
    convention: str | None = None,
) -> tuple[RigidTransform, float]:
    """``T_st · f(p_src, a)``: the pose the target should reach, in its own base frame.

    Returns the pose and the gripper command, which passes through as given.
    """
    if convention is not None and convention != f.convention:
        raise ConventionMismatchError(f"model was fit under {f.convention}, action uses {convention}")
    a = np.asarray(a, float)
    if a.shape != (7,):
        raise ValueError("action must have 7 components")
    t = p_src.translation + f.slope[:3] * a[:3] + f.intercept[:3]
    r = f.slope[3:6] * a[3:6] + f.intercept[3:6]
    q = apply_rotation_delta(p_src.rotation, r, f.convention)
    return T_st @ RigidTransform(t, q), float(a[6])


# ---------------------------------------------------------------- plant and execution


@dataclass(frozen=True)
class FirstOrderPlant:
    """Each tick closes ``gain`` of the remaining pose error (overshoots when > 1)."""

    gain: float = 1.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("plant gain must be positive")

    def tick(self, current: RigidTransform, command: RigidTransform) -> RigidTransform:
        return interpolate_pose(current, command, self.gain)


@dataclass(frozen=True)
class ControllerConfig:
    gain: float = 1.0
    threshold: float = THRESHOLD
    max_ticks: int = 100
    proprio_offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("gain must be positive")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        object.__setattr__(self, "proprio_offset", tuple(float(v) for v in self.proprio_offset))

    @property
    def plant(self) -> FirstOrderPlant:
        return FirstOrderPlant(self.gain)

    def measure(self, true_pose: RigidTransform) -> RigidTransform:
        """What proprioception reports: the true pose shifted by the offset."""
        if not any(self.proprio_offset):
            return true_pose
        return RigidTransform(true_pose.translation + np.asarray(self.proprio_offset), true_pose.rotation)

    def unmeasure(self, measured: RigidTransform) -> RigidTransform:
        if not any(self.proprio_offset):
            return measured
        return RigidTransform(measured.translation - np.asarray(self.proprio_offset), measured.rotation)


@dataclass(frozen=True)
class StepResult:
    pose: RigidTransform  # true pose after execution
    ticks: int
    converged: bool


def closed_form_ticks(error: float, gain: float, threshold: float = THRESHOLD) -> int:
    """Ticks a linear plant needs to bring ``error`` below ``threshold``."""
    if error < threshold:
        return 0
    c = abs(1.0 - gain)
    if c == 0.0:
        return 1
    if c >= 1.0:
        raise ValueError("the plant does not contract for this gain")
    return max(1, math.ceil(math.log(threshold / error) / math.log(c)))


def blocking_step(
    ctrl: ControllerConfig, current: RigidTransform, desired: RigidTransform, plant: FirstOrderPlant | None = None
) -> StepResult:
    """Tick ``plant`` until the measured pose is within the threshold of ``desired``."""
    plant = plant or ctrl.plant
    command = ctrl.unmeasure(desired)
    pose = current
    for ticks in range(ctrl.max_ticks + 1):
        if pose_error_norm(ctrl.measure(pose), desired) < ctrl.threshold:
            return StepResult(pose, ticks, True)
        if ticks == ctrl.max_ticks:
            break
        pose = plant.tick(pose, command)
    return StepResult(pose, ctrl.max_ticks, False)


def delta_step(
    current: RigidTransform, a, plant: FirstOrderPlant, convention: str = "axis-angle"
) -> RigidTransform:
    """One non-blocking tick towards ``current ⊕ a``."""
    return plant.tick(current, apply_action(current, a, convention))


def playback_step(
    recorded_next: RigidTransform, ctrl: ControllerConfig, plant: FirstOrderPlant | None, current: RigidTransform
) -> StepResult:
    """Block towards a recorded achieved pose; no policy involved."""
    return blocking_step(ctrl, current, recorded_next, plant)


def synthetic_dataset(
    slope, intercept, n_transitions: int, seed: int = 0, convention: str = "axis-angle", horizon: int = 50
) -> Dataset:
    """Random-walk trajectories whose transitions follow the given affine model exactly."""
    rng = np.random.default_rng(seed)
    slope, intercept = np.asarray(slope, float), np.asarray(intercept, float)
    trajs = []
    left = n_transitions
    while left > 0:
        h = min(horizon, left) + 1
        pose = RigidTransform(rng.uniform(-0.3, 0.3, 3) + [0.4, 0.0, 0.3], quat_from_rotvec(rng.normal(0, 0.3, 3)))
        width = 0.04
        poses, widths, acts = [], [], []
        for _ in range(h):
            a = np.concatenate([rng.uniform(-0.05, 0.05, 3), rng.uniform(-0.1, 0.1, 3), rng.uniform(-0.01, 0.01, 1)])
            poses.append(pose)
            widths.append(width)
            acts.append(a)
            d = slope * a + intercept
            pose = RigidTransform(pose.translation + d[:3], apply_rotation_delta(pose.rotation, d[3:6], convention))
            width = width + d[6]
        trajs.append(Trajectory(np.arange(h) * 0.1, poses, np.array(widths), np.array(acts)))
        left -= h - 1
    return Dataset(trajs, convention)
