"""Rigid transforms, quaternions and the pinhole camera.

Conventions used throughout the package:

- Quaternions are stored ``(w, x, y, z)`` and kept unit-norm.
- ``RigidTransform`` maps points from its child frame into its parent frame,
  ``p_parent = R @ p_child + t``. ``A @ B`` composes as homogeneous matrices.
- Camera frames are right handed with +z forward, +x right and +y down.
  ``CameraModel.pose`` is the camera pose in the world (world-from-camera);
  the camera-from-world transform is derived from it.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class InvalidDepthError(ValueError):
    pass


# ---------------------------------------------------------------- quaternions


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    if abs(n - 1.0) <= 4 * np.finfo(float).eps:
        return q  # already unit: keep bits so repeated normalisation is a no-op
    return q / n


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product ``a * b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_rotvec(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    angle = float(np.linalg.norm(r))
    if angle < 1e-12:
        # first-order term keeps tiny rotations exact to double precision
        return quat_normalize([1.0, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]])
    axis = r / angle
    s = math.sin(0.5 * angle)
    return np.array([math.cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_to_rotvec(q) -> np.ndarray:
    """Rotation vector of ``q``, taking the short way round (angle <= pi)."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * math.atan2(s, q[0])
    return v / s * angle


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return quat_from_rotvec(axis / np.linalg.norm(axis) * angle)


def quat_from_euler_xyz(r) -> np.ndarray:
    """Extrinsic x-y-z rotation, i.e. ``Rz(rz) @ Ry(ry) @ Rx(rx)``."""
    qx = quat_from_rotvec([r[0], 0.0, 0.0])
    qy = quat_from_rotvec([0.0, r[1], 0.0])
    qz = quat_from_rotvec([0.0, 0.0, r[2]])
    return quat_mul(qz, quat_mul(qy, qx))


def quat_to_euler_xyz(q) -> np.ndarray:
    m = quat_to_matrix(q)
    ry = math.asin(max(-1.0, min(1.0, -m[2, 0])))
    rx = math.atan2(m[2, 1], m[2, 2])
    rz = math.atan2(m[1, 0], m[0, 0])
    return np.array([rx, ry, rz])


def quat_angle(a, b) -> float:
    """Rotation angle in radians between two orientations."""
    d = abs(float(np.dot(a, b)))
    return 2.0 * math.acos(min(1.0, d))


# ---------------------------------------------------------------- transforms


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) element: translation in meters plus unit quaternion (w, x, y, z)."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite translation {t!r}")
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "rotation", _frozen(quat_normalize(np.reshape(self.rotation, 4))))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    @classmethod
    def from_rotvec(cls, translation, rotvec) -> "RigidTransform":
        return cls(translation, quat_from_rotvec(rotvec))

    @classmethod
    def from_rpy(cls, xyz, rpy) -> "RigidTransform":
        """URDF-style origin: fixed-axis roll, pitch, yaw."""
        return cls(xyz, quat_from_euler_xyz(rpy))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        t = self.translation + self.rotation_matrix @ other.translation
        return RigidTransform(t, quat_mul(self.rotation, other.rotation))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        qi = quat_conj(self.rotation)
        return RigidTransform(-(quat_to_matrix(qi) @ self.translation), qi)

    def apply(self, points) -> np.ndarray:
        """Map points (``(3,)`` or ``(N, 3)``) from child to parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation_matrix.T + self.translation

    def rpy(self) -> np.ndarray:
        return quat_to_euler_xyz(self.rotation)

    def to_record(self) -> list[float]:
        return [*map(float, self.translation), *map(float, self.rotation)]

    def __repr__(self):
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        return f"RigidTransform(t=[{t}], q=[{q}])"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def transform_pose(T: RigidTransform, p: RigidTransform) -> RigidTransform:
    """Re-express pose ``p`` through frame change ``T`` (returns ``T @ p``)."""
    return T.compose(p)


def pose_error_norm(a: RigidTransform, b: RigidTransform) -> float:
    """Euclidean norm of [position difference (m), quaternion difference].

    The quaternion of ``b`` is sign-flipped when that brings it closer to
    ``a``, so ``q`` and ``-q`` count as the same orientation.
    """
    dp = a.translation - b.translation
    qa, qb = a.rotation, b.rotation
    dq = min(float(np.sum((qa - qb) ** 2)), float(np.sum((qa + qb) ** 2)))
    return math.sqrt(float(dp @ dp) + dq)


def interpolate_pose(a: RigidTransform, b: RigidTransform, fraction: float) -> RigidTransform:
    """Move ``fraction`` of the way from ``a`` to ``b``.

    Fractions outside [0, 1] extrapolate along the same geodesic, which is
    what lets a proportional plant with gain > 1 overshoot.
    """
    t = a.translation + fraction * (b.translation - a.translation)
    qb = b.rotation if np.dot(a.rotation, b.rotation) >= 0 else -b.rotation
    rel = quat_mul(quat_conj(a.rotation), qb)
    return RigidTransform(t, quat_mul(a.rotation, quat_from_rotvec(fraction * quat_to_rotvec(rel))))


# ---------------------------------------------------------------- pose records

_SPLIT = re.compile(r"[,\s]+")


def parse_numbers(text: str) -> list[float]:
    return [float(tok) for tok in _SPLIT.split(text.strip()) if tok]


def parse_pose_record(text) -> tuple[RigidTransform, float]:
    """Parse ``tx ty tz qw qx qy qz [gripper_width]`` (space or comma separated)."""
    vals = parse_numbers(text) if isinstance(text, str) else [float(v) for v in text]
    if len(vals) not in (7, 8):
        raise ValueError(f"pose record needs 7 or 8 numbers, got {len(vals)}")
    width = vals[7] if len(vals) == 8 else 0.0
    return RigidTransform(vals[:3], vals[3:7]), width


def format_pose_record(pose: RigidTransform, width: float | None = None) -> str:
    vals = pose.to_record() + ([] if width is None else [float(width)])
    return " ".join(repr(v) for v in vals)


# ---------------------------------------------------------------- camera


class Projection(NamedTuple):
    u: float
    v: float
    depth: float
    in_front: bool


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera without distortion.

    ``pose`` is world-from-camera; pixel ``(u, v)`` samples the ray through
    integer coordinates, so the optical axis lands exactly on ``(cx, cy)``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def camera_from_world(self) -> RigidTransform:
        return self.pose.inverse()

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def with_pose(self, pose: RigidTransform) -> "CameraModel":
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    @classmethod
    def looking_at(cls, eye, target, up=(0.0, 0.0, 1.0), *, fov_deg=60.0, width=84, height=84):
        """Camera at ``eye`` looking at ``target`` with square pixels."""
        eye = np.asarray(eye, float)
        z = np.asarray(target, float) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, float))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [0.0, 1.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        m = np.eye(4)
        m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x, y, z, eye
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        return cls(f, f, (width - 1) / 2, (height - 1) / 2, width, height, RigidTransform.from_matrix(m))


def project_point(cam: CameraModel, p_world) -> Projection:
    x, y, z = cam.camera_from_world.apply(p_world)
    if z <= 0:
        return Projection(math.nan, math.nan, float(z), False)
    return Projection(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy, float(z), True)


def project_points(cam: CameraModel, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection; returns ``(u, v, z)`` with NaN pixels where z <= 0."""
    pc = cam.camera_from_world.apply(np.asarray(points, float).reshape(-1, 3))
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        front = z > 0
        u = np.where(front, cam.fx * pc[:, 0] / z + cam.cx, np.nan)
        v = np.where(front, cam.fy * pc[:, 1] / z + cam.cy, np.nan)
    return u, v, z


def backproject_pixel(cam: CameraModel, u: float, v: float, depth: float) -> np.ndarray:
    if not (math.isfinite(depth) and depth > 0):
        raise InvalidDepthError(f"depth must be positive and finite, got {depth!r}")
    pc = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return cam.pose.apply(pc)


def backproject_depth(cam: CameraModel, depth: np.ndarray) -> np.ndarray:
    """World points for every pixel of a depth image, shape ``(H, W, 3)``.

    Non-finite or non-positive depths give NaN points.
    """
    h, w = depth.shape
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    d = np.where(np.isfinite(depth) & (depth > 0), depth, np.nan)
    pc = np.stack([(uu - cam.cx) / cam.fx * d, (vv - cam.cy) / cam.fy * d, d], axis=-1)
    return cam.pose.apply(pc.reshape(-1, 3)).reshape(h, w, 3)


def load_camera(path) -> CameraModel:
    """Read a calibration file: JSON with fx, fy, cx, cy, width, height, extrinsic.

    ``extrinsic`` is a world-from-camera pose record, either a string or a
    list of seven numbers.
    """
    data = json.loads(Path(path).read_text())
    return camera_from_dict(data)


def camera_from_dict(data: dict) -> CameraModel:
    pose, _ = parse_pose_record(data.get("extrinsic", [0, 0, 0, 1, 0, 0, 0]))
    return CameraModel(
        float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]),
        int(data["width"]), int(data["height"]), pose,
    )


def camera_to_dict(cam: CameraModel) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "extrinsic": format_pose_record(cam.pose),
    }


def save_camera(cam: CameraModel, path) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=2) + "\n")
