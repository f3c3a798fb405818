"""Deterministic software rasterizer: RGB, depth and segmentation buffers.

Triangles are z-buffered in camera space, clipped against a near plane and
flat shaded with one directional light plus an ambient term. Pixels sample
integer image coordinates, matching ``geometry.project_point``; there is no
anti-aliasing, so segmentation masks are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numba
import numpy as np
from PIL import Image

from .geometry import CameraModel, RigidTransform
from .urdf import Geometry, JointState, RobotModel, forward_kinematics

SEGMENTS = 32
NEAR = 1e-3


# ---------------------------------------------------------------- frames


@dataclass(eq=False)
class FrameSet:
    """One camera observation. Depth uses +inf for empty pixels, seg uses 0."""

    rgb: np.ndarray
    depth: np.ndarray | None = None
    seg: np.ndarray | None = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.uint8)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb must be HxWx3, got {self.rgb.shape}")
        for name in ("depth", "seg"):
            buf = getattr(self, name)
            if buf is not None and buf.shape != self.rgb.shape[:2]:
                raise ValueError(f"{name} shape {buf.shape} does not match rgb {self.rgb.shape[:2]}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[:2]

    def copy(self) -> "FrameSet":
        return FrameSet(
            self.rgb.copy(),
            None if self.depth is None else self.depth.copy(),
            None if self.seg is None else self.seg.copy(),
        )


def save_frameset(frame: FrameSet, directory) -> Path:
    """Write ``rgb.png`` (8-bit), ``depth.png`` (16-bit mm, 0 = none), ``seg.png`` (8-bit ids)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame.rgb, "RGB").save(d / "rgb.png")
    if frame.depth is not None:
        mm = np.where(np.isfinite(frame.depth), np.rint(frame.depth * 1000.0), 0)
        Image.fromarray(np.clip(mm, 0, 65535).astype(np.uint16)).save(d / "depth.png")
    if frame.seg is not None:
        Image.fromarray(np.clip(frame.seg, 0, 255).astype(np.uint8), "L").save(d / "seg.png")
    return d


def load_frameset(directory) -> FrameSet:
    d = Path(directory)
    rgb = np.asarray(Image.open(d / "rgb.png").convert("RGB"))
    depth = seg = None
    if (d / "depth.png").exists():
        mm = np.asarray(Image.open(d / "depth.png")).astype(np.float64)
        depth = np.where(mm > 0, mm / 1000.0, np.inf)
    if (d / "seg.png").exists():
        seg = np.asarray(Image.open(d / "seg.png")).astype(np.int32)
    return FrameSet(rgb, depth, seg)


# ---------------------------------------------------------------- tessellation


def box_triangles(size) -> np.ndarray:
    hx, hy, hz = (s / 2 for s in size)
    v = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    # vertex index = 4*ix + 2*iy + iz; faces wound outward
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return v[np.array(tris)]


def cylinder_triangles(radius: float, length: float, segments: int = SEGMENTS) -> np.ndarray:
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(segments)], axis=1)
    lo, hi = ring - [0, 0, length / 2], ring + [0, 0, length / 2]
    tris = []
    c_lo, c_hi = np.array([0, 0, -length / 2]), np.array([0, 0, length / 2])
    for i in range(segments):
        j = (i + 1) % segments
        tris += [(lo[i], lo[j], hi[j]), (lo[i], hi[j], hi[i]), (c_hi, hi[i], hi[j]), (c_lo, lo[j], lo[i])]
    return np.array(tris)


def sphere_triangles(radius: float, segments: int = SEGMENTS) -> np.ndarray:
    rings = segments // 2
    theta = np.linspace(0, np.pi, rings + 1)
    phi = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    pts = radius * np.stack(
        [np.sin(theta)[:, None] * np.cos(phi), np.sin(theta)[:, None] * np.sin(phi),
         np.cos(theta)[:, None] * np.ones_like(phi)], axis=-1,
    )
    tris = []
    for r in range(rings):
        for i in range(segments):
            j = (i + 1) % segments
            a, b, c, d = pts[r, i], pts[r, j], pts[r + 1, j], pts[r + 1, i]
            if r > 0:
                tris.append((a, d, b))
            if r < rings - 1:
                tris.append((b, d, c))
    return np.array(tris)


def geometry_triangles(g: Geometry) -> np.ndarray:
    """Triangles of one primitive in its parent link frame, ``(N, 3, 3)``."""
    if g.kind == "box":
        tris = box_triangles(g.size)
    elif g.kind == "cylinder":
        tris = cylinder_triangles(*g.size)
    elif g.kind == "sphere":
        tris = sphere_triangles(g.size[0])
    elif g.kind == "mesh":
        tris = np.asarray(g.triangles, dtype=float)
    else:
        raise ValueError(f"unknown geometry kind {g.kind!r}")
    return g.origin.apply(tris.reshape(-1, 3)).reshape(-1, 3, 3)


@dataclass(frozen=True, eq=False)
class RobotMesh:
    tris: np.ndarray  # (N, 3, 3) in link frames
    colors: np.ndarray  # (N, 3)
    link_of: np.ndarray  # (N,) index into link_names
    link_names: tuple
    labels: np.ndarray  # (N,) per-triangle link id, before any offset


@lru_cache(maxsize=64)
def robot_mesh(model: RobotModel) -> RobotMesh:
    tris, cols, link_of, labels = [], [], [], []
    names = []
    for lk in model.links:
        if not lk.visuals:
            continue
        li = len(names)
        names.append(lk.name)
        for g in lk.visuals:
            t = geometry_triangles(g)
            tris.append(t)
            cols.append(np.tile(np.asarray(g.color, float), (len(t), 1)))
            link_of.append(np.full(len(t), li))
            labels.append(np.full(len(t), model.link_id(lk.name)))
    if not tris:
        z = np.zeros((0, 3, 3))
        return RobotMesh(z, np.zeros((0, 3)), np.zeros(0, int), (), np.zeros(0, int))
    return RobotMesh(np.concatenate(tris), np.concatenate(cols), np.concatenate(link_of),
                     tuple(names), np.concatenate(labels))


# ---------------------------------------------------------------- scene


@dataclass(frozen=True, eq=False)
class SceneObject:
    id: int
    geometry: Geometry
    pose: RigidTransform = field(default_factory=RigidTransform)
    color: tuple = (200, 60, 50)


@dataclass(frozen=True, eq=False)
class SceneRobot:
    model: RobotModel
    state: JointState
    base: RigidTransform = field(default_factory=RigidTransform)
    label_offset: int = 0


@dataclass(frozen=True)
class Light:
    direction: tuple = (-0.3, 0.25, -1.0)
    ambient: float = 0.45

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        object.__setattr__(self, "direction", tuple(d / np.linalg.norm(d)))


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple = ()
    robots: tuple = ()
    light: Light = field(default_factory=Light)
    background: tuple = (96, 100, 110)

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("scene object ids must be unique")


# ---------------------------------------------------------------- kernel


@numba.njit(cache=True)
def _raster_one(p, col, label, fx, fy, cx, cy, rgb, depth, seg):
    h, w = depth.shape
    u0 = fx * p[0, 0] / p[0, 2] + cx
    v0 = fy * p[0, 1] / p[0, 2] + cy
    u1 = fx * p[1, 0] / p[1, 2] + cx
    v1 = fy * p[1, 1] / p[1, 2] + cy
    u2 = fx * p[2, 0] / p[2, 2] + cx
    v2 = fy * p[2, 1] / p[2, 2] + cy
    area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
    if abs(area) < 1e-12:
        return
    iz0, iz1, iz2 = 1.0 / p[0, 2], 1.0 / p[1, 2], 1.0 / p[2, 2]
    xmin = max(int(math.ceil(min(u0, u1, u2))), 0)
    xmax = min(int(math.floor(max(u0, u1, u2))), w - 1)
    ymin = max(int(math.ceil(min(v0, v1, v2))), 0)
    ymax = min(int(math.floor(max(v0, v1, v2))), h - 1)
    inv = 1.0 / area
    for y in range(ymin, ymax + 1):
        for x in range(xmin, xmax + 1):
            b0 = ((u1 - x) * (v2 - y) - (v1 - y) * (u2 - x)) * inv
            b1 = ((u2 - x) * (v0 - y) - (v2 - y) * (u0 - x)) * inv
            b2 = 1.0 - b0 - b1
            if b0 < 0.0 or b1 < 0.0 or b2 < 0.0:
                continue
            z = 1.0 / (b0 * iz0 + b1 * iz1 + b2 * iz2)
            if z < depth[y, x]:
                depth[y, x] = z
                seg[y, x] = label
                rgb[y, x, 0] = col[0]
                rgb[y, x, 1] = col[1]
                rgb[y, x, 2] = col[2]


@numba.njit(cache=True)
def _raster(tris, cols, labels, fx, fy, cx, cy, near, rgb, depth, seg):
    poly = np.empty((4, 3))
    tri = np.empty((3, 3))
    for t in range(tris.shape[0]):
        p = tris[t]
        n_in = 0
        for k in range(3):
            if p[k, 2] > near:
                n_in += 1
        if n_in == 0:
            continue
        if n_in == 3:
            _raster_one(p, cols[t], labels[t], fx, fy, cx, cy, rgb, depth, seg)
            continue
        # clip against z = near (Sutherland-Hodgman, one plane)
        m = 0
        for k in range(3):
            a = p[k]
            b = p[(k + 1) % 3]
            a_in = a[2] > near
            b_in = b[2] > near
            if a_in:
                poly[m] = a
                m += 1
            if a_in != b_in:
                s = (near - a[2]) / (b[2] - a[2])
                poly[m] = a + s * (b - a)
                poly[m, 2] = near
                m += 1
        for k in range(1, m - 1):
            tri[0] = poly[0]
            tri[1] = poly[k]
            tri[2] = poly[k + 1]
            _raster_one(tri, cols[t], labels[t], fx, fy, cx, cy, rgb, depth, seg)


def shade(tris_world: np.ndarray, albedo: np.ndarray, light: Light, eye: np.ndarray) -> np.ndarray:
    """Flat Lambert + ambient colour per triangle (uint8 values as float)."""
    n = np.cross(tris_world[:, 1] - tris_world[:, 0], tris_world[:, 2] - tris_world[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    # face the camera so winding never matters
    to_eye = eye - tris_world[:, 0]
    n = np.where((np.sum(n * to_eye, axis=1) < 0)[:, None], -n, n)
    lam = np.clip(n @ -np.asarray(light.direction), 0.0, 1.0)
    k = light.ambient + (1.0 - light.ambient) * lam
    return np.clip(np.floor(albedo * k[:, None] + 0.5), 0, 255)


def rasterize(tris_world, colors, labels, cam: CameraModel, background=(0, 0, 0)) -> FrameSet:
    """Rasterize pre-shaded world-space triangles into a new FrameSet."""
    h, w = cam.height, cam.width
    rgb = np.empty((h, w, 3), np.uint8)
    rgb[:] = np.asarray(background, np.uint8)
    depth = np.full((h, w), np.inf)
    seg = np.zeros((h, w), np.int32)
    if len(tris_world):
        tc = cam.camera_from_world.apply(tris_world.reshape(-1, 3)).reshape(-1, 3, 3)
        _raster(np.ascontiguousarray(tc), np.ascontiguousarray(colors, np.float64),
                np.ascontiguousarray(labels, np.int32), cam.fx, cam.fy, cam.cx, cam.cy, NEAR, rgb, depth, seg)
    return FrameSet(rgb, depth, seg)


def robot_triangles(model: RobotModel, q: JointState, base: RigidTransform):
    """World triangles, albedo and link ids of a posed robot."""
    mesh = robot_mesh(model)
    if not len(mesh.tris):
        return mesh.tris, mesh.colors, mesh.labels
    fk = forward_kinematics(model, q)
    b = base.as_matrix()
    out = np.empty_like(mesh.tris)
    for li, name in enumerate(mesh.link_names):
        sel = mesh.link_of == li
        m = b @ fk.link_poses[name]
        out[sel] = mesh.tris[sel] @ m[:3, :3].T + m[:3, 3]
    return out, mesh.colors, mesh.labels


_tessellated: dict = {}


def _object_triangles(obj: SceneObject) -> np.ndarray:
    key = id(obj.geometry)
    hit = _tessellated.get(key)
    if hit is None or hit[0] is not obj.geometry:
        hit = (obj.geometry, geometry_triangles(obj.geometry))
        if len(_tessellated) > 256:
            _tessellated.clear()
        _tessellated[key] = hit
    t = hit[1]
    return obj.pose.apply(t.reshape(-1, 3)).reshape(-1, 3, 3)


def render(scene: Scene, cam: CameraModel) -> FrameSet:
    """Z-buffered render of all objects and robots in ``scene``."""
    tris, cols, labels = [], [], []
    for obj in scene.objects:
        t = _object_triangles(obj)
        tris.append(t)
        cols.append(np.tile(np.asarray(obj.color, float), (len(t), 1)))
        labels.append(np.full(len(t), obj.id))
    for r in scene.robots:
        t, c, lab = robot_triangles(r.model, r.state, r.base)
        tris.append(t)
        cols.append(c)
        labels.append(lab + r.label_offset)
    if tris:
        tw = np.concatenate(tris)
        shaded = shade(tw, np.concatenate(cols), scene.light, cam.pose.translation)
        lab = np.concatenate(labels)
    else:
        tw, shaded, lab = np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0, int)
    return rasterize(tw, shaded, lab, cam, scene.background)


def render_robot_layer(
    model: RobotModel,
    q: JointState,
    base: RigidTransform,
    cam: CameraModel,
    light: Light | None = None,
    label_offset: int = 0,
) -> FrameSet:
    """Robot-only render; rgb is black and seg 0 wherever the robot is absent."""
    t, c, lab = robot_triangles(model, q, base)
    shaded = shade(t, c, light or Light(), cam.pose.translation)
    return rasterize(t, shaded, lab + label_offset, cam, (0, 0, 0))
