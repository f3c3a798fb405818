import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crosspaint.fixtures import fixture_robot
from crosspaint.geometry import CameraModel, RigidTransform, quat_from_axis_angle
from crosspaint.raster import (
    FrameSet,
    Light,
    Scene,
    SceneObject,
    SceneRobot,
    geometry_triangles,
    load_frameset,
    render,
    render_robot_layer,
    save_frameset,
)
from crosspaint.urdf import Geometry, make_joint_state


def axis_camera(n=41, f=40.0):
    c = (n - 1) / 2
    return CameraModel(f, f, c, c, n, n)


def box(id_, size, at, color=(200, 60, 50), q=(1, 0, 0, 0)):
    return SceneObject(id_, Geometry("box", tuple(size)), RigidTransform(at, q), color)


def test_empty_scene():
    f = render(Scene(background=(10, 20, 30)), axis_camera())
    assert np.all(f.rgb == [10, 20, 30])
    assert np.all(np.isinf(f.depth))
    assert not f.seg.any()


def test_sphere_centre_depth_matches_ray_sphere():
    cam = axis_camera()
    sph = SceneObject(7, Geometry("sphere", (0.5,)), RigidTransform([0, 0, 2.0]))
    f = render(Scene(objects=(sph,)), cam)
    c = int(cam.cx)
    # analytic first hit of the optical-axis ray on the sphere
    assert abs(f.depth[c, c] - 1.5) <= 0.01
    assert f.seg[c, c] == 7


def test_overlapping_boxes_nearer_wins():
    near = box(1, (0.4, 0.4, 0.1), [0, 0, 1.0])
    far = box(2, (0.8, 0.8, 0.1), [0.1, 0, 2.0])
    f = render(Scene(objects=(far, near)), axis_camera())
    c = 20
    assert f.seg[c, c] == 1
    assert (f.seg == 2).any()


def _ray_cast(tris_cam, labels, cam):
    """Brute-force Moller-Trumbore over every pixel ray (camera frame)."""
    h, w = cam.height, cam.width
    depth = np.full((h, w), np.inf)
    seg = np.zeros((h, w), int)
    v0, v1, v2 = tris_cam[:, 0], tris_cam[:, 1], tris_cam[:, 2]
    e1, e2 = v1 - v0, v2 - v0
    for y in range(h):
        for x in range(w):
            d = np.array([(x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0])
            p = np.cross(d, e2)
            det = np.einsum("ij,ij->i", e1, p)
            ok = np.abs(det) > 1e-15
            inv = np.where(ok, 1.0 / np.where(ok, det, 1), 0)
            s = -v0
            u = np.einsum("ij,ij->i", s, p) * inv
            qv = np.cross(s, e1)
            v = (qv @ d) * inv
            t = np.einsum("ij,ij->i", e2, qv) * inv
            hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
            if hit.any():
                k = np.flatnonzero(hit)[np.argmin(t[hit])]
                depth[y, x] = t[k]
                seg[y, x] = labels[k]
    return depth, seg


SCENES = [
    (box(1, (0.3, 0.3, 0.3), [0, 0, 1.5]), box(2, (0.6, 0.2, 0.1), [0.1, 0.05, 1.2])),
    (SceneObject(3, Geometry("sphere", (0.3,)), RigidTransform([0.05, 0, 1.6])),
     box(4, (0.5, 0.5, 0.05), [0, 0, 1.9], q=quat_from_axis_angle([1, 1, 0], 0.6))),
    (SceneObject(5, Geometry("cylinder", (0.15, 0.6)), RigidTransform([0, 0, 1.4], quat_from_axis_angle([1, 0, 0], 1.2))),
     box(6, (0.2, 0.2, 0.2), [-0.1, 0.1, 1.0], q=quat_from_axis_angle([0, 0, 1], 0.4))),
]


@pytest.mark.parametrize("objects", SCENES)
def test_zbuffer_matches_ray_cast_oracle(objects):
    cam = axis_camera(24, 24.0)
    f = render(Scene(objects=objects), cam)
    tris, labels = [], []
    for o in objects:
        t = o.pose.apply(geometry_triangles(o.geometry).reshape(-1, 3)).reshape(-1, 3, 3)
        tris.append(t)
        labels += [o.id] * len(t)
    depth, seg = _ray_cast(np.concatenate(tris), np.array(labels), cam)
    # only silhouette pixels whose centre grazes an edge may disagree
    assert np.mean(seg != f.seg) <= 0.02
    both = np.isfinite(depth) & np.isfinite(f.depth) & (seg == f.seg)
    assert np.abs(depth[both] - f.depth[both]).max() < 1e-9


def test_render_is_deterministic():
    m = fixture_robot("arm7_a")
    cam = CameraModel.looking_at([0.45, -0.9, 1.0], [0.45, 0, 0.1], fov_deg=42)
    scene = Scene(objects=SCENES[0], robots=(SceneRobot(m, m.home_state(), label_offset=0),))
    a, b = render(scene, cam), render(scene, cam)
    assert a.rgb.tobytes() == b.rgb.tobytes()
    assert a.depth.tobytes() == b.depth.tobytes()
    assert a.seg.tobytes() == b.seg.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6), st.floats(0, 0.085))
def test_seg_iff_finite_depth(q, width):
    m = fixture_robot("arm6_b")
    cam = CameraModel.looking_at([0.45, -0.9, 1.0], [0.45, 0, 0.1], fov_deg=42, width=48, height=48)
    f = render_robot_layer(m, make_joint_state(m, q, width), RigidTransform(), cam)
    assert np.array_equal(f.seg != 0, np.isfinite(f.depth))
    assert np.all(f.depth[np.isfinite(f.depth)] > 0)
    labels = set(np.unique(f.seg)) - {0}
    assert labels <= {m.link_id(lk.name) for lk in m.links}


def test_robot_outside_frustum_is_empty():
    m = fixture_robot("arm6_b")
    cam = CameraModel.looking_at([0.45, -0.9, 1.0], [0.45, 0, 0.1], fov_deg=42)
    f = render_robot_layer(m, m.home_state(), RigidTransform([0, 5.0, 0]), cam)
    assert not f.seg.any()
    assert not f.rgb.any()


def test_robot_pixels_shrink_with_distance():
    m = fixture_robot("arm7_a")
    cam = CameraModel.looking_at([0.3, -1.2, 0.3], [0.3, 0, 0.3], fov_deg=50)
    axis = cam.pose.rotation_matrix[:, 2]
    counts = [
        int((render_robot_layer(m, m.home_state(), RigidTransform(axis * d), cam).seg != 0).sum())
        for d in (0.0, 0.4, 0.8)
    ]
    assert counts[0] >= counts[1] >= counts[2] > 0


def test_light_direction_normalised():
    assert np.isclose(np.linalg.norm(Light((0, 0, -3)).direction), 1.0)
    with pytest.raises(ValueError):
        Scene(objects=(box(1, (1, 1, 1), [0, 0, 1]), box(1, (1, 1, 1), [0, 0, 2])))


def test_frameset_round_trip(tmp_path):
    cam = axis_camera()
    f = render(Scene(objects=SCENES[0]), cam)
    save_frameset(f, tmp_path / "fs")
    g = load_frameset(tmp_path / "fs")
    assert np.array_equal(f.rgb, g.rgb)
    assert np.array_equal(f.seg, g.seg)
    fin = np.isfinite(f.depth)
    assert np.array_equal(fin, np.isfinite(g.depth))
    assert np.abs(f.depth[fin] - g.depth[fin]).max() <= 0.0005


def test_frameset_shape_checks():
    with pytest.raises(ValueError):
        FrameSet(np.zeros((4, 4, 3)), depth=np.zeros((3, 4)))
    with pytest.raises(ValueError):
        FrameSet(np.zeros((4, 4)))
