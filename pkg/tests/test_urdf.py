import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from crosspaint.fixtures import ROBOTS, fixture_robot, planar_2r_urdf, robot_files, write_fixture
from crosspaint.geometry import CameraModel, RigidTransform, backproject_pixel, quat_angle, quat_to_rotvec, quat_mul, quat_conj
from crosspaint.raster import render_robot_layer
from crosspaint.urdf import (
    CycleError,
    DimensionMismatchError,
    URDFParseError,
    apply_mount_offset,
    forward_kinematics,
    gripper_width_to_joints,
    jacobian,
    load_robot,
    make_joint_state,
    parse_urdf,
    robot_config,
    robot_to_urdf,
    solve_ik,
)

MINIMAL = """<robot name="mini">
  <link name="base"/>
  <link name="arm"><visual><geometry><box size="0.1 0.2 0.3"/></geometry></visual></link>
  <joint name="j" type="revolute">
    <parent link="base"/><child link="arm"/>
    <axis xyz="0 0 1"/><limit lower="-1.5" upper="2.0"/>
  </joint>
</robot>
"""


def test_minimal_fixture():
    m = parse_urdf(MINIMAL)
    assert m.arm_chain == ("j",)
    j = m.joint("j")
    assert (j.lower, j.upper, j.type) == (-1.5, 2.0, "revolute")
    assert m.links[1].visuals[0].size == (0.1, 0.2, 0.3)


def test_truncated_xml_names_element():
    with pytest.raises(URDFParseError) as exc:
        parse_urdf(MINIMAL[:-40])
    assert exc.value.line is not None
    assert exc.value.element is not None


def test_missing_attribute_reports_line():
    with pytest.raises(URDFParseError) as exc:
        parse_urdf(MINIMAL.replace('<child link="arm"/>', "<child/>"))
    assert exc.value.element == "child"
    assert exc.value.line == 5


def test_cycle_detected():
    text = MINIMAL.replace("</robot>", """  <joint name="back" type="fixed">
    <parent link="arm"/><child link="base"/>
  </joint>
</robot>""")
    with pytest.raises(CycleError):
        parse_urdf(text)


def test_unsupported_elements_become_warnings():
    text = MINIMAL.replace('<link name="base"/>', '<link name="base"><inertial/></link><gazebo/>')
    m = parse_urdf(text)
    assert any("inertial" in w for w in m.warnings)
    assert any("gazebo" in w for w in m.warnings)


def test_bad_limits_and_dimensions_rejected():
    with pytest.raises(URDFParseError):
        parse_urdf(MINIMAL.replace('upper="2.0"', 'upper="-2.0"'))
    with pytest.raises(URDFParseError):
        parse_urdf(MINIMAL.replace('size="0.1 0.2 0.3"', 'size="0.1 0 0.3"'))


def test_mesh_sidecar(tmp_path):
    (tmp_path / "tri.txt").write_text("# one triangle\n0 0 0\n1 0 0\n0 1 0\n")
    text = MINIMAL.replace('<box size="0.1 0.2 0.3"/>', '<mesh filename="tri.txt" scale="2 2 2"/>')
    m = parse_urdf(text, base_dir=tmp_path)
    g = m.links[1].visuals[0]
    assert g.kind == "mesh"
    assert np.allclose(g.triangles[0], [[0, 0, 0], [2, 0, 0], [0, 2, 0]])


def test_planar_2r_fk():
    m = parse_urdf(planar_2r_urdf())
    fk = forward_kinematics(m, make_joint_state(m, [0, 0]))
    assert np.allclose(fk.eef.translation, [2, 0, 0], atol=1e-12)
    assert np.allclose(fk.eef.rotation, [1, 0, 0, 0], atol=1e-12)
    fk = forward_kinematics(m, make_joint_state(m, [math.pi / 2, 0]))
    assert np.allclose(fk.eef.translation, [0, 2, 0], atol=1e-4)


def test_dimension_mismatch():
    m = fixture_robot("arm6_b")
    with pytest.raises(DimensionMismatchError):
        make_joint_state(m, np.zeros(7))


def test_joint_state_clamps_and_flags():
    m = fixture_robot("arm6_b")
    s = make_joint_state(m, [5, 0, 0, 0, 0, 0], 1.0)
    assert s.clamped
    assert s.arm_q[0] == m.arm_limits[0, 1]
    assert s.gripper_width == m.gripper.max_width
    assert not make_joint_state(m, np.zeros(6), 0.02).clamped


def _oracle_fk(urdf_text, config, q, width):
    """Independent tree walk over the raw XML with scipy rotations."""
    root = ET.fromstring(urdf_text)
    vals = dict(zip(config["arm_chain"], q))
    for name, (s, b) in config["gripper"]["joints"].items():
        vals[name] = s * width + b
    world = {}
    joints = root.findall("joint")
    children = {j.find("child").get("link") for j in joints}
    base = next(ln.get("name") for ln in root.findall("link") if ln.get("name") not in children)
    world[base] = np.eye(4)
    pending = list(joints)
    while pending:
        for j in list(pending):
            parent = j.find("parent").get("link")
            if parent not in world:
                continue
            o = j.find("origin")
            pre = np.eye(4)
            pre[:3, 3] = [float(v) for v in o.get("xyz").split()]
            pre[:3, :3] = Rotation.from_euler("xyz", [float(v) for v in o.get("rpy").split()]).as_matrix()
            step = np.eye(4)
            if j.get("type") != "fixed":
                axis = np.array([float(v) for v in j.find("axis").get("xyz").split()])
                lim = j.find("limit")
                x = float(np.clip(vals[j.get("name")], float(lim.get("lower")), float(lim.get("upper"))))
                if j.get("type") == "revolute":
                    step[:3, :3] = Rotation.from_rotvec(axis * x).as_matrix()
                else:
                    step[:3, 3] = axis * x
            world[j.find("child").get("link")] = world[parent] @ pre @ step
            pending.remove(j)
    return world


@pytest.mark.parametrize("name", sorted(ROBOTS))
def test_fk_matches_matrix_chain_oracle(name, rng):
    urdf, config = robot_files(*ROBOTS[name], name)
    m = parse_urdf(urdf, config)
    lim = m.arm_limits
    for _ in range(20):
        q = rng.uniform(lim[:, 0], lim[:, 1])
        w = rng.uniform(0, m.gripper.max_width)
        fk = forward_kinematics(m, make_joint_state(m, q, w))
        oracle = _oracle_fk(urdf, config, q, w)
        for link, mat in oracle.items():
            assert np.abs(fk.link_poses[link] - mat).max() < 1e-9, link


def test_fk_is_bit_identical(rng):
    m = fixture_robot("arm7_a")
    s = make_joint_state(m, rng.uniform(-1, 1, 7), 0.03)
    a, b = forward_kinematics(m, s), forward_kinematics(m, s)
    assert np.array_equal(a.eef.as_matrix(), b.eef.as_matrix())


def test_jacobian_matches_finite_differences(rng):
    m = fixture_robot("arm6_b")
    q = rng.uniform(-1, 1, 6)
    J = jacobian(m, make_joint_state(m, q))
    h = 1e-6
    base = forward_kinematics(m, make_joint_state(m, q)).eef
    for k in range(6):
        dq = q.copy()
        dq[k] += h
        moved = forward_kinematics(m, make_joint_state(m, dq)).eef
        lin = (moved.translation - base.translation) / h
        ang = quat_to_rotvec(quat_mul(moved.rotation, quat_conj(base.rotation))) / h
        assert np.allclose(J[:3, k], lin, atol=1e-5)
        assert np.allclose(J[3:, k], ang, atol=1e-5)


@pytest.mark.parametrize("name", ["arm7_a", "arm6_b", "arm7_b", "arm6_a"])
def test_ik_closure_from_perturbed_seed(name, rng):
    m = fixture_robot(name)
    home = np.asarray(m.home)
    ok = 0
    for _ in range(25):
        q = np.clip(home + rng.uniform(-1, 1, m.dof), m.arm_limits[:, 0], m.arm_limits[:, 1])
        target = forward_kinematics(m, make_joint_state(m, q)).eef
        seed = make_joint_state(m, q + rng.uniform(-0.1, 0.1, m.dof))
        res = solve_ik(m, target, seed)
        achieved = forward_kinematics(m, res.state).eef
        if res.success:
            ok += 1
            assert np.linalg.norm(achieved.translation - target.translation) < 1e-4
            assert quat_angle(achieved.rotation, target.rotation) < 1e-3
    assert ok == 25


def test_ik_unreachable_reports_residual():
    m = fixture_robot("arm6_b")
    res = solve_ik(m, RigidTransform([3.0, 0, 0.3]), m.home_state())
    assert not res.success
    assert res.position_error > 1.0
    assert res.iterations == 200


def test_redundant_arm_reaches_from_home(rng):
    m = fixture_robot("arm7_a")
    home = m.home_state()
    h = forward_kinematics(m, home).eef
    for _ in range(10):
        target = RigidTransform(h.translation + rng.uniform(-0.08, 0.08, 3), h.rotation)
        res = solve_ik(m, target, home)
        assert res.success
        assert np.linalg.norm(forward_kinematics(m, res.state).eef.translation - target.translation) < 1e-4


def test_gripper_width_mapping():
    m = fixture_robot("arm7_a")
    assert np.allclose(gripper_width_to_joints(m, 0.0), [0, 0])
    full = gripper_width_to_joints(m, m.gripper.max_width)
    assert np.allclose(full, [m.joint(n).upper for n in m.gripper.joints])
    assert np.allclose(gripper_width_to_joints(m, 1.0), full)
    assert np.allclose(gripper_width_to_joints(m, -1.0), [0, 0])


@pytest.mark.parametrize("width", [0.02, 0.04, 0.06])
def test_rendered_finger_gap_matches_width(width):
    m = fixture_robot("arm7_a")
    state = make_joint_state(m, m.home, width)
    fk = forward_kinematics(m, state)
    palm = fk.link_poses["palm"]
    fl, fr = m.link_id("finger_l"), m.link_id("finger_r")
    # look at the fingers along the palm x axis so the gap opens sideways
    centre = (fk.link_poses["finger_l"][:3, 3] + fk.link_poses["finger_r"][:3, 3]) / 2 + palm[:3, 2] * 0.07
    eye = centre - palm[:3, 0] * 0.4
    cam = CameraModel.looking_at(eye, centre, up=palm[:3, 2], fov_deg=30, width=240, height=240)
    layer = render_robot_layer(m, state, RigidTransform(), cam)
    row = int(round(cam.cy))
    cols_l = np.flatnonzero(layer.seg[row] == fl)
    cols_r = np.flatnonzero(layer.seg[row] == fr)
    assert len(cols_l) and len(cols_r)
    if cols_l.mean() < cols_r.mean():
        a, b = cols_l.max(), cols_r.min()
    else:
        a, b = cols_r.max(), cols_l.min()
    pa = backproject_pixel(cam, a + 0.5, row, layer.depth[row, a])
    pb = backproject_pixel(cam, b - 0.5, row, layer.depth[row, b])
    gap = abs(float((pa - pb) @ palm[:3, 1]))
    assert abs(gap - width) <= 0.1 * width


def test_mount_offset_zero_is_identity(rng):
    plain = parse_urdf(MINIMAL)
    p = RigidTransform(rng.normal(size=3), rng.normal(size=4))
    out = apply_mount_offset(plain, p)
    assert np.allclose(out.as_matrix(), p.as_matrix(), atol=1e-12)


def test_mount_offset_inverse_round_trip(rng):
    m = fixture_robot("arm7_b")
    p = RigidTransform(rng.normal(size=3), rng.normal(size=4))
    back = apply_mount_offset(m, p).compose(m.mount_offset.inverse())
    assert np.abs(back.as_matrix() - p.as_matrix()).max() < 1e-9


def test_mount_offset_rolls_gripper_by_45_degrees():
    a, b = fixture_robot("arm7_a"), fixture_robot("arm7_b")
    rel = quat_mul(quat_conj(a.mount_offset.rotation), b.mount_offset.rotation)
    rv = quat_to_rotvec(rel)
    assert math.isclose(np.linalg.norm(rv), math.pi / 4, abs_tol=1e-12)
    assert np.allclose(rv / np.linalg.norm(rv), [0, 0, 1], atol=1e-12)
    xa = a.mount_offset.rotation_matrix[:, 0]
    xb = b.mount_offset.rotation_matrix[:, 0]
    assert math.isclose(math.degrees(math.acos(xa @ xb)), 45.0, abs_tol=1e-9)


@pytest.mark.parametrize("name", sorted(ROBOTS))
def test_print_parse_round_trip(name):
    m = fixture_robot(name)
    back = parse_urdf(robot_to_urdf(m), robot_config(m))
    assert back.arm_chain == m.arm_chain
    assert [lk.name for lk in back.links] == [lk.name for lk in m.links]
    for j0, j1 in zip(m.joints, back.joints):
        assert (j0.name, j0.type, j0.parent, j0.child) == (j1.name, j1.type, j1.parent, j1.child)
        assert abs(j0.lower - j1.lower) <= 1e-12 and abs(j0.upper - j1.upper) <= 1e-12
        assert np.abs(j0.origin.as_matrix() - j1.origin.as_matrix()).max() < 1e-12
    for l0, l1 in zip(m.links, back.links):
        for g0, g1 in zip(l0.visuals, l1.visuals):
            assert g0.kind == g1.kind
            assert np.abs(np.subtract(g0.size, g1.size)).max() <= 1e-12
    assert back.gripper == m.gripper


def test_load_robot_from_disk(tmp_path):
    path = write_fixture("arm6_b", tmp_path)
    m = load_robot(path)
    assert m.dof == 6 and m.gripper.max_width == 0.085


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_fk_rotation_is_orthonormal(q):
    m = fixture_robot("arm6_b")
    r = forward_kinematics(m, make_joint_state(m, q)).eef.rotation_matrix
    assert np.abs(r @ r.T - np.eye(3)).max() < 1e-12
