"""Synthetic robots used by the harness, the tests and the demos.

Two arms and two parallel-jaw grippers with deliberately different shapes
and colours:

- ``arm7``: seven revolute joints, light grey links (the *source* look).
- ``arm6``: six revolute joints, blue links (the *target* look).
- ``gripper_a``: flat palm, 8 cm stroke.
- ``gripper_b``: round palm, dark fingers, 8.5 cm stroke.

Robots are assembled as URDF text plus the JSON sidecar, and go through
``parse_urdf`` like any file on disk would.
"""

from __future__ import annotations

import json
import math
from functools import lru_cache
from pathlib import Path

from .geometry import RigidTransform, format_pose_record, quat_from_axis_angle
from .urdf import RobotModel, parse_urdf

LIGHT = (0.88, 0.88, 0.88)
MID = (0.55, 0.55, 0.57)
DARK = (0.22, 0.22, 0.24)
BLUE = (0.18, 0.38, 0.80)
STEEL = (0.62, 0.66, 0.72)


def _rgba(c):
    return f"{c[0]} {c[1]} {c[2]} 1"


def _link(name, shapes):
    out = [f'  <link name="{name}">']
    for kind, dims, xyz, color in shapes:
        if kind == "box":
            geo = f'<box size="{dims[0]} {dims[1]} {dims[2]}"/>'
        elif kind == "cylinder":
            geo = f'<cylinder radius="{dims[0]}" length="{dims[1]}"/>'
        else:
            geo = f'<sphere radius="{dims[0]}"/>'
        out.append(
            f'    <visual><origin xyz="{xyz[0]} {xyz[1]} {xyz[2]}" rpy="0 0 0"/>'
            f"<geometry>{geo}</geometry>"
            f'<material name=""><color rgba="{_rgba(color)}"/></material></visual>'
        )
    out.append("  </link>")
    return "\n".join(out)


def _joint(name, jtype, parent, child, xyz, axis=(0, 0, 1), limits=None, rpy=(0, 0, 0)):
    lines = [
        f'  <joint name="{name}" type="{jtype}">',
        f'    <parent link="{parent}"/><child link="{child}"/>',
        f'    <origin xyz="{xyz[0]} {xyz[1]} {xyz[2]}" rpy="{rpy[0]} {rpy[1]} {rpy[2]}"/>',
    ]
    if jtype != "fixed":
        lines.append(f'    <axis xyz="{axis[0]} {axis[1]} {axis[2]}"/>')
        lines.append(f'    <limit lower="{limits[0]}" upper="{limits[1]}"/>')
    lines.append("  </joint>")
    return "\n".join(lines)


# (joint axis, segment length, link radius, color) per arm joint
_ARM7 = [
    ((0, 0, 1), 0.10, 0.050, LIGHT),
    ((0, 1, 0), 0.16, 0.045, LIGHT),
    ((0, 0, 1), 0.17, 0.042, LIGHT),
    ((0, 1, 0), 0.15, 0.040, MID),
    ((0, 0, 1), 0.15, 0.036, LIGHT),
    ((0, 1, 0), 0.06, 0.034, MID),
    ((0, 0, 1), 0.03, 0.032, LIGHT),
]
_ARM6 = [
    ((0, 0, 1), 0.10, 0.055, STEEL),
    ((0, 1, 0), 0.34, 0.045, BLUE),
    ((0, 1, 0), 0.30, 0.038, BLUE),
    ((0, 1, 0), 0.07, 0.035, STEEL),
    ((1, 0, 0), 0.07, 0.035, BLUE),
    ((0, 0, 1), 0.03, 0.032, STEEL),
]


def _arm_xml(spec, base_color, square):
    parts = [_link("base", [("cylinder", (0.07, 0.10), (0, 0, 0.05), base_color)])]
    parent, z0 = "base", 0.10
    limit = (-2.9, 2.9)
    for i, (axis, length, radius, color) in enumerate(spec, start=1):
        child = f"link{i}"
        if square:
            shape = ("box", (1.6 * radius, 1.6 * radius, length), (0, 0, length / 2), color)
        else:
            shape = ("cylinder", (radius, length), (0, 0, length / 2), color)
        joint_ball = ("sphere", (radius * 1.1,), (0, 0, 0), MID if square else DARK)
        parts.append(_link(child, [shape, joint_ball]))
        parts.append(_joint(f"j{i}", "revolute", parent, child, (0, 0, z0), axis, limit))
        parent, z0 = child, length
    return parts, parent, z0


def _gripper_xml(kind, flange, flange_len, mount_rpy):
    if kind == "a":
        palm = [("box", (0.05, 0.20, 0.045), (0, 0, 0.0225), LIGHT)]
        finger = (0.022, 0.014, 0.05)
        finger_z, color, stroke = 0.045 + 0.025, LIGHT, 0.08
    else:
        palm = [("cylinder", (0.045, 0.06), (0, 0, 0.03), DARK),
                ("box", (0.04, 0.13, 0.02), (0, 0, 0.07), DARK)]
        finger = (0.026, 0.012, 0.048)
        finger_z, color, stroke = 0.08 + 0.024, DARK, 0.085
    t = finger[1] / 2
    parts = [
        _link("palm", palm),
        _joint("mount", "fixed", flange, "palm", (0, 0, flange_len), rpy=mount_rpy),
        _link("finger_l", [("box", finger, (0, t, finger_z), color)]),
        _link("finger_r", [("box", finger, (0, -t, finger_z), color)]),
        _joint("finger_l_joint", "prismatic", "palm", "finger_l", (0, 0, 0), (0, 1, 0), (0, stroke / 2)),
        _joint("finger_r_joint", "prismatic", "palm", "finger_r", (0, 0, 0), (0, -1, 0), (0, stroke / 2)),
    ]
    tcp = finger_z + 0.01
    return parts, stroke, tcp


# home configurations put the EEF at (0.25, 0, 0.35) pointing straight down
_HOME = {
    "arm7_a": [0.0, -0.1519, 0.0, 1.7434, 0.0, 1.5501, 0.0],
    "arm7_b": [-0.0881, -0.1487, 0.0735, 1.627, 0.0109, 1.6629, -0.7998],
    "arm6_a": [0.0, -0.1279, 1.4879, 1.7816, 0.0, 0.0],
    "arm6_b": [0.0, -0.1011, 1.3473, 1.8954, 0.0, 0.0],
}


def robot_files(arm: str, gripper: str, mount_roll_deg: float = 0.0, name: str | None = None) -> tuple[str, dict]:
    """URDF text and sidecar dict for an arm/gripper combination."""
    spec, base_color, square = (_ARM7, DARK, False) if arm == "arm7" else (_ARM6, STEEL, True)
    parts, flange, flange_len = _arm_xml(spec, base_color, square)
    roll = math.radians(mount_roll_deg)
    gparts, stroke, tcp = _gripper_xml(gripper[-1], flange, flange_len, (0, 0, roll))
    name = name or f"{arm}_{gripper}"
    urdf = "\n".join([f'<robot name="{name}">', *parts, *gparts, "</robot>", ""])
    mount = RigidTransform([0, 0, flange_len], quat_from_axis_angle([0, 0, 1], roll)) @ RigidTransform([0, 0, tcp])
    config = {
        "arm_chain": [f"j{i}" for i in range(1, len(spec) + 1)],
        "gripper": {"max_width": stroke, "joints": {"finger_l_joint": [0.5, 0.0], "finger_r_joint": [0.5, 0.0]}},
        "mount_offset": format_pose_record(mount),
        "home": _HOME.get(name, _HOME[f"{arm}_{gripper[-1]}"]),
    }
    return urdf, config


ROBOTS = {
    # source-style robot and its two grippers (the 45 degree mount mirrors a
    # hand that is installed rotated against the flange)
    "arm7_a": ("arm7", "gripper_a", 0.0),
    "arm7_b": ("arm7", "gripper_b", 45.0),
    "arm6_a": ("arm6", "gripper_a", 0.0),
    "arm6_b": ("arm6", "gripper_b", 0.0),
}


@lru_cache(maxsize=None)
def fixture_robot(name: str) -> RobotModel:
    arm, grip, roll = ROBOTS[name]
    urdf, config = robot_files(arm, grip, roll, name)
    return parse_urdf(urdf, config)


def write_fixture(name: str, directory) -> Path:
    """Write ``<name>.urdf`` and ``<name>.json`` into ``directory``; returns the URDF path."""
    arm, grip, roll = ROBOTS[name]
    urdf, config = robot_files(arm, grip, roll, name)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{name}.urdf").write_text(urdf)
    (d / f"{name}.json").write_text(json.dumps(config, indent=2) + "\n")
    return d / f"{name}.urdf"


def planar_2r_urdf() -> str:
    """Two 1 m links rotating about z; EEF at the tip of the second link."""
    return "\n".join([
        '<robot name="planar2r">',
        _link("base", []),
        _link("l1", [("box", (1.0, 0.05, 0.05), (0.5, 0, 0), BLUE)]),
        _link("l2", [("box", (1.0, 0.05, 0.05), (0.5, 0, 0), STEEL)]),
        _link("tip", []),
        _joint("q1", "revolute", "base", "l1", (0, 0, 0), (0, 0, 1), (-3.1416, 3.1416)),
        _joint("q2", "revolute", "l1", "l2", (1, 0, 0), (0, 0, 1), (-3.1416, 3.1416)),
        _joint("tip_joint", "fixed", "l2", "tip", (1, 0, 0)),
        "</robot>",
        "",
    ])
