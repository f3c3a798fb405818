"""URDF subset parsing, forward kinematics and damped-least-squares IK.

Supported elements: ``robot``, ``link``, ``visual`` (``origin``,
``geometry`` with ``box|cylinder|sphere|mesh``, ``material``/``color``),
top-level ``material`` and ``joint`` (``origin``, ``parent``, ``child``,
``axis``, ``limit``). Everything else is skipped and reported in
``RobotModel.warnings``.

Robot-specific settings that URDF has no place for live in a JSON sidecar::

    {
      "arm_chain": ["j1", "j2", ...],
      "gripper": {"max_width": 0.08,
                  "joints": {"finger_l": [0.5, 0.0], "finger_r": [0.5, 0.0]}},
      "mount_offset": "0 0 0.1 1 0 0 0",
      "home": [0.0, ...]
    }

``mount_offset`` is the flange-to-EEF transform. The EEF (tool centre point
of the gripper) is the frame that is matched across robots.
"""

from __future__ import annotations

import json
import math
import xml.parsers.expat
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .geometry import (
    RigidTransform,
    format_pose_record,
    matrix_to_quat,
    parse_numbers,
    parse_pose_record,
    quat_to_rotvec,
)


class URDFError(ValueError):
    pass


class URDFParseError(URDFError):
    def __init__(self, message: str, line: int | None = None, element: str | None = None):
        self.line = line
        self.element = element
        where = []
        if element:
            where.append(f"element <{element}>")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class CycleError(URDFError):
    pass


class DimensionMismatchError(ValueError):
    pass


# ---------------------------------------------------------------- model types


@dataclass(frozen=True)
class Geometry:
    """One visual primitive attached to a link.

    ``size`` is ``(x, y, z)`` for a box, ``(radius, length)`` for a cylinder
    (axis along local z), ``(radius,)`` for a sphere and the scale triple for
    a mesh.
    """

    kind: str
    size: tuple
    origin: RigidTransform = field(default_factory=RigidTransform)
    color: tuple = (180, 180, 180)
    filename: str | None = None
    triangles: np.ndarray | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Link:
    name: str
    visuals: tuple = ()


@dataclass(frozen=True)
class Joint:
    name: str
    type: str
    parent: str
    child: str
    origin: RigidTransform = field(default_factory=RigidTransform)
    axis: tuple = (1.0, 0.0, 0.0)
    lower: float = 0.0
    upper: float = 0.0


@dataclass(frozen=True)
class GripperSpec:
    joints: tuple = ()
    slopes: tuple = ()
    intercepts: tuple = ()
    max_width: float = 0.0


@dataclass(frozen=True, eq=False)
class RobotModel:
    name: str
    links: tuple
    joints: tuple
    base_link: str
    arm_chain: tuple
    gripper: GripperSpec = field(default_factory=GripperSpec)
    mount_offset: RigidTransform = field(default_factory=RigidTransform)
    home: tuple = ()
    warnings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "_kin", _Kinematics(self))

    def joint(self, name: str) -> Joint:
        return self._kin.joint_by_name[name]

    def link_id(self, name: str) -> int:
        """Segmentation label of a link: 1-based position in ``links``."""
        return self._kin.link_index[name] + 1

    @property
    def dof(self) -> int:
        return len(self.arm_chain)

    @property
    def flange_link(self) -> str:
        return self.joint(self.arm_chain[-1]).child if self.arm_chain else self.base_link

    @property
    def arm_limits(self) -> np.ndarray:
        return self._kin.arm_limits.copy()

    @property
    def gripper_links(self) -> frozenset:
        """Links at or below the first gripper joint's parent (palm and fingers)."""
        return self._kin.gripper_links

    def home_state(self) -> "JointState":
        q = self.home if self.home else np.zeros(self.dof)
        return make_joint_state(self, q, self.gripper.max_width)


@dataclass(frozen=True, eq=False)
class JointState:
    arm_q: np.ndarray
    gripper_width: float = 0.0
    clamped: bool = False

    def __post_init__(self):
        q = np.array(self.arm_q, dtype=float)
        q.setflags(write=False)
        object.__setattr__(self, "arm_q", q)


def make_joint_state(model: RobotModel, arm_q, gripper_width: float = 0.0) -> JointState:
    """Build a JointState, clamping every value into the model's limits."""
    q = np.asarray(arm_q, dtype=float)
    if q.shape != (model.dof,):
        raise DimensionMismatchError(f"{model.name}: expected {model.dof} arm values, got {q.shape}")
    lim = model._kin.arm_limits
    qc = np.clip(q, lim[:, 0], lim[:, 1])
    w = float(np.clip(gripper_width, 0.0, model.gripper.max_width))
    clamped = bool(np.any(qc != q) or w != gripper_width)
    return JointState(qc, w, clamped)


# ---------------------------------------------------------------- XML reading


class _Node:
    __slots__ = ("tag", "attrs", "children", "line")

    def __init__(self, tag, attrs, line):
        self.tag, self.attrs, self.children, self.line = tag, attrs, [], line

    def find(self, tag):
        for c in self.children:
            if c.tag == tag:
                return c
        return None

    def findall(self, tag):
        return [c for c in self.children if c.tag == tag]


def _read_xml(text: str) -> _Node:
    parser = xml.parsers.expat.ParserCreate()
    stack: list[_Node] = []
    root: list[_Node] = []

    def start(tag, attrs):
        node = _Node(tag, attrs, parser.CurrentLineNumber)
        if stack:
            stack[-1].children.append(node)
        else:
            root.append(node)
        stack.append(node)

    def end(tag):
        stack.pop()

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    try:
        parser.Parse(text, True)
    except xml.parsers.expat.ExpatError as exc:
        element = stack[-1].tag if stack else None
        raise URDFParseError(f"malformed XML: {xml.parsers.expat.ErrorString(exc.code)}", exc.lineno, element) from None
    if not root:
        raise URDFParseError("empty document")
    return root[0]


def _attr(node: _Node, key: str) -> str:
    try:
        return node.attrs[key]
    except KeyError:
        raise URDFParseError(f"missing attribute '{key}'", node.line, node.tag) from None


def _floats(node: _Node, key: str, n: int | None = None, default=None) -> list[float]:
    if key not in node.attrs:
        if default is not None:
            return list(default)
        _attr(node, key)
    try:
        vals = parse_numbers(node.attrs[key])
    except ValueError:
        raise URDFParseError(f"attribute '{key}' is not numeric", node.line, node.tag) from None
    if n is not None and len(vals) != n:
        raise URDFParseError(f"attribute '{key}' needs {n} numbers", node.line, node.tag)
    return vals


def _origin(node: _Node | None) -> RigidTransform:
    if node is None:
        return RigidTransform()
    return RigidTransform.from_rpy(_floats(node, "xyz", 3, (0, 0, 0)), _floats(node, "rpy", 3, (0, 0, 0)))


def load_ascii_mesh(path) -> np.ndarray:
    """Read a triangle list: one ``x y z`` vertex per line, three lines per triangle.

    Blank lines and ``#`` comments are ignored. Returns ``(N, 3, 3)``.
    """
    verts = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            verts.append(parse_numbers(line))
    arr = np.asarray(verts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or len(arr) % 3:
        raise URDFError(f"{path}: vertex count must be a multiple of 3 with 3 coordinates each")
    return arr.reshape(-1, 3, 3)


_SUPPORTED = {
    "robot": {"link", "joint", "material"},
    "link": {"visual"},
    "visual": {"origin", "geometry", "material"},
    "geometry": {"box", "cylinder", "sphere", "mesh"},
    "joint": {"origin", "parent", "child", "axis", "limit"},
    "material": {"color"},
}


def _collect_ignored(node: _Node, out: list[str]):
    allowed = _SUPPORTED.get(node.tag, set())
    for c in node.children:
        if c.tag in allowed:
            _collect_ignored(c, out)
        else:
            out.append(f"ignored <{c.tag}> in <{node.tag}> at line {c.line}")


def _color(node: _Node | None, materials: dict) -> tuple | None:
    if node is None:
        return None
    c = node.find("color")
    if c is not None:
        rgba = _floats(c, "rgba", 4)
        return tuple(int(round(255 * max(0.0, min(1.0, v)))) for v in rgba[:3])
    return materials.get(node.attrs.get("name"))


def _parse_geometry(vis: _Node, materials: dict, base_dir: Path | None) -> Geometry:
    geo_node = vis.find("geometry")
    if geo_node is None or not geo_node.children:
        raise URDFParseError("visual without geometry", vis.line, vis.tag)
    g = next((c for c in geo_node.children if c.tag in _SUPPORTED["geometry"]), None)
    if g is None:
        raise URDFParseError("unsupported geometry", geo_node.line, geo_node.children[0].tag)
    origin = _origin(vis.find("origin"))
    color = _color(vis.find("material"), materials) or (180, 180, 180)
    filename, tris = None, None
    if g.tag == "box":
        size = tuple(_floats(g, "size", 3))
    elif g.tag == "cylinder":
        size = (_floats(g, "radius", 1)[0], _floats(g, "length", 1)[0])
    elif g.tag == "sphere":
        size = (_floats(g, "radius", 1)[0],)
    else:
        filename = _attr(g, "filename")
        size = tuple(_floats(g, "scale", 3, (1, 1, 1)))
        path = Path(filename)
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        try:
            tris = load_ascii_mesh(path) * np.asarray(size)
        except OSError as exc:
            raise URDFParseError(f"cannot read mesh: {exc}", g.line, g.tag) from None
    if any(not (s > 0) for s in size):
        raise URDFParseError("geometry dimensions must be positive", g.line, g.tag)
    return Geometry(g.tag, size, origin, color, filename, tris)


def parse_urdf(text: str, config: dict | None = None, base_dir=None) -> RobotModel:
    """Parse URDF text (plus optional sidecar config) into a RobotModel."""
    root = _read_xml(text)
    if root.tag != "robot":
        raise URDFParseError("root element must be <robot>", root.line, root.tag)
    warnings: list[str] = []
    _collect_ignored(root, warnings)

    materials = {}
    for m in root.findall("material"):
        col = _color(m, {})
        if col is not None:
            materials[_attr(m, "name")] = col

    links = []
    for ln in root.findall("link"):
        visuals = tuple(_parse_geometry(v, materials, base_dir) for v in ln.findall("visual"))
        links.append(Link(_attr(ln, "name"), visuals))
    names = [lk.name for lk in links]
    if len(set(names)) != len(names):
        raise URDFError("duplicate link names")

    joints = []
    for jn in root.findall("joint"):
        jtype = _attr(jn, "type")
        if jtype == "continuous":
            jtype, lo, hi = "revolute", -math.pi, math.pi
        elif jtype not in ("revolute", "prismatic", "fixed"):
            raise URDFParseError(f"unsupported joint type '{jtype}'", jn.line, jn.tag)
        parent, child = jn.find("parent"), jn.find("child")
        if parent is None or child is None:
            raise URDFParseError("joint needs parent and child", jn.line, jn.tag)
        axis_node = jn.find("axis")
        axis = np.array(_floats(axis_node, "xyz", 3) if axis_node is not None else [1.0, 0.0, 0.0])
        if jtype != "fixed":
            if np.linalg.norm(axis) == 0:
                raise URDFParseError("zero joint axis", jn.line, jn.tag)
            axis = axis / np.linalg.norm(axis)
            if jn.attrs["type"] != "continuous":
                lim = jn.find("limit")
                if lim is None:
                    raise URDFParseError("movable joint needs <limit>", jn.line, jn.tag)
                lo, hi = _floats(lim, "lower", 1)[0], _floats(lim, "upper", 1)[0]
                if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                    raise URDFParseError("joint limits must be finite with lower <= upper", lim.line, lim.tag)
        else:
            lo = hi = 0.0
        joints.append(
            Joint(_attr(jn, "name"), jtype, _attr(parent, "link"), _attr(child, "link"),
                  _origin(jn.find("origin")), tuple(float(a) for a in axis), float(lo), float(hi))
        )

    base = _check_tree(names, joints)
    config = config or {}
    arm_chain = tuple(config.get("arm_chain") or _infer_chain(base, joints))
    gcfg = config.get("gripper", {})
    gjoints = gcfg.get("joints", {})
    gripper = GripperSpec(
        tuple(gjoints), tuple(float(v[0]) for v in gjoints.values()),
        tuple(float(v[1]) for v in gjoints.values()), float(gcfg.get("max_width", 0.0)),
    )
    mount = config.get("mount_offset")
    mount = parse_pose_record(mount)[0] if mount is not None else _fixed_tail(arm_chain, joints)
    model = RobotModel(
        root.attrs.get("name", "robot"), tuple(links), tuple(joints), base, arm_chain,
        gripper, mount, tuple(float(v) for v in config.get("home", ())), tuple(warnings),
    )
    _check_chain(model)
    return model


def _fixed_tail(arm_chain, joints: list[Joint]) -> RigidTransform:
    """Default mount: follow an unbranched run of fixed joints past the last arm joint."""
    if not arm_chain:
        return RigidTransform()
    by_name = {j.name: j for j in joints}
    if arm_chain[-1] not in by_name:
        return RigidTransform()
    link, out = by_name[arm_chain[-1]].child, RigidTransform()
    while True:
        kids = [j for j in joints if j.parent == link]
        if len(kids) != 1 or kids[0].type != "fixed":
            return out
        out, link = out @ kids[0].origin, kids[0].child


def load_robot(urdf_path, config_path=None) -> RobotModel:
    urdf_path = Path(urdf_path)
    if config_path is None:
        guess = urdf_path.with_suffix(".json")
        config_path = guess if guess.exists() else None
    config = json.loads(Path(config_path).read_text()) if config_path else None
    return parse_urdf(urdf_path.read_text(), config, base_dir=urdf_path.parent)


def _check_tree(link_names: list[str], joints: list[Joint]) -> str:
    known = set(link_names)
    parent_of: dict[str, str] = {}
    for j in joints:
        for ln in (j.parent, j.child):
            if ln not in known:
                raise URDFError(f"joint '{j.name}' references unknown link '{ln}'")
        if j.child in parent_of:
            raise CycleError(f"link '{j.child}' has more than one parent joint")
        parent_of[j.child] = j.parent
    for start in parent_of:
        seen, ln = {start}, start
        while ln in parent_of:
            ln = parent_of[ln]
            if ln in seen:
                raise CycleError(f"joint graph contains a cycle through link '{ln}'")
            seen.add(ln)
    roots = [ln for ln in link_names if ln not in parent_of]
    if len(roots) != 1:
        raise URDFError(f"expected a single root link, found {roots}")
    return roots[0]


def _infer_chain(base: str, joints: list[Joint]) -> list[str]:
    """Movable joints on the root-to-leaf path with the most of them."""
    by_parent: dict[str, list[Joint]] = {}
    for j in joints:
        by_parent.setdefault(j.parent, []).append(j)
    best: list[str] = []

    def walk(link, path):
        nonlocal best
        kids = by_parent.get(link, [])
        if not kids and len(path) > len(best):
            best = list(path)
        for j in kids:
            walk(j.child, path + ([j.name] if j.type != "fixed" else []))

    walk(base, [])
    return best


def _check_chain(model: RobotModel):
    by_name = {j.name: j for j in model.joints}
    link = model.base_link
    parent_of = {j.child: j for j in model.joints}
    for name in model.arm_chain:
        j = by_name.get(name)
        if j is None or j.type == "fixed":
            raise URDFError(f"arm_chain entry '{name}' is not a movable joint")
        # the joint must sit below the previous one on a single path
        ln = j.parent
        while ln != link:
            if ln not in parent_of:
                raise URDFError(f"arm_chain is not a connected path at '{name}'")
            ln = parent_of[ln].parent
        link = j.child
    for name in model.gripper.joints:
        if name not in by_name:
            raise URDFError(f"gripper joint '{name}' not in model")


# ---------------------------------------------------------------- kinematics


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


class _Kinematics:
    """Precomputed traversal order and matrices for a RobotModel."""

    def __init__(self, model: RobotModel):
        self.link_index = {lk.name: i for i, lk in enumerate(model.links)}
        self.joint_by_name = {j.name: j for j in model.joints}
        by_parent: dict[str, list[Joint]] = {}
        for j in model.joints:
            by_parent.setdefault(j.parent, []).append(j)
        order, stack = [], [model.base_link]
        while stack:
            ln = stack.pop()
            for j in reversed(by_parent.get(ln, [])):
                order.append(j)
                stack.append(j.child)
        self.order = order
        self.origins = [j.origin.as_matrix() for j in order]
        self.axes = [np.asarray(j.axis) for j in order]
        self.arm_pos = {name: i for i, name in enumerate(model.arm_chain)}
        self.arm_limits = np.array(
            [[self.joint_by_name[n].lower, self.joint_by_name[n].upper] for n in model.arm_chain]
        ).reshape(-1, 2)
        self.mount = model.mount_offset.as_matrix()
        # per arm joint: fixed transforms since the previous arm joint, then its origin
        parent_of = {j.child: j for j in order}
        self.chain = []
        link = model.base_link
        for name in model.arm_chain:
            j = self.joint_by_name[name]
            between, ln = [], j.parent
            while ln != link and ln in parent_of:
                between.append(parent_of[ln])
                ln = parent_of[ln].parent
            pre = np.eye(4)
            for jj in reversed(between):
                pre = pre @ jj.origin.as_matrix()
            self.chain.append((pre @ j.origin.as_matrix(), j.type, np.asarray(j.axis)))
            link = j.child
        self.flange = self.joint_by_name[model.arm_chain[-1]].child if model.arm_chain else model.base_link
        grip: set[str] = set()
        if model.gripper.joints:
            first = self.joint_by_name[model.gripper.joints[0]]
            root = first.parent
            grip.add(root)
            frontier = [root]
            while frontier:
                ln = frontier.pop()
                for j in by_parent.get(ln, []):
                    grip.add(j.child)
                    frontier.append(j.child)
        self.gripper_links = frozenset(grip)

    def link_matrices(self, values: dict[str, float]) -> dict[str, np.ndarray]:
        mats = {self.order[0].parent if self.order else None: np.eye(4)}
        out = {}
        for j, origin, axis in zip(self.order, self.origins, self.axes):
            m = mats.get(j.parent)
            if m is None:
                m = np.eye(4)
            m = m @ origin
            v = values.get(j.name, 0.0)
            if j.type == "revolute" and v != 0.0:
                r = np.eye(4)
                r[:3, :3] = _axis_rotation(axis, v)
                m = m @ r
            elif j.type == "prismatic" and v != 0.0:
                t = np.eye(4)
                t[:3, 3] = axis * v
                m = m @ t
            mats[j.child] = m
        for name, m in mats.items():
            if name is not None:
                out[name] = m
        return out


@dataclass(frozen=True)
class FKResult:
    eef: RigidTransform
    flange: RigidTransform
    link_poses: dict  # link name -> 4x4 matrix in the robot base frame


def _joint_values(model: RobotModel, q: JointState) -> dict[str, float]:
    arm = np.asarray(q.arm_q, dtype=float)
    if arm.shape != (model.dof,):
        raise DimensionMismatchError(f"{model.name}: expected {model.dof} arm values, got {arm.shape}")
    values = dict(zip(model.arm_chain, arm.tolist()))
    if model.gripper.joints:
        values.update(zip(model.gripper.joints, gripper_width_to_joints(model, q.gripper_width).tolist()))
    return values


def forward_kinematics(model: RobotModel, q: JointState) -> FKResult:
    """EEF pose and every link placement, all in the robot base frame."""
    kin = model._kin
    mats = kin.link_matrices(_joint_values(model, q))
    mats.setdefault(model.base_link, np.eye(4))
    flange = mats[kin.flange]
    return FKResult(
        RigidTransform.from_matrix(flange @ kin.mount), RigidTransform.from_matrix(flange), mats
    )


def _arm_fk_jacobian(model: RobotModel, arm_q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """EEF 4x4 matrix and 6xN geometric Jacobian, arm joints only."""
    n = model.dof
    m = np.eye(4)
    J = np.zeros((6, n))
    origins = np.empty((n, 3))
    zs = np.empty((n, 3))
    for k, (pre, jtype, a) in enumerate(model._kin.chain):
        m = m @ pre
        zs[k] = m[:3, :3] @ a
        origins[k] = m[:3, 3]
        step = np.eye(4)
        if jtype == "revolute":
            step[:3, :3] = _axis_rotation(a, arm_q[k])
        else:
            step[:3, 3] = a * arm_q[k]
        m = m @ step
    eef = m @ model._kin.mount
    p = eef[:3, 3]
    for k in range(n):
        if model._kin.chain[k][1] == "revolute":
            J[:3, k] = np.cross(zs[k], p - origins[k])
            J[3:, k] = zs[k]
        else:
            J[:3, k] = zs[k]
    return eef, J


def jacobian(model: RobotModel, q: JointState) -> np.ndarray:
    return _arm_fk_jacobian(model, np.asarray(q.arm_q, float))[1]


def apply_mount_offset(model: RobotModel, flange: RigidTransform) -> RigidTransform:
    """Flange pose to EEF pose through the configured gripper mount."""
    return flange.compose(model.mount_offset)


def gripper_width_to_joints(model: RobotModel, width: float) -> np.ndarray:
    g = model.gripper
    w = min(max(float(width), 0.0), g.max_width)
    vals = np.array([s * w + b for s, b in zip(g.slopes, g.intercepts)])
    for i, name in enumerate(g.joints):
        j = model.joint(name)
        vals[i] = min(max(vals[i], j.lower), j.upper)
    return vals


@dataclass(frozen=True)
class IKResult:
    state: JointState
    success: bool
    position_error: float
    rotation_error: float
    iterations: int


def _pose_residual(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    e = np.empty(6)
    e[:3] = target[:3, 3] - current[:3, 3]
    e[3:] = quat_to_rotvec(matrix_to_quat(target[:3, :3] @ current[:3, :3].T))
    return e


def solve_ik(
    model: RobotModel,
    target: RigidTransform,
    seed: JointState,
    *,
    damping: float = 1e-2,
    max_step: float = 0.2,
    max_iter: int = 200,
    pos_tol: float = 1e-4,
    rot_tol: float = 1e-3,
) -> IKResult:
    """Damped least squares from ``seed``, clamping to limits every step.

    Never raises on non-convergence: the best iterate comes back with its
    residuals and ``success=False``.
    """
    lim = model._kin.arm_limits
    q = np.clip(np.asarray(seed.arm_q, dtype=float), lim[:, 0], lim[:, 1])
    tgt = target.as_matrix()
    lam2 = damping * damping
    best = (math.inf, q, math.inf, math.inf, 0)
    it = 0
    for it in range(max_iter + 1):
        eef, J = _arm_fk_jacobian(model, q)
        e = _pose_residual(tgt, eef)
        pe, re = float(np.linalg.norm(e[:3])), float(np.linalg.norm(e[3:]))
        score = max(pe / pos_tol, re / rot_tol)
        if score < best[0]:
            best = (score, q.copy(), pe, re, it)
        if pe < pos_tol and re < rot_tol or it == max_iter:
            break
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(6), e)
        peak = float(np.max(np.abs(dq)))
        if peak > max_step:
            dq *= max_step / peak
        q = np.clip(q + dq, lim[:, 0], lim[:, 1])
    _, qb, pe, re, _ = best
    state = JointState(qb, float(np.clip(seed.gripper_width, 0.0, model.gripper.max_width)))
    return IKResult(state, pe < pos_tol and re < rot_tol, pe, re, it)


# ---------------------------------------------------------------- printing


def _fmt(vals) -> str:
    return " ".join(repr(float(v)) for v in vals)


def _origin_xml(t: RigidTransform, indent: str) -> str:
    return f'{indent}<origin xyz="{_fmt(t.translation)}" rpy="{_fmt(t.rpy())}"/>\n'


def robot_to_urdf(model: RobotModel) -> str:
    """Serialise the supported subset back to URDF text."""
    out = [f"<robot name={quoteattr(model.name)}>\n"]
    for lk in model.links:
        out.append(f"  <link name={quoteattr(lk.name)}>\n")
        for g in lk.visuals:
            out.append("    <visual>\n")
            out.append(_origin_xml(g.origin, "      "))
            out.append("      <geometry>\n")
            if g.kind == "box":
                out.append(f'        <box size="{_fmt(g.size)}"/>\n')
            elif g.kind == "cylinder":
                out.append(f'        <cylinder radius="{g.size[0]!r}" length="{g.size[1]!r}"/>\n')
            elif g.kind == "sphere":
                out.append(f'        <sphere radius="{g.size[0]!r}"/>\n')
            else:
                out.append(f"        <mesh filename={quoteattr(g.filename)} scale=\"{_fmt(g.size)}\"/>\n")
            out.append("      </geometry>\n")
            rgba = _fmt([c / 255 for c in g.color] + [1.0])
            out.append(f'      <material name=""><color rgba="{rgba}"/></material>\n')
            out.append("    </visual>\n")
        out.append("  </link>\n")
    for j in model.joints:
        out.append(f"  <joint name={quoteattr(j.name)} type=\"{j.type}\">\n")
        out.append(f"    <parent link={quoteattr(j.parent)}/>\n    <child link={quoteattr(j.child)}/>\n")
        out.append(_origin_xml(j.origin, "    "))
        if j.type != "fixed":
            out.append(f'    <axis xyz="{_fmt(j.axis)}"/>\n')
            out.append(f'    <limit lower="{j.lower!r}" upper="{j.upper!r}"/>\n')
        out.append("  </joint>\n")
    out.append("</robot>\n")
    return "".join(out)


def robot_config(model: RobotModel) -> dict:
    """The sidecar dict that, with ``robot_to_urdf``, reproduces ``model``."""
    g = model.gripper
    return {
        "arm_chain": list(model.arm_chain),
        "gripper": {
            "max_width": g.max_width,
            "joints": {n: [s, b] for n, s, b in zip(g.joints, g.slopes, g.intercepts)},
        },
        "mount_offset": format_pose_record(model.mount_offset),
        "home": list(model.home),
    }
