"""Policy process boundary and built-in scripted policies.

Wire format: one JSON object per line, UTF-8, ``\\n`` terminated.

query  ``{"image": <str>, "proprio": [8 numbers], "step": <int>}``
reply  ``{"action": [7 numbers], "done": <bool>}``

``image`` is either a file path or ``data:image/png;base64,...``. Messages
are written with sorted keys and no spaces so that serialising a parsed
message gives back the same bytes.
"""

from __future__ import annotations

import base64
import io
import json
import os
import selectors
import socket
import subprocess
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import (
    CameraModel,
    RigidTransform,
    format_pose_record,
    quat_conj,
    quat_mul,
    quat_to_rotvec,
)

PNG_PREFIX = "data:image/png;base64,"


class PolicyError(RuntimeError):
    pass


class PolicyTimeout(PolicyError):
    code = "timeout"


class PolicyProtocolError(PolicyError):
    code = "protocol"


# ---------------------------------------------------------------- messages


@dataclass(eq=False)
class PolicyQuery:
    image: np.ndarray | str | None
    eef: RigidTransform
    gripper_width: float
    step: int = 0
    raw_proprio: list | None = None  # exact numbers as received, if parsed

    @property
    def proprio(self) -> list[float]:
        if self.raw_proprio is not None:
            return list(self.raw_proprio)
        return self.eef.to_record() + [float(self.gripper_width)]


@dataclass
class PolicyReply:
    action: np.ndarray
    done: bool = False

    def __post_init__(self):
        a = np.asarray(self.action, dtype=float)
        if a.shape != (7,) or not np.all(np.isfinite(a)):
            raise PolicyProtocolError(f"action must be 7 finite numbers, got {self.action!r}")
        self.action = a


def encode_image(rgb: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(rgb, np.uint8), "RGB").save(buf, format="PNG")
    return PNG_PREFIX + base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(value: str) -> np.ndarray:
    if value.startswith(PNG_PREFIX):
        data = base64.b64decode(value[len(PNG_PREFIX):], validate=True)
        return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"))
    return np.asarray(Image.open(value).convert("RGB"))


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def serialize_query(q: PolicyQuery) -> str:
    if isinstance(q.image, np.ndarray):
        image = encode_image(q.image)
    else:
        image = "" if q.image is None else str(q.image)
    return _dumps({"image": image, "proprio": q.proprio, "step": int(q.step)})


def _load_line(line: str) -> dict:
    if not line.endswith("\n"):
        raise PolicyProtocolError("message must be newline terminated")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise PolicyProtocolError(f"malformed message: {exc}") from None
    if not isinstance(obj, dict):
        raise PolicyProtocolError("message must be a JSON object")
    return obj


def _numbers(value, n: int, what: str) -> list[float]:
    if not isinstance(value, list) or len(value) != n:
        raise PolicyProtocolError(f"{what} must be a list of {n} numbers")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise PolicyProtocolError(f"{what} must be numeric")
    return [float(v) for v in value]


def parse_query(line: str) -> PolicyQuery:
    obj = _load_line(line)
    if set(obj) != {"image", "proprio", "step"}:
        raise PolicyProtocolError(f"query fields must be image, proprio, step; got {sorted(obj)}")
    p = _numbers(obj["proprio"], 8, "proprio")
    if not isinstance(obj["step"], int) or isinstance(obj["step"], bool):
        raise PolicyProtocolError("step must be an integer")
    if not isinstance(obj["image"], str):
        raise PolicyProtocolError("image must be a string")
    try:
        eef = RigidTransform(p[:3], p[3:7])
    except ValueError as exc:
        raise PolicyProtocolError(str(exc)) from None
    # keep the raw record so re-serialising is byte exact
    return PolicyQuery(obj["image"], eef, p[7], obj["step"], raw_proprio=p)


def serialize_reply(r: PolicyReply) -> str:
    return _dumps({"action": [float(v) for v in r.action], "done": bool(r.done)})


def parse_reply(line: str) -> PolicyReply:
    obj = _load_line(line)
    if set(obj) != {"action", "done"}:
        raise PolicyProtocolError(f"reply fields must be action, done; got {sorted(obj)}")
    if not isinstance(obj["done"], bool):
        raise PolicyProtocolError("done must be a boolean")
    return PolicyReply(_numbers(obj["action"], 7, "action"), obj["done"])


# ---------------------------------------------------------------- endpoints


class SubprocessEndpoint:
    """Policy running as a child process speaking the wire format on stdio."""

    def __init__(self, argv: list[str], timeout: float = 5.0, cwd=None):
        self.timeout = timeout
        self.proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, cwd=cwd, bufsize=0
        )
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)
        self._buf = b""

    def request(self, line: str) -> str:
        try:
            self.proc.stdin.write(line.encode("utf-8"))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise PolicyProtocolError(f"policy process gone: {exc}") from None
        deadline = time.monotonic() + self.timeout
        while b"\n" not in self._buf:
            left = deadline - time.monotonic()
            if left <= 0 or not self._sel.select(left):
                raise PolicyTimeout(f"no reply within {self.timeout} s")
            chunk = os.read(self.proc.stdout.fileno(), 65536)
            if not chunk:
                raise PolicyProtocolError("policy process closed its output")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode("utf-8", errors="replace") + "\n"

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self._sel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TcpEndpoint:
    """Policy server reachable over TCP, one line per message."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.timeout = timeout
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except socket.timeout:
            raise PolicyTimeout(f"connect to {host}:{port} timed out") from None
        self._buf = b""

    def request(self, line: str) -> str:
        self.sock.settimeout(self.timeout)
        try:
            self.sock.sendall(line.encode("utf-8"))
            while b"\n" not in self._buf:
                chunk = self.sock.recv(65536)
                if not chunk:
                    raise PolicyProtocolError("policy server closed the connection")
                self._buf += chunk
        except socket.timeout:
            raise PolicyTimeout(f"no reply within {self.timeout} s") from None
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode("utf-8", errors="replace") + "\n"

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def query_external(endpoint, q: PolicyQuery) -> tuple[PolicyReply, float]:
    """Send one query and wait for the reply; returns ``(reply, latency_s)``."""
    t0 = time.perf_counter()
    line = endpoint.request(serialize_query(q))
    return parse_reply(line), time.perf_counter() - t0


# ---------------------------------------------------------------- scripted policies

MAX_STEP = 0.05
MAX_ROT = 0.2
DOWN = np.array([0.0, 0.0, 1.0, 0.0])  # tool z pointing at the table


@dataclass
class SceneState:
    """What a scripted policy sees, all in the source robot base frame."""

    eef: RigidTransform
    gripper_width: float
    objects: dict  # name -> RigidTransform


@dataclass
class TaskGeometry:
    cube_size: float = 0.04
    clearance: float = 0.08
    lift_height: float = 0.15
    reach_height: float = 0.10
    open_width: float = 0.08


def _clip(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v if n <= limit else v * (limit / n)


@dataclass
class ScriptedPolicy:
    """Waypoint state machine for reach, pick-place (lift) and stack.

    Each call emits a delta action towards the current waypoint with at
    most ``max_step`` metres of translation. A phase is considered done as
    soon as the remaining distance fits in one step: the policy assumes its
    last command lands, which is exactly what a blocking controller
    guarantees and a non-blocking one does not.

    Object positions are read when an attempt starts. ``perception_offset``
    is added to the cube position on the first attempt only; with ``retry``
    a missed grasp (cube not raised after the lift) starts a new attempt
    from a fresh reading.
    """

    kind: str
    geometry: TaskGeometry = field(default_factory=TaskGeometry)
    max_step: float = MAX_STEP
    retry: bool = False
    max_retries: int = 2
    perception_offset: tuple = (0.0, 0.0, 0.0)

    KINDS = ("reach", "pick-place", "lift", "stack")
    GRASP = 2  # phase index that closes the gripper

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown scripted policy {self.kind!r}; choose from {self.KINDS}")
        if self.kind == "lift":
            self.kind = "pick-place"
        self.reset()

    def reset(self):
        self.phase, self.retries = 0, 0
        self._plan = None
        self._start_z = None
        self._hold = np.zeros(3)

    def _make_plan(self, s: SceneState) -> list:
        """Waypoints ``(point, width, held)``; held points place the cube, not the TCP."""
        g = self.geometry
        cube = s.objects["cube"].translation.copy()
        if self.retries == 0:
            cube = cube + np.asarray(self.perception_offset, float)
        up = np.array([0.0, 0.0, 1.0])
        if self.kind == "reach":
            return [(cube + up * g.reach_height, g.open_width, False)]
        plan = [
            (cube + up * g.clearance, g.open_width, False),
            (cube, g.open_width, False),
            (cube, 0.0, False),
            (cube + up * g.lift_height, 0.0, True),
        ]
        if self.kind == "stack":
            other = s.objects["base_cube"].translation
            above = other + up * (g.cube_size + g.clearance)
            rest = other + up * (g.cube_size + 0.004)
            plan[3] = (np.array([cube[0], cube[1], above[2]]), 0.0, True)
            plan += [(above, 0.0, True), (rest, 0.0, True), (rest, g.open_width, True), (above, g.open_width, True)]
        return plan

    def _missed(self, s: SceneState) -> bool:
        return float(s.objects["cube"].translation[2]) < self._start_z + 0.02

    def act(self, s: SceneState) -> tuple[np.ndarray, bool]:
        if self._plan is None:
            self._plan = self._make_plan(s)
            if "cube" in s.objects:
                self._start_z = float(s.objects["cube"].translation[2])
        if (
            self.retry
            and self.kind != "reach"
            and self.phase == self.GRASP + 2
            and self.retries < self.max_retries
            and self._missed(s)
        ):
            self.retries += 1
            self.phase = 0
            self._plan = self._make_plan(s)
        if self.phase >= len(self._plan):
            return np.zeros(7), True
        point, width, held = self._plan[self.phase]
        if self.phase == self.GRASP:
            # the fingers close where the TCP is now; keep that grip offset
            self._hold = s.eef.translation - point
        target = point + self._hold if held else point
        d = target - s.eef.translation
        a = np.zeros(7)
        a[:3] = _clip(d, self.max_step)
        rel = quat_mul(DOWN, quat_conj(s.eef.rotation))
        a[3:6] = _clip(quat_to_rotvec(rel), MAX_ROT)
        a[6] = width - s.gripper_width
        if np.linalg.norm(d) <= self.max_step:
            self.phase += 1
        return a, False


# ---------------------------------------------------------------- vision


def _chroma_match(rgb: np.ndarray, albedo, ambient: float, tol: float) -> np.ndarray:
    """Pixels that look like ``albedo`` scaled by a shading factor in [ambient, 1]."""
    a = np.asarray(albedo, float)
    px = rgb.astype(float)
    k = (px @ a) / float(a @ a)
    resid = np.linalg.norm(px - k[..., None] * a, axis=-1)
    return (resid <= tol) & (k >= ambient - 0.08) & (k <= 1.08)


@dataclass
class ObjectDetector:
    """Finds an object of known albedo as the largest blob of its colour.

    A pixel matches when it is the albedo scaled by a shading factor
    between the ambient level and full light.
    """

    albedo: tuple
    ambient: float = 0.45
    tol: float = 12.0
    min_pixels: int = 3

    def matches(self, rgb: np.ndarray) -> np.ndarray:
        return _chroma_match(rgb, self.albedo, self.ambient, self.tol)

    def blobs(self, rgb: np.ndarray) -> list[np.ndarray]:
        labels, n = ndimage.label(self.matches(rgb), structure=np.ones((3, 3), bool))
        if n == 0:
            return []
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, np.arange(1, n + 1))
        order = sorted(range(n), key=lambda i: (-sizes[i], i))
        return [labels == i + 1 for i in order if sizes[i] >= self.min_pixels]


def _ray_plane(cam: CameraModel, u: float, v: float, z: float) -> np.ndarray | None:
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d = cam.pose.rotation_matrix @ d_cam
    o = cam.pose.translation
    if abs(d[2]) < 1e-9:
        return None
    s = (z - o[2]) / d[2]
    return None if s <= 0 else o + s * d


@dataclass
class CubeLocator:
    """Image blob to cube centre, inverting the blob-centroid bias by re-rendering.

    ``render_cube(center)`` must return an rgb frame of the empty scene with
    a cube at ``center`` as the camera ``cam`` would see it.
    """

    cam: CameraModel
    render_cube: object
    detector: ObjectDetector
    cube_size: float = 0.04
    iterations: int = 4

    def _centroid(self, mask: np.ndarray):
        ys, xs = np.nonzero(mask)
        return float(xs.mean()), float(ys.mean())

    def _plane_point(self, mask):
        u, v = self._centroid(mask)
        return _ray_plane(self.cam, u, v, self.cube_size / 2)

    def locate(self, rgb: np.ndarray, world_from_base: RigidTransform | None = None):
        blobs = self.detector.blobs(rgb)
        if not blobs:
            return None
        seen = self._plane_point(blobs[0])
        if seen is None:
            return None
        c = seen.copy()
        for _ in range(self.iterations):
            synth = self.detector.blobs(self.render_cube(c))
            if not synth:
                break
            p = self._plane_point(synth[0])
            if p is None:
                break
            c[:2] += seen[:2] - p[:2]
        c[2] = self.cube_size / 2
        pose = RigidTransform(c)
        if world_from_base is not None:
            pose = world_from_base.inverse() @ pose
        return pose


@dataclass
class VisualPolicy:
    """Scripted policy that takes the object position from the image.

    The first frame with a detectable object fixes the estimate; until then
    the policy holds still.
    """

    inner: ScriptedPolicy
    locator: CubeLocator
    world_from_base: RigidTransform = field(default_factory=RigidTransform)
    estimate: RigidTransform | None = None

    @property
    def needs_image(self) -> bool:
        return self.estimate is None

    def reset(self):
        self.inner.reset()
        self.estimate = None

    def act(self, s: SceneState, image: np.ndarray | None) -> tuple[np.ndarray, bool]:
        if self.estimate is None and image is not None:
            self.estimate = self.locator.locate(image, self.world_from_base)
        if self.estimate is None:
            return np.zeros(7), False
        seen = SceneState(s.eef, s.gripper_width, {**s.objects, "cube": self.estimate})
        return self.inner.act(seen)


def proprio_record(q: PolicyQuery) -> str:
    return format_pose_record(q.eef, q.gripper_width)


def zero_policy_main():  # pragma: no cover - exercised through a subprocess
    """Echo test double: answers every query with a zero action."""
    import sys

    for line in sys.stdin:
        parse_query(line)
        sys.stdout.write(serialize_reply(PolicyReply(np.zeros(7), False)))
        sys.stdout.flush()


if __name__ == "__main__":  # pragma: no cover
    zero_policy_main()
