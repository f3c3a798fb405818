"""Cross-painting: swap the target robot in a frame for a render of the source robot."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CameraModel, RigidTransform, transform_pose
from .imageops import (
    ARM_DILATION,
    GRIPPER_DILATION,
    INPAINT_RADIUS,
    adjust_luminance,
    composite_overlay,
    dilate_mask,
    fill_from_plate,
    inpaint_fast_marching,
    shift_image,
    shift_mask,
)
from .policy import PolicyQuery
from .raster import FrameSet, Light, render_robot_layer
from .reproject import reproject_frame
from .urdf import (
    IKResult,
    JointState,
    RobotModel,
    forward_kinematics,
    make_joint_state,
    solve_ik,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CrosspaintConfig:
    """Everything cross-painting needs besides the observation itself.

    Base poses are world-from-base. ``target_cam`` is the camera that took
    the observations; when ``reproject`` is set frames are first warped into
    ``source_cam``, otherwise the source robot is drawn in the target view.
    """

    source: RobotModel
    target: RobotModel
    source_cam: CameraModel
    target_cam: CameraModel | None = None
    source_base: RigidTransform = field(default_factory=RigidTransform)
    target_base: RigidTransform = field(default_factory=RigidTransform)
    dilate_arm_iters: int = ARM_DILATION
    dilate_gripper_iters: int = GRIPPER_DILATION
    inpaint_radius: int = INPAINT_RADIUS
    use_depth_occlusion: bool = False
    reproject: bool = False
    mask_offset_px: tuple = (0, 0)
    luminance_offset: int = 0
    background_plate: FrameSet | None = None
    light: Light = field(default_factory=Light)

    def __post_init__(self):
        if self.target_cam is None:
            object.__setattr__(self, "target_cam", self.source_cam)
        off = self.mask_offset_px
        off = (int(off), 0) if np.isscalar(off) else tuple(int(v) for v in off)
        if len(off) != 2:
            raise ConfigError("mask_offset_px must be an int or a (dx, dy) pair")
        object.__setattr__(self, "mask_offset_px", off)
        if self.dilate_arm_iters < 0 or self.dilate_gripper_iters < 0:
            raise ConfigError("dilation iterations must be >= 0")
        if self.inpaint_radius < 1:
            raise ConfigError("inpaint radius must be >= 1")
        if self.background_plate is not None and self.background_plate.shape != self.view_cam.shape:
            raise ConfigError("background plate does not match the working camera")

    @property
    def T_ts(self) -> RigidTransform:
        """Target base frame to source base frame."""
        return self.source_base.inverse() @ self.target_base

    @property
    def T_st(self) -> RigidTransform:
        return self.T_ts.inverse()

    @property
    def view_cam(self) -> CameraModel:
        """Camera whose view the painted frame is in."""
        return self.source_cam if self.reproject else self.target_cam

    def with_options(self, **kw) -> "CrosspaintConfig":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class TargetObservation:
    frame: FrameSet
    state: JointState
    eef: RigidTransform  # target base frame
    timestamp: float = 0.0
    external: bool = False

    @classmethod
    def from_state(cls, model: RobotModel, frame: FrameSet, state: JointState, timestamp: float = 0.0):
        return cls(frame, state, forward_kinematics(model, state).eef, timestamp)

    def check(self, model: RobotModel, tol: float = 1e-6) -> None:
        if self.external:
            return
        fk = forward_kinematics(model, self.state).eef
        if np.linalg.norm(fk.translation - self.eef.translation) > tol or (
            1.0 - abs(float(np.dot(fk.rotation, self.eef.rotation))) > tol
        ):
            raise ValueError("observation EEF pose disagrees with FK of its joint state")


@dataclass
class Diagnostics:
    ik: IKResult | None = None
    source_state: JointState | None = None
    hole_fraction: float = 0.0
    mask_fraction: float = 0.0
    occluded_pixels: int = 0
    remnant_pixels: int = 0
    inpaint_fallback: bool = False
    stage_seconds: dict = field(default_factory=dict)

    @property
    def ik_success(self) -> bool:
        return bool(self.ik and self.ik.success)

    @property
    def warnings(self) -> list[str]:
        out = []
        if self.ik is not None and not self.ik.success:
            out.append(
                f"IK did not converge (position {self.ik.position_error:.2e} m, "
                f"rotation {self.ik.rotation_error:.2e} rad); rendered best effort"
            )
        if self.occluded_pixels:
            out.append(f"{self.occluded_pixels} robot pixels drawn over nearer scene content")
        if self.inpaint_fallback:
            out.append("whole frame masked; filled with mid-grey")
        return out


def _split_mask(model: RobotModel, seg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grip_ids = [model.link_id(n) for n in model.gripper_links]
    gripper = np.isin(seg, grip_ids)
    return (seg != 0) & ~gripper, gripper


def target_mask(cfg: CrosspaintConfig, state: JointState, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """(dilated mask, undilated true silhouette) of the target robot in ``cam``."""
    layer = render_robot_layer(cfg.target, state, cfg.target_base, cam, cfg.light)
    true = layer.seg != 0
    arm, grip = _split_mask(cfg.target, layer.seg)
    dx, dy = cfg.mask_offset_px
    if dx or dy:
        arm, grip = shift_mask(arm, dx, dy), shift_mask(grip, dx, dy)
    # different growth for arm and gripper, so dilate apart then union
    mask = dilate_mask(arm, cfg.dilate_arm_iters) | dilate_mask(grip, cfg.dilate_gripper_iters)
    return mask, true


def _shift_layer(layer: FrameSet, dx: int, dy: int) -> FrameSet:
    return FrameSet(
        shift_image(layer.rgb, dx, dy, 0),
        shift_image(layer.depth, dx, dy, np.inf),
        shift_image(layer.seg, dx, dy, 0),
    )


def cross_paint(
    cfg: CrosspaintConfig, obs: TargetObservation, seed: JointState | None = None
) -> tuple[FrameSet, Diagnostics]:
    """Mask and fill the target robot, then draw the source robot at the same EEF pose.

    ``seed`` starts the source IK (pass the previous frame's solution for
    temporally stable renders); without it the source home pose is used.
    The result depends only on the arguments, so frames may be processed
    in any order.
    """
    diag = Diagnostics()
    clock = time.perf_counter
    t0 = clock()
    obs.check(cfg.target)
    frame = obs.frame
    if frame.shape != cfg.target_cam.shape:
        raise ConfigError(f"frame is {frame.shape} but target camera is {cfg.target_cam.shape}")
    cam = cfg.view_cam
    holes = np.zeros(cam.shape, bool)
    if cfg.reproject:
        frame, holes = reproject_frame(frame, cfg.target_cam, cfg.source_cam)
    else:
        frame = frame.copy()
    t1 = clock()
    diag.stage_seconds["reproject"] = t1 - t0

    mask, true_mask = target_mask(cfg, obs.state, cam)
    t2 = clock()
    diag.stage_seconds["mask"] = t2 - t1

    fill = mask | holes
    if cfg.background_plate is not None:
        plate = cfg.background_plate
        rgb = fill_from_plate(frame.rgb, fill, plate.rgb)
        flagged = False
    else:
        rgb, flagged = inpaint_fast_marching(frame.rgb, fill, cfg.inpaint_radius, return_flag=True)
    depth = None
    if frame.depth is not None:
        depth = frame.depth.copy()
        if cfg.background_plate is not None and cfg.background_plate.depth is not None:
            depth[fill] = cfg.background_plate.depth[fill]
        else:
            depth[fill] = np.inf
    seg = None
    if frame.seg is not None:
        seg = frame.seg.copy()
        seg[fill] = 0
    base = FrameSet(rgb, depth, seg)
    t3 = clock()
    diag.stage_seconds["inpaint"] = t3 - t2

    src_eef = transform_pose(cfg.T_ts, obs.eef)
    if seed is None:
        seed = cfg.source.home_state()
    ik = solve_ik(cfg.source, src_eef, seed)
    state = make_joint_state(cfg.source, ik.state.arm_q, obs.state.gripper_width)
    diag.ik, diag.source_state = ik, state
    t4 = clock()
    diag.stage_seconds["ik"] = t4 - t3

    layer = render_robot_layer(cfg.source, state, cfg.source_base, cam, cfg.light)
    dx, dy = cfg.mask_offset_px
    if dx or dy:
        # a miscalibrated camera misplaces every render the same way
        layer = _shift_layer(layer, dx, dy)
    t5 = clock()
    diag.stage_seconds["render"] = t5 - t4

    drawn = layer.seg != 0
    use_depth = cfg.use_depth_occlusion and base.depth is not None
    if use_depth:
        drawn &= layer.depth < base.depth
    elif frame.depth is not None:
        diag.occluded_pixels = int(np.count_nonzero(drawn & (frame.depth < layer.depth) & ~fill))
    out = composite_overlay(base, layer, use_depth)
    if cfg.luminance_offset:
        out.rgb = adjust_luminance(out.rgb, drawn, cfg.luminance_offset)
    t6 = clock()
    diag.stage_seconds["composite"] = t6 - t5
    diag.stage_seconds["total"] = t6 - t0

    n = mask.size
    diag.hole_fraction = float(np.count_nonzero(holes)) / n
    diag.mask_fraction = float(np.count_nonzero(mask)) / n
    diag.remnant_pixels = int(np.count_nonzero(true_mask & ~fill & ~drawn))
    diag.inpaint_fallback = bool(flagged)
    return out, diag


def make_policy_query(
    obs: TargetObservation, painted: FrameSet, T_ts: RigidTransform, step: int = 0
) -> PolicyQuery:
    """Proprio re-expressed in the source base frame plus the painted image."""
    return PolicyQuery(painted.rgb, transform_pose(T_ts, obs.eef), float(obs.state.gripper_width), step)
