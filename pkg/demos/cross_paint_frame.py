"""Repaint one tabletop frame: the arm that took it is swapped for another arm.

Writes before/after images and the edit band into demos/out/cross_paint/.
"""

from pathlib import Path

import numpy as np

from crosspaint.fixtures import fixture_robot
from crosspaint.harness import cube_objects, default_camera, static_objects
from crosspaint.imageops import save_mask
from crosspaint.pipeline import CrosspaintConfig, TargetObservation, cross_paint, target_mask
from crosspaint.raster import Scene, SceneRobot, render, save_frameset
from crosspaint.urdf import make_joint_state

out = Path(__file__).parent / "out" / "cross_paint"
cam = default_camera()
source, target = fixture_robot("arm7_a"), fixture_robot("arm6_b")

# the frame as the target arm sees it, hovering over the cube
q = make_joint_state(target, np.asarray(target.home) + [0.2, 0.1, 0.1, 0.0, 0.2, 0.0], 0.05)
scene = Scene(static_objects() + cube_objects({"cube": [0.5, 0.05, 0.02]}), (SceneRobot(target, q),))
frame = render(scene, cam)
save_frameset(frame, out / "before")

cfg = CrosspaintConfig(source, target, cam, use_depth_occlusion=True)
painted, diag = cross_paint(cfg, TargetObservation.from_state(target, frame, q))
save_frameset(painted, out / "after")
band, _ = target_mask(cfg, q, cam)
save_mask(band, out / "band.png")

print(f"IK matched the end effector: {diag.ik_success}")
print(f"edit band covers {diag.mask_fraction:.1%} of the image")
print(f"target pixels left after painting: {diag.remnant_pixels}")
print(f"stage times (ms): " + ", ".join(f"{k} {1e3 * v:.1f}" for k, v in diag.stage_seconds.items()))
print(f"images in {out}")
