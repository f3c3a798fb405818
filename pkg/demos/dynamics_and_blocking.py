"""Fit a forward dynamics model, then show why blocking execution matters.

A policy trained on a fast arm issues deltas; the target arm only closes half
of each commanded step per tick. Blocking waits for convergence, delta does not.
"""

import numpy as np

from crosspaint.dynamics import (
    ControllerConfig,
    FirstOrderPlant,
    blocking_step,
    closed_form_ticks,
    delta_step,
    fit_forward_dynamics,
    synthetic_dataset,
)
from crosspaint.geometry import RigidTransform, pose_error_norm

slope = np.array([0.9, 0.9, 1.1, 1.0, 1.0, 0.8, 1.0])
intercept = np.array([0.001, 0.0, -0.002, 0.0, 0.0, 0.0, 0.0])
model = fit_forward_dynamics(synthetic_dataset(slope, intercept, 2000, seed=0))
print("fitted slope    ", np.round(model.slope, 6))
print("fitted intercept", np.round(model.intercept, 6))

start, goal = RigidTransform([0.4, 0.0, 0.3]), RigidTransform([0.5, 0.1, 0.2])
e0 = pose_error_norm(start, goal)
for gain in (0.25, 0.5, 1.0, 1.5):
    r = blocking_step(ControllerConfig(gain=gain), start, goal, FirstOrderPlant(gain))
    print(f"gain {gain:4.2f}: blocking converged={r.converged} in {r.ticks} ticks "
          f"(closed form {closed_form_ticks(e0, gain)})")

# the same move as ten deltas of 1 cm per axis, one tick each
plant, pose = FirstOrderPlant(0.5), start
for _ in range(10):
    pose = delta_step(pose, [0.01, 0.01, -0.01, 0, 0, 0, 0], plant)
print(f"delta mode at gain 0.5 ends {pose_error_norm(pose, goal) * 100:.1f} cm short of the goal")
