"""How calibration errors degrade a vision policy, and what reprojection buys back.

Uses the same grid file format as `crosspaint simulate`; the CSV lands in demos/out/.
"""

from pathlib import Path

from crosspaint.harness import ExperimentSpec, run_grid

out = Path(__file__).parent / "out"
out.mkdir(parents=True, exist_ok=True)
spec = ExperimentSpec(
    tasks=("lift",),
    observation="vision",
    episodes=30,
    perturbations=(
        {},
        {"mask_offset_px": 10},
        {"mask_offset_px": 30},
        {"camera": "medium"},
        {"camera": "medium", "reproject": True},
        {"camera": "large"},
        {"camera": "large", "reproject": True},
    ),
)
report = run_grid(spec, out / "sensitivity.csv")
for c in report.cells:
    print(f"{c.perturbation:30s} {c.success_rate:4.0%}")
