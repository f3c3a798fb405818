"""``crosspaint`` command line.

Every option can also come from a JSON file given with ``--config``; keys
are the option names with dashes turned into underscores. A flag on the
command line beats the file, the file beats the built-in default.

Exit status: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__

USAGE_ERROR = 2
DOMAIN_ERROR = 1


class UsageError(Exception):
    pass


# built-in defaults per subcommand; flags default to None so the config file can fill gaps
DEFAULTS = {
    "run": {
        "in": None, "out": None, "source": "arm7_a", "target": "arm6_b",
        "camera": None, "target_camera": None, "source_base": None, "target_base": None,
        "reproject": False, "use_depth_occlusion": False, "mask_offset_px": 0,
        "dilate_arm_iters": 20, "dilate_gripper_iters": 10, "inpaint_radius": 3,
        "luminance_offset": 0, "background_plate": None,
    },
    "reproject": {"frame": None, "from_camera": None, "to_camera": None, "out": None, "close_gaps": True},
    "render": {"scene": None, "out": None, "camera": None},
    "fit-dynamics": {"data": None, "out": None, "min_transitions": 3},
    "simulate": {"spec": None, "out": None, "seed": None, "episodes": None, "workers": None, "threshold": None},
    "ik-check": {"robot": None, "pose": None, "seed_joints": None, "pos_tol": 1e-4, "rot_tol": 1e-3},
}
REQUIRED = {
    "run": ("in", "out"),
    "reproject": ("frame", "from_camera", "to_camera", "out"),
    "render": ("scene", "out"),
    "fit-dynamics": ("data", "out"),
    "simulate": ("spec", "out"),
    "ik-check": ("robot", "pose"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crosspaint", description="Cross-paint robot images and replay policies across robots.")
    p.add_argument("--version", action="version", version=f"crosspaint {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def cmd(name, help_):
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", help="JSON file with option values")
        return s

    s = cmd("run", "cross-paint a frame directory")
    s.add_argument("--in", dest="in", help="frameset directory (rgb.png, depth.png, seg.png, state.txt) "
                   "or a directory of them")
    s.add_argument("--out", help="output directory")
    s.add_argument("--source", help="source robot: fixture name or URDF path")
    s.add_argument("--target", help="target robot: fixture name or URDF path")
    s.add_argument("--camera", help="source camera JSON (default: harness camera)")
    s.add_argument("--target-camera", help="camera that took the frames (default: --camera)")
    s.add_argument("--source-base", help="world-from-base pose record of the source robot")
    s.add_argument("--target-base", help="world-from-base pose record of the target robot")
    s.add_argument("--reproject", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--use-depth-occlusion", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--mask-offset-px", type=int, help="calibration error in pixels along +x")
    s.add_argument("--dilate-arm-iters", type=int, help="arm mask dilation iterations (default 20)")
    s.add_argument("--dilate-gripper-iters", type=int, help="gripper mask dilation iterations (default 10)")
    s.add_argument("--inpaint-radius", type=int, help="inpainting radius in pixels (default 3)")
    s.add_argument("--luminance-offset", type=int)
    s.add_argument("--background-plate", help="background plate frame directory (replaces inpainting)")

    s = cmd("reproject", "warp a frame into another camera using its depth")
    s.add_argument("--frame", help="frame directory")
    s.add_argument("--from-camera", help="camera JSON of the frame")
    s.add_argument("--to-camera", help="destination camera JSON")
    s.add_argument("--out", help="output frame directory (also gets holes.png)")
    s.add_argument("--close-gaps", action=argparse.BooleanOptionalAction, default=None)

    s = cmd("render", "render a scene file to rgb, depth and segmentation")
    s.add_argument("--scene", help="scene JSON")
    s.add_argument("--out", help="output frame directory")
    s.add_argument("--camera", help="camera JSON overriding the scene's camera")

    s = cmd("fit-dynamics", "fit the per-dimension linear forward model")
    s.add_argument("--data", help="trajectory file or directory of them")
    s.add_argument("--out", help="model JSON to write")
    s.add_argument("--min-transitions", type=int)

    s = cmd("simulate", "run an experiment grid and write a CSV report")
    s.add_argument("--spec", help="experiment JSON")
    s.add_argument("--out", help="CSV report path")
    s.add_argument("--seed", type=int, help="master seed (overrides the spec)")
    s.add_argument("--episodes", type=int, help="episodes per cell (overrides the spec)")
    s.add_argument("--workers", type=int, help="worker processes (default: CROSSPAINT_THREADS or CPU count)")
    s.add_argument("--threshold", type=float, help="blocking error threshold (overrides the spec)")

    s = cmd("ik-check", "solve IK for a pose and report residuals")
    s.add_argument("--robot", help="fixture name or URDF path")
    s.add_argument("--pose", help="target pose record 'tx ty tz qw qx qy qz' in the base frame")
    s.add_argument("--seed-joints", help="initial joint values (default: home)")
    s.add_argument("--pos-tol", type=float)
    s.add_argument("--rot-tol", type=float)
    return p


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Flag > config file > default."""
    file_opts: dict = {}
    if getattr(args, "config", None):
        try:
            file_opts = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        if not isinstance(file_opts, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_opts) - set(DEFAULTS[command])
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    opts = {}
    for key, default in DEFAULTS[command].items():
        flag = getattr(args, key, None)
        opts[key] = flag if flag is not None else file_opts.get(key, default)
    missing = [k for k in REQUIRED[command] if opts[k] is None]
    if missing:
        raise UsageError(f"crosspaint {command}: missing " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return opts


# ---------------------------------------------------------------- commands


def _pose(text):
    from .geometry import RigidTransform, parse_pose_record

    if text is None:
        return RigidTransform()
    return parse_pose_record(text)[0]


def _camera(path):
    from .geometry import load_camera
    from .harness import default_camera

    return default_camera() if path is None else load_camera(path)


def cmd_run(o: dict) -> int:
    from .harness import resolve_robot
    from .pipeline import CrosspaintConfig, TargetObservation, cross_paint
    from .raster import load_frameset, save_frameset
    from .urdf import make_joint_state

    src, tgt = resolve_robot(o["source"]), resolve_robot(o["target"])
    cam = _camera(o["camera"])
    tcam = _camera(o["target_camera"]) if o["target_camera"] else cam
    cfg = CrosspaintConfig(
        src, tgt, cam, tcam, _pose(o["source_base"]), _pose(o["target_base"]),
        dilate_arm_iters=int(o["dilate_arm_iters"]), dilate_gripper_iters=int(o["dilate_gripper_iters"]),
        inpaint_radius=int(o["inpaint_radius"]), use_depth_occlusion=bool(o["use_depth_occlusion"]),
        reproject=bool(o["reproject"]), mask_offset_px=int(o["mask_offset_px"]),
        luminance_offset=int(o["luminance_offset"]),
        background_plate=load_frameset(o["background_plate"]) if o["background_plate"] else None,
    )
    src_dir = Path(o["in"])
    single = (src_dir / "rgb.png").exists()
    frames = [src_dir] if single else sorted(d for d in src_dir.iterdir() if (d / "rgb.png").exists())
    if not frames:
        raise FileNotFoundError(f"no frame directories with rgb.png under {src_dir}")
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    seed = None
    log = []
    for d in frames:
        vals = [float(v) for v in (d / "state.txt").read_text().split()]
        if len(vals) != tgt.dof + 1:
            raise ValueError(f"{d}/state.txt: expected {tgt.dof} joint values and a gripper width")
        state = make_joint_state(tgt, vals[:-1], vals[-1])
        obs = TargetObservation.from_state(tgt, load_frameset(d), state)
        painted, diag = cross_paint(cfg, obs, seed)
        seed = diag.source_state
        save_frameset(painted, out if single else out / d.name)
        rec = {
            "frame": d.name, "ik_success": diag.ik_success, "hole_fraction": diag.hole_fraction,
            "mask_fraction": diag.mask_fraction, "remnant_pixels": diag.remnant_pixels,
            "occluded_pixels": diag.occluded_pixels, "seconds": diag.stage_seconds.get("total", 0.0),
            "warnings": diag.warnings,
        }
        log.append(json.dumps(rec, sort_keys=True))
        for w in diag.warnings:
            print(f"{d.name}: warning: {w}", file=sys.stderr)
    (out / "diagnostics.jsonl").write_text("\n".join(log) + "\n")
    print(f"painted {len(frames)} frames into {out}")
    return 0


def cmd_reproject(o: dict) -> int:
    from .imageops import save_mask
    from .raster import load_frameset, save_frameset
    from .reproject import reproject_frame

    frame = load_frameset(o["frame"])
    out, holes = reproject_frame(frame, _camera(o["from_camera"]), _camera(o["to_camera"]),
                                 close_gaps=bool(o["close_gaps"]))
    d = save_frameset(out, o["out"])
    save_mask(holes, d / "holes.png")
    print(f"hole fraction {holes.mean():.4f}")
    return 0


def scene_from_dict(data: dict, base_dir: Path):
    """Scene JSON: ``objects`` (id, kind, size, pose, color), ``robots`` (robot, joints, width, base)."""
    from .geometry import camera_from_dict
    from .harness import resolve_robot
    from .raster import Light, Scene, SceneObject, SceneRobot
    from .urdf import Geometry, make_joint_state

    objects = []
    for o in data.get("objects", []):
        g = Geometry(o["kind"], tuple(float(v) for v in o["size"]))
        objects.append(SceneObject(int(o["id"]), g, _pose(o.get("pose")), tuple(o.get("color", (200, 60, 50)))))
    robots = []
    for r in data.get("robots", []):
        ref = r["robot"]
        if not Path(ref).is_absolute() and (base_dir / ref).exists():
            ref = str(base_dir / ref)
        model = resolve_robot(ref)
        q = r.get("joints")
        state = model.home_state() if q is None else make_joint_state(
            model, q, r.get("width", model.gripper.max_width))
        robots.append(SceneRobot(model, state, _pose(r.get("base")), int(r.get("label_offset", 0))))
    light = Light(**data["light"]) if "light" in data else Light()
    scene = Scene(tuple(objects), tuple(robots), light, tuple(data.get("background", (96, 100, 110))))
    cam = camera_from_dict(data["camera"]) if "camera" in data else None
    return scene, cam


def cmd_render(o: dict) -> int:
    from .raster import render, save_frameset

    path = Path(o["scene"])
    scene, cam = scene_from_dict(json.loads(path.read_text()), path.parent)
    if o["camera"]:
        cam = _camera(o["camera"])
    if cam is None:
        cam = _camera(None)
    save_frameset(render(scene, cam), o["out"])
    print(f"rendered {cam.width}x{cam.height} into {o['out']}")
    return 0


def cmd_fit_dynamics(o: dict) -> int:
    from .dynamics import DIMS, fit_forward_dynamics, load_dataset, save_model

    data = load_dataset(o["data"])
    model = fit_forward_dynamics(data, int(o["min_transitions"]))
    save_model(model, o["out"])
    print(f"{data.n_transitions} transitions, convention {model.convention}")
    for i, name in enumerate(DIMS):
        flag = "  rank-deficient, identity used" if model.rank_deficient[i] else ""
        print(f"{name:8s} slope {model.slope[i]: .6f} intercept {model.intercept[i]: .6f} "
              f"rms {model.residual_rms[i]:.2e}{flag}")
    return 0


def cmd_simulate(o: dict) -> int:
    from dataclasses import replace

    from .harness import ExperimentSpec, run_grid

    spec = ExperimentSpec.load(o["spec"])
    if o["seed"] is not None:
        spec = replace(spec, seed=int(o["seed"]))
    if o["episodes"] is not None:
        spec = replace(spec, episodes=int(o["episodes"]))
    if o["threshold"] is not None:
        spec = replace(spec, threshold=float(o["threshold"]))
    report = run_grid(spec, o["out"], o["workers"])
    for c in report.cells:
        print(f"{c.task:6s} {c.source}->{c.target} {c.mode:9s} {c.perturbation:30s} "
              f"{c.successes}/{c.episodes - c.invalid}" + (f"  FLAGGED: {c.error}" if c.error else ""))
    return DOMAIN_ERROR if report.flagged else 0


def cmd_ik_check(o: dict) -> int:
    from .geometry import parse_numbers
    from .harness import resolve_robot
    from .urdf import forward_kinematics, make_joint_state, solve_ik

    model = resolve_robot(o["robot"])
    target = _pose(o["pose"])
    seed = model.home_state()
    if o["seed_joints"] is not None:
        vals = o["seed_joints"]
        vals = parse_numbers(vals) if isinstance(vals, str) else [float(v) for v in vals]
        seed = make_joint_state(model, vals, seed.gripper_width)
    res = solve_ik(model, target, seed, pos_tol=float(o["pos_tol"]), rot_tol=float(o["rot_tol"]))
    eef = forward_kinematics(model, res.state).eef
    print("joints " + " ".join(f"{v:.6f}" for v in res.state.arm_q))
    print(f"position_error {res.position_error:.3e} m")
    print(f"rotation_error {res.rotation_error:.3e} rad")
    print(f"iterations {res.iterations}")
    print("achieved " + " ".join(f"{v:.6f}" for v in eef.to_record()))
    print("converged" if res.success else "not converged")
    return 0 if res.success else DOMAIN_ERROR


COMMANDS = {
    "run": cmd_run,
    "reproject": cmd_reproject,
    "render": cmd_render,
    "fit-dynamics": cmd_fit_dynamics,
    "simulate": cmd_simulate,
    "ik-check": cmd_ik_check,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:  # --help and --version
            return int(e.code or 0)
        if args.command is None:
            parser.print_help(sys.stderr)
            return USAGE_ERROR
        opts = resolve_options(args.command, args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return USAGE_ERROR
    try:
        return COMMANDS[args.command](opts)
    except (ValueError, OSError, KeyError, RuntimeError, np.linalg.LinAlgError) as e:
        print(f"crosspaint {args.command}: error: {e}", file=sys.stderr)
        return DOMAIN_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
