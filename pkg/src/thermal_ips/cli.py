"""Command-line entry point: ``ips run``, ``ips compass-only`` and ``ips synth``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from .compass import CameraModel
from .errors import IpsError
from .pipeline import PipelineConfig, run
from .synth import (
    CALIBRATED_NOISE,
    NoiseModel,
    Scenario,
    gen_pan,
    gen_walk,
    load_scenario,
    load_truth,
    write_pan,
    write_walk,
)

log = logging.getLogger("thermal_ips")

# (flag, config field, type, help); every default lives in PipelineConfig
_TUNABLES = [
    ("--fps", "fps", float, "uniform frame rate when frames.times is absent"),
    ("--nx", "nx", int, "horizontal resolution in pixels"),
    ("--beta", "beta", float, "horizontal field of view in degrees"),
    ("--enhance-block", "enhance_block", int, "adaptive threshold block size (odd)"),
    ("--enhance-offset", "enhance_offset", float, "adaptive threshold offset"),
    ("--octaves", "octaves", int, "scale-space octaves"),
    ("--scales", "scales", int, "scales per octave"),
    ("--sigma", "sigma", float, "base blur of the scale space"),
    ("--contrast-thresh", "contrast_thresh", float, "DoG contrast threshold"),
    ("--edge-ratio", "edge_ratio", float, "principal curvature ratio limit"),
    ("--max-keypoints", "max_keypoints", int, "keypoints kept per frame"),
    ("--window", "window", int, "Lucas-Kanade window (odd)"),
    ("--eig-min", "eig_min", float, "minimum structure-tensor eigenvalue"),
    ("--lk-iterations", "lk_iterations", int, "Lucas-Kanade refinement iterations (1 = single solve)"),
    ("--pyramid-levels", "pyramid_levels", int, "reserved; only 1 is supported"),
    ("--lambda", "lam", float, "gyro weight in the heading fusion"),
    ("--low-cut", "low_cut", float, "static-flow cut, pixels/frame"),
    ("--k-sigma", "k_sigma", float, "foreground cut in multiples of sigma"),
    ("--fixed-high-cut", "fixed_high_cut", float, "constant foreground cut, pixels/frame"),
    ("--turn-thresh", "turn_thresh", float, "turn detection threshold, degrees"),
    ("--turn-window", "turn_window", int, "turn kernel half width, frames"),
    ("--svr-c", "svr_c", float, "SVR regularisation constant C"),
    ("--svr-eps", "svr_eps", float, "SVR insensitive tube half width, metres"),
    ("--svr-delta", "svr_delta", float, "SVR Huber knee, metres"),
    ("--svr-gamma", "svr_gamma", float, "Gaussian kernel gamma, 1/s^2 (default from segment length)"),
    ("--grid-dt", "grid_dt", float, "velocity grid step, seconds"),
    ("--v-max", "v_max", float, "velocity plausibility bound, m/s"),
    ("--median-window", "median_window", int, "median window for replaced velocities"),
    ("--initial-heading", "initial_heading", float, "heading of the first frame, degrees CCW from +x"),
]


def _add_pipeline_args(p: argparse.ArgumentParser, compass_only: bool) -> None:
    p.add_argument("--frames", help="directory of frame_%%06d.pgm files")
    p.add_argument("--imu", help="IMU log (t,gx,gy,gz,ax,ay,az)")
    if not compass_only:
        p.add_argument("--lidar", help="LIDAR log (t,distance_m)")
        p.add_argument("--compass-only", dest="compass_only", action="store_const", const=True,
                       help="stop after the heading stage")
        p.add_argument("--truth", help="ground-truth path.csv drawn dashed in path.svg")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON file of PipelineConfig fields")
    p.add_argument("--no-enhance", dest="enhance", action="store_const", const=False,
                   help="skip adaptive thresholding")
    p.add_argument("--origin", type=float, nargs=2, metavar=("X", "Y"), help="start position, metres")
    p.add_argument("--dump-keypoints", action="store_const", const=True, help="write keypoints_%%06d.csv")
    p.add_argument("--dump-flow", action="store_const", const=True, help="write flow_%%06d.csv")
    for flag, name, typ, text in _TUNABLES:
        p.add_argument(flag, dest=name, type=typ, help=text)
    p.set_defaults(**{name: None for _, name, _, _ in _TUNABLES})


def build_config(args: argparse.Namespace, compass_only: bool = False) -> PipelineConfig:
    """Defaults, then the JSON config file, then explicit command-line flags."""
    values = {}
    if args.config:
        with open(args.config) as fh:
            values.update(json.load(fh))
    names = {f for f in PipelineConfig.__dataclass_fields__}
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if compass_only:
        values["compass_only"] = True
    if values.get("origin") is not None:
        values["origin"] = tuple(values["origin"])
    return PipelineConfig.from_dict(values)


def _cmd_run(args, compass_only=False) -> int:
    try:
        cfg = build_config(args, compass_only)
    except (OSError, ValueError, IpsError) as exc:
        print(f"ips: bad configuration: {exc}", file=sys.stderr)
        return 2
    if not cfg.out:
        print("ips: --out is required", file=sys.stderr)
        return 2
    truth = load_truth(args.truth) if getattr(args, "truth", None) else None
    report = run(cfg, truth)
    if report.ok:
        end = report.endpoint
        where = f", endpoint ({end[0]:.2f}, {end[1]:.2f}) m" if end else ""
        print(f"ok: {report.frames} frames, {report.turns} turns{where}; outputs in {cfg.out}")
        for flag in report.flags:
            print(f"warning: {flag}", file=sys.stderr)
        return 0
    print(f"ips: {report.failed_stage} failed: {report.error}", file=sys.stderr)
    return 1


def _parse_waypoints(text: str):
    pts = []
    for pair in text.split(";"):
        x, y = pair.split(",")
        pts.append((float(x), float(y)))
    return pts


def _cmd_synth_pan(args) -> int:
    cam = CameraModel(args.nx, args.beta)
    frames, truth = gen_pan(args.seed, args.rotation, args.frames, cam, fps=args.fps, height=args.height,
                            pixel_noise=args.pixel_noise, texture_scale=args.texture_scale)
    write_pan(args.out, frames, truth)
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def walk_config(sc: Scenario, initial_heading: float) -> dict:
    """Pipeline settings matching a synthetic walk.

    Besides placement and camera, the turn kernel half width is set to half
    the duration of a 90 degree turn at the scenario's turn rate.
    """
    return {
        "initial_heading": initial_heading,
        "origin": list(sc.waypoints[0]),
        "nx": sc.camera.nx,
        "beta": sc.camera.beta,
        "fps": sc.fps,
        "turn_window": int(round(0.5 * sc.fps * 90.0 / sc.turn_rate)),
    }


def _cmd_synth_walk(args) -> int:
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        if not args.waypoints:
            print("ips synth walk: give --scenario or --waypoints", file=sys.stderr)
            return 2
        noise = CALIBRATED_NOISE if args.noise == "calibrated" else NoiseModel()
        sc = Scenario(waypoints=_parse_waypoints(args.waypoints), speed=args.speed, fps=args.fps,
                      noise=noise, seed=args.seed)
    data = gen_walk(sc)
    paths = write_walk(args.out, data)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump(walk_config(sc, data.initial_heading), fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(data.frames)} frames, {len(data.imu)} IMU and {len(data.ranges)} LIDAR samples "
          f"to {args.out} ({paths['scenario']})")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ips", description="Thermal-camera indoor positioning.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full reconstruction from frames, IMU and LIDAR")
    _add_pipeline_args(p, compass_only=False)
    p.set_defaults(func=lambda a: _cmd_run(a))

    p = sub.add_parser("compass-only", help="heading estimation only")
    _add_pipeline_args(p, compass_only=True)
    p.set_defaults(func=lambda a: _cmd_run(a, compass_only=True))

    synth = sub.add_parser("synth", help="generate synthetic inputs with ground truth")
    ssub = synth.add_subparsers(dest="kind", required=True)
    p = ssub.add_parser("pan", help="pure-rotation frame sequence")
    p.add_argument("--out", required=True)
    p.add_argument("--rotation", type=float, default=90.0, help="total rotation, degrees")
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--nx", type=int, default=320)
    p.add_argument("--beta", type=float, default=49.0)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--pixel-noise", type=float, default=0.0)
    p.add_argument("--texture-scale", type=float, default=1.0)
    p.set_defaults(func=_cmd_synth_pan)

    p = ssub.add_parser("walk", help="corridor walk with IMU and LIDAR logs")
    p.add_argument("--out", required=True)
    p.add_argument("--scenario", help="scenario JSON (overrides the other options)")
    p.add_argument("--waypoints", help='"x,y;x,y;..." in metres')
    p.add_argument("--speed", type=float, default=1.25)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--noise", choices=["zero", "calibrated"], default="zero")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth_walk)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IpsError, OSError) as exc:
        print(f"ips: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
