"""End-to-end reconstruction: frames and sensor logs in, heading and path out."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import compass, features, flow, kinematics, ranger, sensorio
from . import enhance as enh
from .compass import CameraModel, HeadingSample
from .errors import IngestionError, IpsError, ParameterError
from .plots import render_compass_svg, render_path_svg

log = logging.getLogger(__name__)

ZERO_SURVIVOR_FLAG = 0.5


@dataclass
class PipelineConfig:
    frames: Optional[str] = None
    imu: Optional[str] = None
    lidar: Optional[str] = None
    out: Optional[str] = None
    fps: Optional[float] = None
    # camera
    nx: int = compass.DEFAULT_NX
    beta: float = compass.DEFAULT_BETA
    # enhancement
    enhance: bool = True
    enhance_block: int = enh.DEFAULT_BLOCK
    enhance_offset: float = enh.DEFAULT_OFFSET
    # keypoints
    octaves: int = features.DEFAULT_OCTAVES
    scales: int = features.DEFAULT_SCALES
    sigma: float = features.DEFAULT_SIGMA
    contrast_thresh: float = features.DEFAULT_CONTRAST
    edge_ratio: float = features.DEFAULT_EDGE_RATIO
    max_keypoints: int = features.DEFAULT_MAX_KEYPOINTS
    # optical flow
    window: int = flow.DEFAULT_WINDOW
    eig_min: float = flow.DEFAULT_EIG_MIN
    lk_iterations: int = flow.DEFAULT_ITERATIONS
    pyramid_levels: int = 1
    # compass
    lam: float = compass.DEFAULT_LAMBDA
    low_cut: float = compass.DEFAULT_LOW_CUT
    k_sigma: float = compass.DEFAULT_K_SIGMA
    fixed_high_cut: Optional[float] = None
    # ranging
    turn_thresh: float = ranger.DEFAULT_TURN_THRESH
    turn_window: int = ranger.DEFAULT_TURN_WINDOW
    svr_c: float = ranger.DEFAULT_C
    svr_eps: float = ranger.DEFAULT_EPSILON
    svr_delta: float = ranger.DEFAULT_DELTA
    svr_gamma: Optional[float] = None
    min_segment_samples: int = ranger.MIN_SEGMENT_SAMPLES
    # kinematics
    grid_dt: float = kinematics.DEFAULT_GRID_DT
    v_max: float = kinematics.DEFAULT_V_MAX
    median_window: int = kinematics.DEFAULT_MEDIAN_WINDOW
    initial_heading: float = 0.0
    origin: Tuple[float, float] = (0.0, 0.0)
    # modes and dumps
    compass_only: bool = False
    dump_keypoints: bool = False
    dump_flow: bool = False

    @property
    def camera(self) -> CameraModel:
        return CameraModel(self.nx, self.beta)

    def check(self) -> None:
        """Validate parameters (paths are checked when the run starts)."""
        self.camera
        if self.pyramid_levels != 1:
            raise ParameterError("only single-level optical flow is implemented (pyramid_levels=1)")
        if self.fps is not None and self.fps <= 0:
            raise ParameterError("fps must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError("lam must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "origin" in d:
            d["origin"] = tuple(float(v) for v in d["origin"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["origin"] = list(self.origin)
        return d


@dataclass
class RunReport:
    status: str = "ok"
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    frames: int = 0
    keypoints_per_frame: float = 0.0
    flow_vectors: int = 0
    valid_vectors: int = 0
    inliers: int = 0
    inlier_ratio: float = 0.0
    zero_survivor_frames: int = 0
    zero_survivor_ratio: float = 0.0
    untrackable_frames: int = 0
    flags: List[str] = field(default_factory=list)
    turns: int = 0
    segments: int = 0
    velocity_replaced: int = 0
    final_heading: Optional[float] = None
    endpoint: Optional[List[float]] = None
    path_length: Optional[float] = None
    warnings: List[str] = field(default_factory=list)
    timing: Dict[str, float] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class CompassTrack:
    """Per-frame output of the video compass."""

    times: np.ndarray
    omegas: np.ndarray  # deg/frame, one per frame pair
    stats: List[compass.RejectionStats]
    keypoint_counts: List[int]
    theta_c: np.ndarray


@dataclass
class Reconstruction:
    track: CompassTrack
    theta_g: Optional[np.ndarray]
    fused: np.ndarray  # relative to the first frame
    samples: List[HeadingSample]
    turns: List[ranger.TurnEvent] = field(default_factory=list)
    segments: List[ranger.RangeSegment] = field(default_factory=list)
    models: List[ranger.SvrModel] = field(default_factory=list)
    velocities: List[kinematics.VelocitySample] = field(default_factory=list)
    path: List[kinematics.PathPoint] = field(default_factory=list)


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record):
        self.messages.append(f"{record.name}: {record.getMessage()}")


class _Stages:
    """Tracks the running stage name and its wall time."""

    def __init__(self, report: RunReport):
        self.report = report
        self.current: Optional[str] = None

    @contextmanager
    def __call__(self, name: str):
        self.current = name
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.report.timing[name] = self.report.timing.get(name, 0.0) + time.perf_counter() - t0
        self.current = None


def _prepare(frame, cfg: PipelineConfig):
    if cfg.enhance:
        return enh.adaptive_threshold(frame, cfg.enhance_block, cfg.enhance_offset).pixels
    return frame.pixels


def track_compass(frames: Sequence, cfg: PipelineConfig, dump_dir: Optional[str] = None,
                  stages: Optional[_Stages] = None) -> CompassTrack:
    """Run enhancement, detection, flow and rejection over a frame sequence."""
    cam = cfg.camera
    stages = stages or _Stages(RunReport())
    n = len(frames)
    times = np.zeros(n)
    omegas, stats, counts = [], [], []
    prev_raw = prev_kps = None
    last_u = 0.0  # seeds the next flow solve; the camera turns smoothly
    for k in range(n):
        frame = frames[k]
        times[k] = frame.t
        raw = np.asarray(frame.pixels)
        with stages("enhance"):
            img = _prepare(frame, cfg)
        with stages("features"):
            space = features.build_scale_space(img, cfg.octaves, cfg.scales, cfg.sigma)
            kps = features.detect_keypoints(space, cfg.contrast_thresh, cfg.edge_ratio, cfg.max_keypoints)
        counts.append(len(kps))
        if dump_dir and cfg.dump_keypoints:
            _write_csv(os.path.join(dump_dir, "keypoints_%06d.csv" % k), ["x", "y", "octave", "scale", "response"],
                       [(p.x, p.y, p.octave, p.scale, p.response) for p in kps])
        if prev_raw is not None:
            # the binary image only locates keypoints; flow needs the grey levels
            with stages("flow"):
                vecs = flow.lk_at_points(prev_raw, raw, prev_kps, cfg.window, cfg.eig_min, cfg.lk_iterations,
                                         guess=(last_u, 0.0))
            if dump_dir and cfg.dump_flow:
                _write_csv(os.path.join(dump_dir, "flow_%06d.csv" % (k - 1)), ["x", "y", "u", "v", "valid"],
                           [(f.x, f.y, f.u, f.v, int(f.valid)) for f in vecs])
            with stages("compass"):
                u, st = compass.reject_and_average(vecs, cfg.low_cut, cfg.k_sigma, cfg.fixed_high_cut)
                omegas.append(compass.angular_velocity(u, cam))
                last_u = u
                stats.append(st)
        prev_raw, prev_kps = raw, kps
    omegas = np.array(omegas, dtype=float)
    return CompassTrack(times, omegas, stats, counts, compass.integrate_heading(omegas))


def reconstruct(
    frames: Sequence,
    imu,
    ranges,
    cfg: PipelineConfig,
    dump_dir: Optional[str] = None,
    stages: Optional[_Stages] = None,
) -> Reconstruction:
    """In-memory pipeline.  ``imu`` and ``ranges`` may be None (compass only)."""
    stages = stages or _Stages(RunReport())
    if len(frames) < 2:
        raise IngestionError("need at least 2 frames")
    track = track_compass(frames, cfg, dump_dir, stages)
    with stages("fusion"):
        if imu is not None:
            theta_g = sensorio.sample_gyro_heading(imu, track.times)
            fused = compass.fuse_headings(track.theta_c, theta_g, cfg.lam)
        else:
            log.warning("no IMU log: fused heading is the camera heading alone")
            theta_g = None
            fused = track.theta_c.copy()
        samples = compass.heading_samples(
            track.times, track.omegas, track.theta_c,
            theta_g if theta_g is not None else np.full_like(track.theta_c, np.nan),
            fused, [s.inliers for s in track.stats],
        )
    rec = Reconstruction(track, theta_g, fused, samples)
    if cfg.compass_only or ranges is None:
        return rec

    with stages("ranger"):
        rec.turns = ranger.detect_turns(fused, cfg.turn_window, cfg.turn_thresh, times=track.times)
        rec.segments = ranger.segment_ranges(ranges, rec.turns, cfg.min_segment_samples)
        rec.models = [
            ranger.svr_fit(seg, cfg.svr_c, cfg.svr_eps, cfg.svr_delta, cfg.svr_gamma, imu=imu)
            for seg in rec.segments
        ]
    with stages("kinematics"):
        raw = kinematics.differentiate_fit(rec.models, cfg.grid_dt)
        rec.velocities = kinematics.threshold_velocities(raw, cfg.v_max, cfg.median_window)
        rec.path = kinematics.dead_reckon(track.times, cfg.initial_heading + fused, rec.velocities, cfg.origin)
    return rec


def summarise(rec: Reconstruction, report: RunReport) -> None:
    """Fill the report's counts and degradation flags from a reconstruction."""
    tr = rec.track
    report.frames = len(tr.times)
    report.keypoints_per_frame = float(np.mean(tr.keypoint_counts)) if tr.keypoint_counts else 0.0
    attempted = sum(s.total + s.invalid for s in tr.stats)
    report.flow_vectors = attempted
    report.valid_vectors = sum(s.total for s in tr.stats)
    report.inliers = sum(s.inliers for s in tr.stats)
    report.inlier_ratio = report.inliers / attempted if attempted else 0.0
    pairs = len(tr.stats)
    report.zero_survivor_frames = sum(s.zero_survivors for s in tr.stats)
    report.zero_survivor_ratio = report.zero_survivor_frames / pairs if pairs else 0.0
    report.untrackable_frames = sum(s.total == 0 for s in tr.stats)
    if pairs and report.zero_survivor_ratio >= ZERO_SURVIVOR_FLAG:
        report.flags.append("zero_survivor_majority")
    if pairs and report.untrackable_frames / pairs >= ZERO_SURVIVOR_FLAG:
        report.flags.append("low_texture")
    report.final_heading = float(rec.fused[-1]) if len(rec.fused) else None
    report.turns = len(rec.turns)
    report.segments = len(rec.segments)
    report.velocity_replaced = sum(v.replaced for v in rec.velocities)
    if rec.path:
        report.endpoint = [rec.path[-1].x, rec.path[-1].y]
        report.path_length = kinematics.path_length(rec.path)


# ---------------------------------------------------------------------------
# file outputs


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_outputs(rec: Reconstruction, cfg: PipelineConfig, out: str, report: RunReport, truth=None) -> None:
    def emit(name, header, rows):
        _write_csv(os.path.join(out, name), header, rows)
        report.outputs.append(name)

    emit("heading.csv", ["frame", "t", "omega_c", "theta_c", "theta_g", "theta_fused", "n_inliers"],
         [(s.frame, s.t, s.omega_c, s.theta_c, s.theta_g, s.theta_fused, s.n_inliers) for s in rec.samples])
    with open(os.path.join(out, "compass.svg"), "w") as fh:
        fh.write(render_compass_svg(rec.samples))
    report.outputs.append("compass.svg")
    if cfg.compass_only:
        return
    emit("turns.csv", ["t", "frame", "heading_change"], [(e.t, e.frame, e.heading_change) for e in rec.turns])
    emit("segments.csv",
         ["segment", "start_t", "end_t", "samples", "init_distance", "init_velocity", "gamma", "iterations"],
         [(i, m.start_t, m.end_t, len(m.train_t), m.d0, m.v0, m.gamma, m.iterations)
          for i, m in enumerate(rec.models)])
    rows = []
    for seg, m in zip(rec.segments, rec.models):
        fitted = ranger.svr_predict(m, seg.t)
        rows.extend(zip(map(float, seg.t), map(float, seg.distance), map(float, fitted)))
    emit("range_fit.csv", ["t", "raw", "fitted"], rows)
    emit("velocity.csv", ["t", "v_raw", "v", "replaced"],
         [(v.t, v.v_raw, v.v, int(v.replaced)) for v in rec.velocities])
    emit("path.csv", ["t", "x", "y", "theta"], [(p.t, p.x, p.y, p.theta) for p in rec.path])
    if rec.path:
        with open(os.path.join(out, "path.svg"), "w") as fh:
            fh.write(render_path_svg(rec.path, truth))
        report.outputs.append("path.svg")


def _load_inputs(cfg: PipelineConfig, stages: _Stages):
    with stages("sensorio"):
        needed = ("frames",) if cfg.compass_only else ("frames", "imu", "lidar")
        for name in ("frames", "imu", "lidar"):
            path = getattr(cfg, name)
            if not path:
                if name in needed:
                    raise IngestionError(f"missing input: --{name} was not given")
            elif not os.path.exists(path):
                raise IngestionError(f"missing input --{name}: {path}", path)
        frames = sensorio.load_frames(cfg.frames, cfg.fps)
        imu = sensorio.load_imu(cfg.imu) if cfg.imu else None
        ranges = sensorio.load_ranges(cfg.lidar) if cfg.lidar and not cfg.compass_only else None
    return frames, imu, ranges


def run(cfg: PipelineConfig, truth=None) -> RunReport:
    """Execute the full pipeline and write every output into ``cfg.out``.

    ``report.json`` is written whatever happens; on failure it names the
    stage that raised and the outputs produced so far are left in place.
    """
    report = RunReport(config=cfg.to_dict())
    stages = _Stages(report)
    collector = _WarningCollector()
    pkg_log = logging.getLogger("thermal_ips")
    pkg_log.addHandler(collector)
    out = cfg.out or "."
    try:
        os.makedirs(out, exist_ok=True)
        with stages("config"):
            cfg.check()
        frames, imu, ranges = _load_inputs(cfg, stages)
        rec = reconstruct(frames, imu, ranges, cfg, dump_dir=out, stages=stages)
        summarise(rec, report)
        with stages("outputs"):
            write_outputs(rec, cfg, out, report, truth)
    except (IpsError, OSError, ValueError) as exc:
        report.status = "error"
        report.failed_stage = stages.current or "unknown"
        report.error = f"{type(exc).__name__}: {exc}"
        log.error("%s stage failed: %s", report.failed_stage, exc)
    finally:
        pkg_log.removeHandler(collector)
        report.warnings = collector.messages
        report.timing = {k: round(v, 6) for k, v in report.timing.items()}
        with open(os.path.join(out, "report.json"), "w") as fh:
            json.dump(asdict(report), fh, indent=2, default=_json_default)
            fh.write("\n")
    return report


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o).__name__)


def endpoint_error(path: Sequence[kinematics.PathPoint], truth: Sequence[kinematics.PathPoint]) -> float:
    return math.hypot(path[-1].x - truth[-1].x, path[-1].y - truth[-1].y)
