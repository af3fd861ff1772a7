"""Synthetic scenarios with ground truth: panning sequences and corridor walks.

The camera looks at a cylindrical panorama of band-limited noise whose
horizontal period equals a full turn, so any heading maps to an exact
sub-pixel viewport offset (rendered by Fourier phase shift, no
interpolation).  A positive (counter-clockwise) heading change moves scene
content to the right in the image.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from collections.abc import Sequence
from typing import List, Optional, Tuple

import numpy as np
from scipy import fft as sfft

from .compass import CameraModel
from .errors import ParameterError
from .sensorio import Frame, ImuLog, RangeLog, write_frames, write_imu, write_ranges

log = logging.getLogger(__name__)

MAX_SHIFT_PX = 4.0
TEXTURE_SIGMA = 6.0
TEXTURE_STD = 60.0
GRAVITY = 9.81


class Panorama:
    """Periodic band-limited texture covering at least 360 degrees of view.

    The period is rounded up to an FFT-friendly length; heading-to-shift
    conversion always uses the camera's exact ``Nx / beta`` pixels per degree.
    """

    def __init__(self, seed: int, cam: CameraModel, height: int = 240,
                 sigma: float = TEXTURE_SIGMA, std: float = TEXTURE_STD, mean: float = 128.0):
        self.cam = cam
        self.height = height
        self.px_per_deg = cam.nx / cam.beta
        self.period = sfft.next_fast_len(int(math.ceil(360.0 * self.px_per_deg)), real=True)
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((height, self.period))
        fy = np.fft.fftfreq(height)[:, None]
        fx = np.fft.rfftfreq(self.period)[None, :]
        gain = np.exp(-2.0 * (math.pi * sigma) ** 2 * (fx**2 + fy**2))
        spec = np.fft.rfft2(noise) * gain
        tex = np.fft.irfft2(spec, s=(height, self.period))
        tex = (tex - tex.mean()) / tex.std()
        self.mean = mean
        self.std = std
        self._rows = sfft.rfft(tex, axis=1)
        self._freq = sfft.rfftfreq(self.period)
        self._cache = (None, None)

    def render(self, heading_deg: float, std: Optional[float] = None) -> np.ndarray:
        """Float image of the viewport at ``heading_deg`` (before noise/quantisation)."""
        if self._cache[0] != heading_deg:
            shift = heading_deg * self.px_per_deg
            phase = np.exp(-2j * math.pi * self._freq * shift)
            row = sfft.irfft(self._rows * phase, n=self.period, axis=1)
            start = (self.period - self.cam.nx) // 2
            self._cache = (heading_deg, row[:, start : start + self.cam.nx].copy())
        view = self._cache[1]
        return self.mean + (self.std if std is None else std) * view


def quantise(img: np.ndarray, rng: Optional[np.random.Generator] = None, noise: float = 0.0) -> np.ndarray:
    if noise > 0:
        img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def gen_pan(
    texture_seed: int,
    total_rotation: float,
    frames: int,
    cam: Optional[CameraModel] = None,
    *,
    fps: float = 30.0,
    height: int = 240,
    pixel_noise: float = 0.0,
    texture_scale: float = 1.0,
    noise_seed: Optional[int] = None,
) -> Tuple[List[Frame], np.ndarray]:
    """Constant-rate pan; returns ``(frames, truth_headings_deg)``.

    The heading advances by ``total_rotation / frames`` between consecutive
    frames.  ``texture_scale`` multiplies texture contrast (1/10 gives the
    low-texture degradation case).
    """
    cam = cam or CameraModel()
    if frames < 2:
        raise ParameterError("a pan needs at least 2 frames")
    step_deg = total_rotation / frames
    shift = abs(step_deg) * cam.nx / cam.beta
    if shift > MAX_SHIFT_PX:
        raise ParameterError(
            f"per-frame shift {shift:.3f} px exceeds the {MAX_SHIFT_PX} px tracking range; "
            f"use at least {math.ceil(abs(total_rotation) * cam.nx / cam.beta / MAX_SHIFT_PX)} frames"
        )
    pano = Panorama(texture_seed, cam, height)
    rng = np.random.default_rng(texture_seed + 1 if noise_seed is None else noise_seed)
    truth = step_deg * np.arange(frames)
    out = []
    for k, heading in enumerate(truth):
        img = pano.render(heading, std=pano.std * texture_scale)
        out.append(Frame(index=k, t=k / fps, pixels=quantise(img, rng, pixel_noise)))
    return out, truth


# ---------------------------------------------------------------------------
# corridor walks


@dataclass(frozen=True)
class NoiseModel:
    pixel: float = 0.0  # grey levels, per pixel per frame
    gyro_bias: float = 0.0  # deg/s, constant
    gyro_noise: float = 0.0  # deg/s, white, per IMU sample
    lidar: float = 0.0  # metres
    outlier_rate: float = 0.0  # fraction of LIDAR samples pushed +OUTLIER_M

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value >= 0:
                raise ParameterError(f"noise.{name} must be >= 0, got {value}")
        if self.outlier_rate > 1:
            raise ParameterError("noise.outlier_rate must be <= 1")


ZERO_NOISE = NoiseModel()
CALIBRATED_NOISE = NoiseModel(pixel=2.0, gyro_bias=0.1, gyro_noise=0.5, lidar=0.05, outlier_rate=0.05)
OUTLIER_M = 10.0
MIN_LEG_M = 1.0


@dataclass(frozen=True)
class Scenario:
    """A walk through straight corridor legs joined by turns on the spot.

    The walker stands for ``pause`` seconds at both ends, walks each leg at
    ``speed`` and turns at ``turn_rate`` deg/s at every interior waypoint.
    The LIDAR faces forward and sees a wall ``wall_margin`` metres beyond
    the end of the current leg.
    """

    waypoints: Tuple[Tuple[float, float], ...]
    speed: float = 1.25
    fps: float = 30.0
    camera: CameraModel = field(default_factory=CameraModel)
    noise: NoiseModel = ZERO_NOISE
    turn_rate: float = 15.0
    wall_margin: float = 1.0
    pause: float = 1.0
    imu_rate: float = 100.0
    lidar_rate: float = 60.0
    height: int = 240
    seed: int = 0

    def __post_init__(self):
        wps = tuple((float(x), float(y)) for x, y in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        if len(wps) < 2:
            raise ParameterError("a scenario needs at least 2 waypoints")
        for name in ("speed", "fps", "turn_rate", "imu_rate", "lidar_rate"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.wall_margin < 0 or self.pause < 0:
            raise ParameterError("wall_margin and pause must be >= 0")
        for a, b in zip(wps[:-1], wps[1:]):
            if math.dist(a, b) < MIN_LEG_M:
                raise ParameterError(f"leg {a} -> {b} is shorter than {MIN_LEG_M} m")
        shift = self.turn_rate / self.fps / self.camera.rx
        if shift > MAX_SHIFT_PX:
            raise ParameterError(
                f"turn rate {self.turn_rate} deg/s moves the image {shift:.2f} px/frame "
                f"(limit {MAX_SHIFT_PX})"
            )

    @property
    def path_length(self) -> float:
        return sum(math.dist(a, b) for a, b in zip(self.waypoints[:-1], self.waypoints[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["waypoints"] = [list(p) for p in self.waypoints]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if "camera" in d and isinstance(d["camera"], dict):
            d["camera"] = CameraModel(**d["camera"])
        if "noise" in d:
            noise = d["noise"]
            if noise == "calibrated":
                d["noise"] = CALIBRATED_NOISE
            elif isinstance(noise, dict):
                d["noise"] = NoiseModel(**noise)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def save_scenario(path: str, scenario: Scenario) -> None:
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class _Phase:
    kind: str  # "stand", "leg" or "turn"
    t0: float
    t1: float
    pos: Tuple[float, float]
    heading: float  # unwrapped heading at t0, degrees CCW from +x
    rate: float = 0.0  # deg/s while turning
    direction: Tuple[float, float] = (0.0, 0.0)
    dist_before: float = 0.0  # range reading in the first half (whole phase for legs: at t0)
    dist_after: float = 0.0


class Timeline:
    """Piecewise ground-truth motion of a scenario."""

    def __init__(self, sc: Scenario):
        self.scenario = sc
        wps = [np.array(p) for p in sc.waypoints]
        legs = [b - a for a, b in zip(wps[:-1], wps[1:])]
        lengths = [float(np.hypot(*leg)) for leg in legs]
        dirs = [math.degrees(math.atan2(leg[1], leg[0])) for leg in legs]
        m = sc.wall_margin
        phases: List[_Phase] = []
        t = 0.0
        heading = dirs[0]
        phases.append(_Phase("stand", t, t + sc.pause, tuple(wps[0]), heading,
                             dist_before=lengths[0] + m, dist_after=lengths[0] + m))
        t += sc.pause
        self.turn_times: List[float] = []
        for i, (leg, length) in enumerate(zip(legs, lengths)):
            dur = length / sc.speed
            phases.append(_Phase("leg", t, t + dur, tuple(wps[i]), heading,
                                 direction=tuple(leg / length), dist_before=length + m))
            t += dur
            if i + 1 < len(legs):
                delta = (dirs[i + 1] - dirs[i] + 180.0) % 360.0 - 180.0
                dur = abs(delta) / sc.turn_rate
                phases.append(_Phase("turn", t, t + dur, tuple(wps[i + 1]), heading,
                                     rate=math.copysign(sc.turn_rate, delta),
                                     dist_before=m, dist_after=lengths[i + 1] + m))
                self.turn_times.append(t + 0.5 * dur)
                heading += delta
                t += dur
        phases.append(_Phase("stand", t, t + sc.pause, tuple(wps[-1]), heading, dist_before=m, dist_after=m))
        t += sc.pause
        self.phases = phases
        self.duration = t
        self.initial_heading = dirs[0]

    def _index(self, t: np.ndarray) -> np.ndarray:
        starts = np.array([p.t0 for p in self.phases])
        return np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(self.phases) - 1)

    def state(self, t):
        """Return ``(x, y, heading_deg, yaw_rate_deg_s, forward_distance_m)`` at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = self._index(t)
        x, y, th, rate, dist = (np.zeros_like(t) for _ in range(5))
        for k, p in enumerate(self.phases):
            sel = idx == k
            if not sel.any():
                continue
            tau = np.clip(t[sel] - p.t0, 0.0, p.t1 - p.t0)
            x[sel], y[sel], th[sel] = p.pos[0], p.pos[1], p.heading
            if p.kind == "leg":
                s = self.scenario.speed * tau
                x[sel] += p.direction[0] * s
                y[sel] += p.direction[1] * s
                dist[sel] = p.dist_before - s
            elif p.kind == "turn":
                th[sel] += p.rate * tau
                rate[sel] = p.rate
                dist[sel] = np.where(tau < 0.5 * (p.t1 - p.t0), p.dist_before, p.dist_after)
            else:
                dist[sel] = p.dist_before
        return x, y, th, rate, dist


class WalkFrames(Sequence):
    """Lazily rendered camera frames of a walk (bit-identical on every access)."""

    def __init__(self, sc: Scenario, timeline: Timeline):
        self._sc = sc
        n = int(math.floor(timeline.duration * sc.fps + 1e-9)) + 1
        self.times = np.arange(n) / sc.fps
        _, _, th, _, _ = timeline.state(self.times)
        self.camera_heading = th - timeline.initial_heading
        self._pano = Panorama(sc.seed, sc.camera, sc.height)

    def __len__(self):
        return self.times.size

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        rng = np.random.default_rng([self._sc.seed, 1, k])
        img = self._pano.render(float(self.camera_heading[k]))
        return Frame(index=k, t=float(self.times[k]), pixels=quantise(img, rng, self._sc.noise.pixel))


@dataclass
class WalkData:
    scenario: Scenario
    frames: WalkFrames
    imu: ImuLog
    ranges: RangeLog
    truth: list  # PathPoint per frame, world frame
    initial_heading: float
    turn_times: List[float]


def gen_walk(sc: Scenario) -> WalkData:
    """Simulate camera, IMU and LIDAR for a scenario, with ground truth."""
    from .kinematics import PathPoint

    tl = Timeline(sc)
    noise = sc.noise
    # IMU: yaw rate with constant bias and white noise; level, unaccelerated body
    imu_rng = np.random.default_rng([sc.seed, 2])
    n_imu = int(math.floor(tl.duration * sc.imu_rate + 1e-9)) + 1
    t_imu = np.arange(n_imu) / sc.imu_rate
    if t_imu[-1] < tl.duration:
        t_imu = np.append(t_imu, tl.duration)
    _, _, _, rate, _ = tl.state(t_imu)
    gyro = imu_rng.normal(0.0, noise.gyro_noise, (t_imu.size, 3)) if noise.gyro_noise > 0 else np.zeros((t_imu.size, 3))
    gyro[:, 2] += rate + noise.gyro_bias
    accel = np.zeros((t_imu.size, 3))
    accel[:, 2] = GRAVITY
    imu = ImuLog(t_imu, gyro, accel)

    # LIDAR: jittered sampling around the nominal rate, gaussian noise and far outliers
    lid_rng = np.random.default_rng([sc.seed, 3])
    mean_dt = 1.0 / sc.lidar_rate
    steps = lid_rng.uniform(0.8 * mean_dt, 1.2 * mean_dt, int(tl.duration / (0.8 * mean_dt)) + 2)
    t_lid = np.concatenate([[0.0], np.cumsum(steps)])
    t_lid = t_lid[t_lid <= tl.duration]
    _, _, _, _, dist = tl.state(t_lid)
    if noise.lidar > 0:
        dist = dist + lid_rng.normal(0.0, noise.lidar, dist.size)
    if noise.outlier_rate > 0:
        dist = dist + OUTLIER_M * (lid_rng.random(dist.size) < noise.outlier_rate)
    ranges = RangeLog(t_lid, np.maximum(dist, 0.0))

    frames = WalkFrames(sc, tl)
    x, y, th, _, _ = tl.state(frames.times)
    truth = [PathPoint(float(a), float(b), float(c), float(d)) for a, b, c, d in zip(frames.times, x, y, th)]
    return WalkData(sc, frames, imu, ranges, truth, tl.initial_heading, tl.turn_times)


WALK_FILES = {
    "frames": "frames",
    "imu": "imu.csv",
    "lidar": "lidar.csv",
    "truth": "truth.csv",
    "scenario": "scenario.json",
}


def write_walk(directory: str, data: WalkData) -> dict:
    """Write a generated walk in the loader formats; returns the file paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {k: os.path.join(directory, v) for k, v in WALK_FILES.items()}
    write_frames(paths["frames"], data.frames)
    write_imu(paths["imu"], data.imu)
    write_ranges(paths["lidar"], data.ranges)
    with open(paths["truth"], "w") as fh:
        fh.write("t,x,y,theta\n")
        for p in data.truth:
            fh.write(",".join(repr(float(v)) for v in (p.t, p.x, p.y, p.theta)) + "\n")
    save_scenario(paths["scenario"], data.scenario)
    return paths


def load_truth(path: str):
    from .kinematics import PathPoint

    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [PathPoint(*map(float, row)) for row in data]


def write_pan(directory: str, frames: Sequence[Frame], truth) -> None:
    write_frames(os.path.join(directory, WALK_FILES["frames"]), frames)
    with open(os.path.join(directory, "truth.csv"), "w") as fh:
        fh.write("frame,t,heading\n")
        for f, h in zip(frames, truth):
            fh.write(f"{f.index},{float(f.t)!r},{float(h)!r}\n")
