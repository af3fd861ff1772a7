"""Loading and validation of frame sequences, IMU logs and LIDAR logs.

File formats
------------
Frames
    Directory of binary PGM (P5) files named ``frame_%06d.pgm`` plus a sidecar
    ``frames.times`` whose lines are ``index,seconds``.  When the sidecar is
    absent, a uniform frame rate may be supplied instead.
IMU log
    Text, one sample per line: ``t,gx,gy,gz,ax,ay,az`` (seconds, deg/s x3,
    m/s^2 x3).  ``gz`` is the yaw rate about the vertical axis, positive
    counter-clockwise.  ``ax`` is the forward body axis.
LIDAR log
    Text, ``t,distance_m`` per line.

Both text logs accept an optional header line and skip ``#`` comments.
Gyro and camera timestamps are assumed to share one time base.
"""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import AlignmentError, FormatError, IngestionError, ParseError

FRAME_PATTERN = "frame_%06d.pgm"
TIMES_FILE = "frames.times"
MIN_FRAME_SIZE = 16

_FRAME_RE = re.compile(r"^frame_(\d+)\.pgm$")


@dataclass(frozen=True)
class Frame:
    """Timestamped grayscale raster, intensities 0..255 stored row-major."""

    index: int
    t: float
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise FormatError(f"frame {self.index}: expected a 2-D raster, got shape {px.shape}")
        if px.shape[0] < MIN_FRAME_SIZE or px.shape[1] < MIN_FRAME_SIZE:
            raise FormatError(
                f"frame {self.index}: {px.shape[1]}x{px.shape[0]} is below the "
                f"{MIN_FRAME_SIZE}x{MIN_FRAME_SIZE} minimum"
            )
        if px.flags.writeable:
            px = px.copy()
            px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro_z: float
    accel: tuple
    gyro: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RangeSample:
    t: float
    distance: float


class ImuLog(Sequence):
    """Column-oriented IMU log; indexing yields :class:`ImuSample`."""

    def __init__(self, t, gyro, accel):
        self.t = _frozen(np.asarray(t, dtype=float).reshape(-1))
        self.gyro = _frozen(np.asarray(gyro, dtype=float).reshape(-1, 3))
        self.accel = _frozen(np.asarray(accel, dtype=float).reshape(-1, 3))
        if not (len(self.t) == len(self.gyro) == len(self.accel)):
            raise FormatError("IMU columns have different lengths")

    @property
    def gyro_z(self) -> np.ndarray:
        return self.gyro[:, 2]

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ImuLog(self.t[i], self.gyro[i], self.accel[i])
        return ImuSample(
            t=float(self.t[i]),
            gyro_z=float(self.gyro[i, 2]),
            accel=tuple(float(a) for a in self.accel[i]),
            gyro=tuple(float(g) for g in self.gyro[i]),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> "ImuLog":
        if isinstance(samples, ImuLog):
            return samples
        t = [s.t for s in samples]
        gyro = [(s.gyro[0], s.gyro[1], s.gyro_z) for s in samples]
        accel = [tuple(s.accel) for s in samples]
        return cls(t, np.reshape(gyro, (-1, 3)), np.reshape(accel, (-1, 3)))


class RangeLog(Sequence):
    """Column-oriented LIDAR log; indexing yields :class:`RangeSample`."""

    def __init__(self, t, distance):
        self.t = _frozen(np.asarray(t, dtype=float).reshape(-1))
        self.distance = _frozen(np.asarray(distance, dtype=float).reshape(-1))
        if len(self.t) != len(self.distance):
            raise FormatError("LIDAR columns have different lengths")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return RangeLog(self.t[i], self.distance[i])
        return RangeSample(float(self.t[i]), float(self.distance[i]))

    def __iter__(self) -> Iterator[RangeSample]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_samples(cls, samples: Sequence[RangeSample]) -> "RangeLog":
        if isinstance(samples, RangeLog):
            return samples
        return cls([s.t for s in samples], [s.distance for s in samples])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# PGM


def read_pgm(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IngestionError(f"cannot read frame file {path}: {exc}", path) from exc

    tokens = []
    pos = 0
    # magic, width, height, maxval; comments may appear between tokens
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise IngestionError(f"truncated PGM header in {path}", path)
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster

    if tokens[0] != b"P5":
        raise IngestionError(f"{path} is not a binary PGM (P5) file", path)
    try:
        width, height, maxval = (int(tok) for tok in tokens[1:])
    except ValueError as exc:
        raise IngestionError(f"bad PGM header in {path}", path) from exc
    if not 0 < maxval < 256:
        raise IngestionError(f"{path}: only 8-bit PGM is supported (maxval {maxval})", path)
    if len(data) - pos < width * height:
        raise IngestionError(f"truncated PGM raster in {path}", path)
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return raster.reshape(height, width).copy()


def write_pgm(path: str, pixels: np.ndarray) -> None:
    px = np.asarray(pixels)
    if px.dtype != np.uint8:
        px = np.clip(np.rint(px), 0, 255).astype(np.uint8)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(px).tobytes())


# ---------------------------------------------------------------------------
# loaders


def load_frames(directory: str, fps: Optional[float] = None) -> List[Frame]:
    """Load a numbered PGM sequence with its timing sidecar.

    Args:
        directory: folder holding ``frame_%06d.pgm`` files.
        fps: uniform frame rate used only when ``frames.times`` is absent.

    Returns:
        Frames in index order.
    """
    if not os.path.isdir(directory):
        raise IngestionError(f"frame directory {directory} does not exist", directory)
    indices = sorted(
        int(m.group(1)) for m in (_FRAME_RE.match(name) for name in os.listdir(directory)) if m
    )
    times_path = os.path.join(directory, TIMES_FILE)
    if os.path.exists(times_path):
        times = _read_times(times_path)
    elif fps is not None:
        if fps <= 0:
            raise FormatError(f"frame rate must be positive, got {fps}")
        times = {i: i / fps for i in indices}
    else:
        raise IngestionError(
            f"timing sidecar {times_path} is missing; supply a uniform frame rate", times_path
        )

    frames = []
    shape = None
    for i in indices:
        path = os.path.join(directory, FRAME_PATTERN % i)
        if i not in times:
            raise FormatError(f"no timestamp for frame {i} in {TIMES_FILE}")
        px = read_pgm(path)
        if shape is None:
            shape = px.shape
        elif px.shape != shape:
            raise FormatError(
                f"{path}: size {px.shape[1]}x{px.shape[0]} differs from "
                f"sequence size {shape[1]}x{shape[0]}"
            )
        if frames and times[i] <= frames[-1].t:
            raise FormatError(
                f"frame {i}: timestamp {times[i]} is not after frame {frames[-1].index} ({frames[-1].t})"
            )
        frames.append(Frame(index=i, t=times[i], pixels=px))
    return frames


def _read_times(path: str) -> dict:
    times = {}
    for lineno, fields in _rows(path):
        if len(fields) != 2:
            raise ParseError(f"{path}: expected 'index,seconds'", lineno)
        try:
            idx, t = int(fields[0]), float(fields[1])
        except ValueError:
            raise ParseError(f"{path}: cannot parse {','.join(fields)!r}", lineno) from None
        if not math.isfinite(t):
            raise ParseError(f"{path}: non-finite timestamp", lineno)
        times[idx] = t
    return times


def write_frames(directory: str, frames: Sequence[Frame]) -> None:
    os.makedirs(directory, exist_ok=True)
    lines = []
    for f in frames:
        write_pgm(os.path.join(directory, FRAME_PATTERN % f.index), f.pixels)
        lines.append(f"{f.index},{float(f.t)!r}\n")
    with open(os.path.join(directory, TIMES_FILE), "w") as fh:
        fh.writelines(lines)


def _rows(path: str):
    """Yield ``(line_number, fields)`` for data rows; skips comments and a header."""
    try:
        fh = open(path)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}", path) from exc
    with fh:
        first = True
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            if first:
                first = False
                if not _looks_numeric(fields[0]):
                    continue  # header
            yield lineno, fields


def _looks_numeric(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return s.lower() in ("nan", "inf", "-inf", "+inf")
    return True


def _parse_floats(path, lineno, fields, n):
    if len(fields) != n:
        raise ParseError(f"{path}: expected {n} fields, found {len(fields)}", lineno)
    try:
        values = [float(f) for f in fields]
    except ValueError:
        raise ParseError(f"{path}: cannot parse {','.join(fields)!r}", lineno) from None
    if not all(math.isfinite(v) for v in values):
        raise ParseError(f"{path}: non-finite value", lineno)
    return values


def load_imu(path: str) -> ImuLog:
    rows = []
    last_t = -math.inf
    for lineno, fields in _rows(path):
        values = _parse_floats(path, lineno, fields, 7)
        if values[0] <= last_t:
            raise FormatError(f"{path}: line {lineno}: timestamp {values[0]} is not increasing")
        last_t = values[0]
        rows.append(values)
    data = np.array(rows, dtype=float).reshape(-1, 7)
    return ImuLog(data[:, 0], data[:, 1:4], data[:, 4:7])


def load_ranges(path: str) -> RangeLog:
    rows = []
    last_t = -math.inf
    for lineno, fields in _rows(path):
        t, d = _parse_floats(path, lineno, fields, 2)
        if d < 0:
            raise ParseError(f"{path}: negative distance {d}", lineno)
        if t <= last_t:
            raise FormatError(f"{path}: line {lineno}: timestamp {t} is not increasing")
        last_t = t
        rows.append((t, d))
    data = np.array(rows, dtype=float).reshape(-1, 2)
    return RangeLog(data[:, 0], data[:, 1])


def write_imu(path: str, imu: ImuLog) -> None:
    with open(path, "w") as fh:
        fh.write("t,gx,gy,gz,ax,ay,az\n")
        for t, g, a in zip(imu.t.tolist(), imu.gyro.tolist(), imu.accel.tolist()):
            fh.write(",".join(repr(v) for v in (t, *g, *a)) + "\n")


def write_ranges(path: str, ranges: RangeLog) -> None:
    with open(path, "w") as fh:
        fh.write("t,distance_m\n")
        for t, d in zip(ranges.t.tolist(), ranges.distance.tolist()):
            fh.write(f"{t!r},{d!r}\n")


# ---------------------------------------------------------------------------
# alignment


def sample_gyro_heading(imu, frame_times) -> np.ndarray:
    """Integrate yaw rate (trapezoid) and sample it at ``frame_times``.

    The returned headings are in degrees and relative to the first frame time.
    """
    imu = ImuLog.from_samples(imu)
    if len(imu) == 0:
        raise AlignmentError("IMU log is empty")
    frame_times = np.asarray(frame_times, dtype=float)
    if frame_times.size == 0:
        return np.zeros(0)
    step = float(np.median(np.diff(imu.t))) if len(imu) > 1 else 0.0
    lo, hi = imu.t[0] - step, imu.t[-1] + step
    bad = (frame_times < lo - 1e-12) | (frame_times > hi + 1e-12)
    if bad.any():
        t_bad = frame_times[bad][0]
        raise AlignmentError(
            f"frame time {t_bad:.6f} s is outside IMU coverage [{imu.t[0]:.6f}, {imu.t[-1]:.6f}] s"
        )
    heading = cumulative_trapezoid(imu.gyro_z, imu.t, initial=0.0) if len(imu) > 1 else np.zeros(1)
    at_frames = np.interp(frame_times, imu.t, heading)
    return at_frames - at_frames[0]
