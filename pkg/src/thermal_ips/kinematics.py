"""Walking speed from the fitted range curves, and planar dead reckoning."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ParameterError
from .ranger import SvrModel, svr_predict

log = logging.getLogger(__name__)

DEFAULT_V_MAX = 3.0
DEFAULT_MEDIAN_WINDOW = 9
DEFAULT_GRID_DT = 1.0 / 30.0


@dataclass(frozen=True)
class VelocitySample:
    t: float
    v_raw: float
    v: float
    replaced: bool = False
    segment: int = 0


@dataclass(frozen=True)
class PathPoint:
    t: float
    x: float
    y: float
    theta: float


def differentiate_fit(models: Sequence[SvrModel], grid_dt: float = DEFAULT_GRID_DT) -> List[VelocitySample]:
    """Forward speed on a uniform time grid from the fitted range curves.

    Speed is ``-d'(t)``: closing on the facing wall is forward motion.
    Derivatives are central differences inside each segment and second-order
    one-sided differences at its ends.  Grid points not covered by any
    segment are skipped and logged as gaps.
    """
    if grid_dt <= 0:
        raise ParameterError("grid_dt must be positive")
    models = sorted(models, key=lambda m: m.start_t)
    if not models:
        return []
    t0 = models[0].start_t
    n = int(math.floor((models[-1].end_t - t0) / grid_dt + 1e-9)) + 1
    grid = t0 + grid_dt * np.arange(n)
    owner = np.full(n, -1)
    for k, m in enumerate(models):
        owner[(grid >= m.start_t - 1e-9) & (grid <= m.end_t + 1e-9) & (owner < 0)] = k

    out: List[VelocitySample] = []
    gap_start = None
    for i in range(n):
        if owner[i] < 0 and gap_start is None:
            gap_start = grid[i]
        elif owner[i] >= 0 and gap_start is not None:
            log.info("no range fit covers t=%.3f..%.3f s", gap_start, grid[i - 1])
            gap_start = None

    k = 0
    while k < n:
        if owner[k] < 0:
            k += 1
            continue
        j = k
        while j + 1 < n and owner[j + 1] == owner[k]:
            j += 1
        ts = grid[k : j + 1]
        m = models[owner[k]]
        if ts.size == 1:
            vel = np.array([-m.v0])
        else:
            d = svr_predict(m, ts)
            vel = -np.gradient(d, grid_dt, edge_order=2 if ts.size > 2 else 1)
        for tt, vv in zip(ts, vel):
            out.append(VelocitySample(t=float(tt), v_raw=float(vv), v=float(vv), segment=int(owner[k])))
        k = j + 1
    return out


def threshold_velocities(
    samples: Sequence[VelocitySample],
    v_max: float = DEFAULT_V_MAX,
    median_window: int = DEFAULT_MEDIAN_WINDOW,
) -> List[VelocitySample]:
    """Replace physically implausible speeds by a local median.

    A sample with ``|v_raw| > v_max`` takes the median of the in-threshold
    ``v_raw`` values within ``median_window`` samples of it (same segment);
    failing that, the median of the segment's in-threshold values; failing
    that, 0.
    """
    if v_max <= 0:
        raise ParameterError("v_max must be positive")
    if median_window < 3 or median_window % 2 != 1:
        raise ParameterError("median_window must be odd and >= 3")
    half = median_window // 2
    samples = list(samples)
    raw = np.array([s.v_raw for s in samples], dtype=float)
    seg = np.array([s.segment for s in samples], dtype=int)
    bad = np.abs(raw) > v_max
    out = []
    warned = set()
    for i, s in enumerate(samples):
        if not bad[i]:
            out.append(replace(s, v=s.v_raw, replaced=False))
            continue
        lo, hi = max(0, i - half), min(len(samples), i + half + 1)
        win = [raw[j] for j in range(lo, hi) if not bad[j] and seg[j] == seg[i]]
        if not win:
            win = raw[(seg == seg[i]) & ~bad].tolist()
        if win:
            value = float(np.median(win))
        else:
            value = 0.0
            if seg[i] not in warned:
                warned.add(seg[i])
                log.warning("segment %d has no in-threshold speeds; replacing with 0", seg[i])
        out.append(replace(s, v=value, replaced=True))
    return out


def dead_reckon(
    times,
    headings,
    speeds: Sequence[VelocitySample],
    origin: Tuple[float, float] = (0.0, 0.0),
) -> List[PathPoint]:
    """Integrate speed along heading on the heading time grid.

    Speeds are linearly interpolated onto ``times`` (zero outside their
    coverage).  Heading is in degrees, counter-clockwise from +x.
    """
    t = np.asarray(times, dtype=float)
    th = np.asarray(headings, dtype=float)
    if t.size == 0 or th.size == 0:
        return []
    if t.shape != th.shape:
        raise ParameterError("times and headings differ in length")
    if speeds:
        st = np.array([s.t for s in speeds])
        sv = np.array([s.v for s in speeds])
        v = np.interp(t, st, sv, left=0.0, right=0.0)
    else:
        v = np.zeros_like(t)
    rad = np.deg2rad(th)
    dt = np.diff(t)
    step = v[:-1] * dt
    x = origin[0] + np.concatenate([[0.0], np.cumsum(step * np.cos(rad[:-1]))])
    y = origin[1] + np.concatenate([[0.0], np.cumsum(step * np.sin(rad[:-1]))])
    return [PathPoint(float(a), float(b), float(c), float(d)) for a, b, c, d in zip(t, x, y, th)]


def path_length(path: Sequence[PathPoint]) -> float:
    xy = np.array([(p.x, p.y) for p in path]).reshape(-1, 2)
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if len(xy) > 1 else 0.0
