"""Dependency-free SVG rendering of reconstructed paths and compass traces."""
from __future__ import annotations

import math
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import RenderError

MAX_POINTS = 5000
WIDTH = 640
HEIGHT = 640
MARGIN = 60


def decimate(xy: np.ndarray, limit: int = MAX_POINTS) -> np.ndarray:
    """Keep at most ``limit`` evenly spaced points, always including both ends."""
    n = len(xy)
    if n <= limit:
        return xy
    idx = np.unique(np.rint(np.linspace(0, n - 1, limit)).astype(int))
    return xy[idx]


def _nice_step(span: float, target: int = 8) -> float:
    raw = max(span, 1e-9) / target
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


class _Canvas:
    """Maps data coordinates into a square plot box (equal axis scales)."""

    def __init__(self, xs, ys, width=WIDTH, height=HEIGHT, equal=True):
        x0, x1 = float(np.min(xs)), float(np.max(xs))
        y0, y1 = float(np.min(ys)), float(np.max(ys))
        if equal:
            span = max(x1 - x0, y1 - y0, 1.0)
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            x0, x1, y0, y1 = cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2
        else:
            if x1 - x0 < 1e-9:
                x0, x1 = x0 - 0.5, x1 + 0.5
            if y1 - y0 < 1e-9:
                y0, y1 = y0 - 0.5, y1 + 0.5
        pad_x, pad_y = 0.05 * (x1 - x0), 0.05 * (y1 - y0)
        self.x0, self.x1, self.y0, self.y1 = x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y
        self.w, self.h = width, height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        ]

    def px(self, x):
        return MARGIN + (np.asarray(x) - self.x0) / (self.x1 - self.x0) * (self.w - 2 * MARGIN)

    def py(self, y):
        return self.h - MARGIN - (np.asarray(y) - self.y0) / (self.y1 - self.y0) * (self.h - 2 * MARGIN)

    def grid(self, xlabel, ylabel):
        for axis, lo, hi in (("x", self.x0, self.x1), ("y", self.y0, self.y1)):
            step = _nice_step(hi - lo)
            v = math.ceil(lo / step) * step
            while v <= hi:
                if axis == "x":
                    p = float(self.px(v))
                    self.parts.append(f'<line x1="{p:.2f}" y1="{MARGIN}" x2="{p:.2f}" y2="{self.h - MARGIN}" stroke="#ddd"/>')
                    self.parts.append(f'<text x="{p:.2f}" y="{self.h - MARGIN + 16}" font-size="11" text-anchor="middle">{_fmt(v)}</text>')
                else:
                    p = float(self.py(v))
                    self.parts.append(f'<line x1="{MARGIN}" y1="{p:.2f}" x2="{self.w - MARGIN}" y2="{p:.2f}" stroke="#ddd"/>')
                    self.parts.append(f'<text x="{MARGIN - 6}" y="{p + 4:.2f}" font-size="11" text-anchor="end">{_fmt(v)}</text>')
                v += step
        self.parts.append(
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{self.w - 2 * MARGIN}" height="{self.h - 2 * MARGIN}" '
            'fill="none" stroke="black"/>'
        )
        self.parts.append(f'<text x="{self.w / 2}" y="{self.h - 18}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>')
        self.parts.append(
            f'<text x="18" y="{self.h / 2}" font-size="13" text-anchor="middle" '
            f'transform="rotate(-90 18 {self.h / 2})">{escape(ylabel)}</text>'
        )

    def polyline(self, x, y, colour, dashed=False, label=None):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.px(x), self.py(y)))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        title = f' data-label="{escape(label)}"' if label else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="2"{dash}{title}/>')

    def legend(self, entries):
        y = MARGIN + 16
        for label, colour, dashed in entries:
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            x = self.w - MARGIN - 150
            self.parts.append(f'<line x1="{x}" y1="{y}" x2="{x + 30}" y2="{y}" stroke="{colour}" stroke-width="2"{dash}/>')
            self.parts.append(f'<text x="{x + 36}" y="{y + 4}" font-size="12" class="legend">{escape(label)}</text>')
            y += 18

    def finish(self, title):
        self.parts.append(f'<text x="{self.w / 2}" y="24" font-size="15" text-anchor="middle">{escape(title)}</text>')
        self.parts.append("</svg>")
        return "\n".join(self.parts) + "\n"


def render_path_svg(path: Sequence, truth: Optional[Sequence] = None, title: str = "Reconstructed path") -> str:
    """Plan view of a reconstructed path (solid) and optional truth (dashed)."""
    if not path:
        raise RenderError("cannot render an empty path")
    xy = decimate(np.array([(p.x, p.y) for p in path], dtype=float))
    if not np.all(np.isfinite(xy)):
        raise RenderError("path contains non-finite coordinates")
    allxy = xy
    txy = None
    if truth:
        txy = decimate(np.array([(p.x, p.y) for p in truth], dtype=float))
        allxy = np.vstack([xy, txy])
    c = _Canvas(allxy[:, 0], allxy[:, 1])
    c.grid("x (m)", "y (m)")
    entries = [("estimate", "#1f4fd1", False)]
    if txy is not None:
        c.polyline(txy[:, 0], txy[:, 1], "#444444", dashed=True, label="truth")
        entries.append(("ground truth", "#444444", True))
    c.polyline(xy[:, 0], xy[:, 1], "#1f4fd1", label="estimate")
    c.legend(entries)
    return c.finish(title)


def render_compass_svg(samples: Sequence, title: str = "Heading") -> str:
    """Camera, gyro and fused heading against time."""
    if not samples:
        raise RenderError("cannot render an empty heading trace")
    t = np.array([s.t for s in samples], dtype=float)
    series = [
        ("camera", "#d1701f", np.array([s.theta_c for s in samples], dtype=float), True),
        ("gyro", "#2f9e44", np.array([s.theta_g for s in samples], dtype=float), True),
        ("fused", "#1f4fd1", np.array([s.theta_fused for s in samples], dtype=float), False),
    ]
    # a series with no data (gyro heading without an IMU log) is left out
    series = [s for s in series if np.all(np.isfinite(s[2]))]
    keep = decimate(np.arange(t.size)[:, None])[:, 0]
    ys = np.concatenate([v[keep] for _, _, v, _ in series])
    c = _Canvas(t[keep], ys, equal=False)
    c.grid("time (s)", "heading (deg)")
    for label, colour, values, dashed in series:
        c.polyline(t[keep], values[keep], colour, dashed=dashed, label=label)
    c.legend([(label, colour, dashed) for label, colour, _, dashed in series])
    return c.finish(title)
