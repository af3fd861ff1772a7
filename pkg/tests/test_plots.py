import re

import numpy as np
import pytest

from thermal_ips.compass import HeadingSample
from thermal_ips.errors import RenderError
from thermal_ips.kinematics import PathPoint
from thermal_ips.plots import MAX_POINTS, decimate, render_compass_svg, render_path_svg


def polylines(svg):
    return re.findall(r'<polyline points="([^"]*)"[^>]*?(data-label="([^"]*)")?/>', svg)


def parse_points(text):
    return np.array([tuple(map(float, p.split(","))) for p in text.split()])


def square(n_side=10):
    pts = []
    corners = [(0, 0), (10, 0), (10, 10), (0, 10), (0, 0)]
    for (x0, y0), (x1, y1) in zip(corners[:-1], corners[1:]):
        for s in np.linspace(0, 1, n_side, endpoint=False):
            pts.append((x0 + s * (x1 - x0), y0 + s * (y1 - y0)))
    pts.append((0, 0))
    return [PathPoint(float(i), x, y, 0.0) for i, (x, y) in enumerate(pts)]


def test_square_closed():
    svg = render_path_svg(square())
    (line,) = polylines(svg)
    pts = parse_points(line[0])
    assert np.allclose(pts[0], pts[-1])
    # equal axis scales: the square is drawn as a square
    w = pts[:, 0].max() - pts[:, 0].min()
    h = pts[:, 1].max() - pts[:, 1].min()
    assert w == pytest.approx(h, rel=1e-3)


def test_path_with_truth_legend():
    svg = render_path_svg(square(), truth=square(5))
    lines = polylines(svg)
    assert len(lines) == 2
    assert {ln[2] for ln in lines} == {"estimate", "truth"}
    assert "stroke-dasharray" in svg
    assert svg.count('class="legend"') == 2


def test_large_path_decimated():
    t = np.arange(10_000)
    path = [PathPoint(float(a), float(np.cos(a / 500) * a), float(np.sin(a / 500) * a), 0.0) for a in t]
    svg = render_path_svg(path)
    (line,) = polylines(svg)
    assert len(parse_points(line[0])) <= MAX_POINTS
    assert len(svg.encode()) < 2_000_000


def test_decimate_keeps_ends():
    xy = np.arange(20_000).reshape(-1, 2)
    out = decimate(xy, 100)
    assert len(out) == 100 and (out[0] == xy[0]).all() and (out[-1] == xy[-1]).all()


def test_empty_path():
    with pytest.raises(RenderError):
        render_path_svg([])


def test_compass_svg():
    samples = [HeadingSample(k, k / 30, 0.5, k * 0.5, k * 0.4, k * 0.44, 10) for k in range(90)]
    svg = render_compass_svg(samples)
    assert {ln[2] for ln in polylines(svg)} == {"camera", "gyro", "fused"}
    with pytest.raises(RenderError):
        render_compass_svg([])


def test_compass_svg_without_gyro():
    nan = float("nan")
    samples = [HeadingSample(k, k / 30, 0.5, k * 0.5, nan, k * 0.5, 10) for k in range(30)]
    svg = render_compass_svg(samples)
    assert {ln[2] for ln in polylines(svg)} == {"camera", "fused"}
