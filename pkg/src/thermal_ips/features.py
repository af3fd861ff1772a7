"""Difference-of-Gaussians keypoint detection.

Only keypoint positions are produced; orientation assignment and descriptors
are not needed because correspondence comes from optical flow.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ParameterError

DEFAULT_OCTAVES = 4
DEFAULT_SCALES = 3
DEFAULT_SIGMA = 1.6
DEFAULT_CONTRAST = 0.03
DEFAULT_EDGE_RATIO = 10.0
DEFAULT_MAX_KEYPOINTS = 400

_BORDER = 3
_MAX_REFINE_STEPS = 5
_TRUNCATE = 3.5


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    octave: int
    scale: int
    response: float


@dataclass
class ScaleSpace:
    """Gaussian and DoG pyramids.

    ``gaussians[o]`` has ``scales_per_octave + 3`` levels and ``dog[o]`` has
    ``scales_per_octave + 2``; level ``i`` of every octave carries blur
    ``base_sigma * 2**(i / scales_per_octave)`` in that octave's pixel units.
    """

    octaves: int
    scales_per_octave: int
    base_sigma: float
    width: int
    height: int
    gaussians: List[np.ndarray]
    dog: List[np.ndarray]

    def level_sigma(self, level: int) -> float:
        return self.base_sigma * 2.0 ** (level / self.scales_per_octave)

    def octave_shape(self, octave: int):
        return self.dog[octave].shape[1:]


def _as_unit_image(frame) -> np.ndarray:
    pixels = np.asarray(getattr(frame, "pixels", frame), dtype=np.float32)
    return pixels / np.float32(255.0)


def build_scale_space(
    frame,
    octaves: int = DEFAULT_OCTAVES,
    scales_per_octave: int = DEFAULT_SCALES,
    base_sigma: float = DEFAULT_SIGMA,
) -> ScaleSpace:
    img = _as_unit_image(frame)
    h, w = img.shape
    if octaves < 1 or scales_per_octave < 3:
        raise ParameterError("need octaves >= 1 and scales_per_octave >= 3")
    if base_sigma <= 0:
        raise ParameterError("base_sigma must be positive")
    if min(h, w) < 2**octaves * 8:
        raise ParameterError(
            f"{w}x{h} image is too small for {octaves} octaves "
            f"(needs min dimension >= {2**octaves * 8})"
        )

    s = scales_per_octave
    sigmas = [base_sigma * 2.0 ** (i / s) for i in range(s + 3)]
    increments = [np.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2) for i in range(1, s + 3)]

    gaussians, dogs = [], []
    base = gaussian_filter(img, sigmas[0], mode="nearest", truncate=_TRUNCATE)
    for _ in range(octaves):
        levels = [base]
        for inc in increments:
            levels.append(gaussian_filter(levels[-1], inc, mode="nearest", truncate=_TRUNCATE))
        stack = np.stack(levels)
        gaussians.append(stack)
        dogs.append(stack[1:] - stack[:-1])
        # level s has twice the base blur; decimating it restarts the octave at base_sigma
        base = stack[s, ::2, ::2]
    return ScaleSpace(octaves, s, base_sigma, w, h, gaussians, dogs)


def _neighbourhood_extrema(D: np.ndarray, pre: float) -> np.ndarray:
    """Mask of samples that are >= (<=) all 26 neighbours and beyond +-pre.

    Only interior levels and rows/columns at least ``_BORDER`` from the edge
    can be flagged.
    """
    # separable 3x3 spatial max/min per level, then across adjacent levels
    def spatial(op, a):
        r = a.copy()
        op(r[:, 1:], a[:, :-1], out=r[:, 1:])
        op(r[:, :-1], a[:, 1:], out=r[:, :-1])
        c = r.copy()
        op(c[:, :, 1:], r[:, :, :-1], out=c[:, :, 1:])
        op(c[:, :, :-1], r[:, :, 1:], out=c[:, :, :-1])
        return c

    mx = spatial(np.maximum, D)
    mn = spatial(np.minimum, D)
    mx3 = np.maximum(np.maximum(mx[:-2], mx[1:-1]), mx[2:])
    mn3 = np.minimum(np.minimum(mn[:-2], mn[1:-1]), mn[2:])
    core = D[1:-1]
    cand = np.zeros(D.shape, dtype=bool)
    cand[1:-1] = ((core >= mx3) & (core > pre)) | ((core <= mn3) & (core < -pre))
    cand[:, :_BORDER] = cand[:, -_BORDER:] = False
    cand[:, :, :_BORDER] = cand[:, :, -_BORDER:] = False
    return cand


def _derivatives(D, l, r, c):
    v = D[l, r, c]
    dx = 0.5 * (D[l, r, c + 1] - D[l, r, c - 1])
    dy = 0.5 * (D[l, r + 1, c] - D[l, r - 1, c])
    ds = 0.5 * (D[l + 1, r, c] - D[l - 1, r, c])
    dxx = D[l, r, c + 1] + D[l, r, c - 1] - 2 * v
    dyy = D[l, r + 1, c] + D[l, r - 1, c] - 2 * v
    dss = D[l + 1, r, c] + D[l - 1, r, c] - 2 * v
    dxy = 0.25 * (D[l, r + 1, c + 1] - D[l, r + 1, c - 1] - D[l, r - 1, c + 1] + D[l, r - 1, c - 1])
    dxs = 0.25 * (D[l + 1, r, c + 1] - D[l + 1, r, c - 1] - D[l - 1, r, c + 1] + D[l - 1, r, c - 1])
    dys = 0.25 * (D[l + 1, r + 1, c] - D[l + 1, r - 1, c] - D[l - 1, r + 1, c] + D[l - 1, r - 1, c])
    grad = np.stack([dx, dy, ds], axis=-1).astype(np.float64)
    hess = np.stack(
        [
            np.stack([dxx, dxy, dxs], axis=-1),
            np.stack([dxy, dyy, dys], axis=-1),
            np.stack([dxs, dys, dss], axis=-1),
        ],
        axis=-2,
    ).astype(np.float64)
    return v.astype(np.float64), grad, hess


def _refine(D, l, r, c):
    """Quadratic sub-pixel/sub-scale refinement of integer extrema.

    Returns the converged subset as (l, r, c, offset, value, hessian).
    """
    L, H, W = D.shape
    out = []
    for _ in range(_MAX_REFINE_STEPS):
        if l.size == 0:
            break
        v, g, hs = _derivatives(D, l, r, c)
        det = np.linalg.det(hs)
        ok = np.abs(det) > 1e-18
        off = np.zeros_like(g)
        off[ok] = -np.linalg.solve(hs[ok], g[ok][..., None])[..., 0]
        done = ok & np.all(np.abs(off) < 0.5, axis=1)
        if done.any():
            out.append((l[done], r[done], c[done], off[done], v[done] + 0.5 * np.sum(g[done] * off[done], axis=1), hs[done]))
        move = ok & ~done & np.all(np.isfinite(off), axis=1)
        step = np.rint(off[move]).astype(int)
        l, r, c = l[move] + step[:, 2], r[move] + step[:, 1], c[move] + step[:, 0]
        inside = (l >= 1) & (l <= L - 2) & (r >= _BORDER) & (r < H - _BORDER) & (c >= _BORDER) & (c < W - _BORDER)
        l, r, c = l[inside], r[inside], c[inside]
    if not out:
        empty = np.zeros(0, dtype=int)
        return empty, empty, empty, np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3, 3))
    return tuple(np.concatenate(parts) for parts in zip(*out))


def detect_keypoints(
    space: ScaleSpace,
    contrast_thresh: float = DEFAULT_CONTRAST,
    edge_ratio: float = DEFAULT_EDGE_RATIO,
    max_keypoints: int = DEFAULT_MAX_KEYPOINTS,
) -> List[Keypoint]:
    """Find scale-space extrema of the DoG stack.

    Candidates are 3x3x3 extrema; each is refined by a quadratic fit, then
    rejected when the interpolated contrast falls below ``contrast_thresh``
    or the principal-curvature ratio marks it as an edge response.  The
    strongest ``max_keypoints`` survive.
    """
    edge_limit = (edge_ratio + 1.0) ** 2 / edge_ratio
    pre = 0.5 * contrast_thresh
    xs, ys, octs, scs, resp = [], [], [], [], []
    for o, D in enumerate(space.dog):
        L, H, W = D.shape
        if H <= 2 * _BORDER or W <= 2 * _BORDER:
            continue
        l, r, c = np.nonzero(_neighbourhood_extrema(D, pre))
        l, r, c, off, val, hs = _refine(D, l, r, c)
        if l.size == 0:
            continue
        dxx, dyy, dxy = hs[:, 0, 0], hs[:, 1, 1], hs[:, 0, 1]
        tr = dxx + dyy
        det = dxx * dyy - dxy * dxy
        keep = (np.abs(val) >= contrast_thresh) & (det > 0) & (tr * tr < edge_limit * det)
        scale = 2.0**o
        x = (c[keep] + off[keep, 0]) * scale
        y = (r[keep] + off[keep, 1]) * scale
        lvl = l[keep]
        v = val[keep]
        inside = (x >= 0) & (x < space.width) & (y >= 0) & (y < space.height)
        xs.append(x[inside])
        ys.append(y[inside])
        octs.append(np.full(int(inside.sum()), o))
        scs.append(lvl[inside])
        resp.append(v[inside])

    if not xs:
        return []
    x, y = np.concatenate(xs), np.concatenate(ys)
    o, s, v = np.concatenate(octs), np.concatenate(scs), np.concatenate(resp)
    # plateau ties can converge to the same spot; keep one per (octave, scale, ~position)
    key = np.stack([o, s, np.rint(x * 8), np.rint(y * 8)], axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    first.sort()
    x, y, o, s, v = x[first], y[first], o[first], s[first], v[first]
    order = np.lexsort((x, y, s, o, -np.abs(v)))[:max_keypoints]
    return [
        Keypoint(float(x[i]), float(y[i]), int(o[i]), int(s[i]), float(v[i]))
        for i in order
    ]


def detect(frame, octaves=DEFAULT_OCTAVES, scales=DEFAULT_SCALES, sigma=DEFAULT_SIGMA,
           contrast_thresh=DEFAULT_CONTRAST, edge_ratio=DEFAULT_EDGE_RATIO,
           max_keypoints=DEFAULT_MAX_KEYPOINTS) -> List[Keypoint]:
    """Convenience wrapper: scale space plus detection in one call."""
    space = build_scale_space(frame, octaves, scales, sigma)
    return detect_keypoints(space, contrast_thresh, edge_ratio, max_keypoints)
