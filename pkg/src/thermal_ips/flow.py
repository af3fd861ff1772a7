"""Single-level Lucas-Kanade optical flow at sparse positions.

Intensities are normalised to [0, 1].  For each point the brightness
constancy residual ``Ix*u + Iy*v + It`` is minimised in the least-squares
sense over a square window; ``Ix, Iy`` are central differences of the
previous frame and ``It = next - prev``, all bilinearly sampled at the
sub-pixel point position.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ParameterError

DEFAULT_WINDOW = 15
DEFAULT_EIG_MIN = 1e-4
DEFAULT_ITERATIONS = 10
CONVERGENCE_PX = 1e-3

OK = "ok"
SINGULAR = "singular"
OUT_OF_BOUNDS = "out_of_bounds"


@dataclass(frozen=True)
class FlowVector:
    x: float
    y: float
    u: float
    v: float
    valid: bool
    reason: str = OK

    @property
    def magnitude(self) -> float:
        return float(np.hypot(self.u, self.v))


def _unit(frame) -> np.ndarray:
    return np.asarray(getattr(frame, "pixels", frame), dtype=np.float64) / 255.0


def _central_x(img: np.ndarray) -> np.ndarray:
    g = np.empty_like(img)
    g[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    g[:, 0] = img[:, 1] - img[:, 0]
    g[:, -1] = img[:, -1] - img[:, -2]
    return g


def _central_y(img: np.ndarray) -> np.ndarray:
    return _central_x(img.T).T


def border_margin(window: int) -> int:
    return window // 2 + 1


def _in_bounds(x, y, shape, window):
    m = border_margin(window)
    h, w = shape
    return (x >= m) & (x <= w - 1 - m) & (y >= m) & (y <= h - 1 - m)


def _sample_windows(images, x, y, window):
    """Bilinearly sample ``window x window`` patches centred on each point.

    All points must already be in bounds.  Returns one (N, window, window)
    array per input image.
    """
    half = window // 2
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = (x - x0)[:, None, None]
    fy = (y - y0)[:, None, None]
    offs = np.arange(-half, half + 2)
    rows = (y0[:, None] + offs[None, :])[:, :, None]
    cols = (x0[:, None] + offs[None, :])[:, None, :]
    out = []
    for img in images:
        patch = img[rows, cols]  # one gather of (window + 1)^2 pixels per point
        across = patch[:, :, :-1] + fx * (patch[:, :, 1:] - patch[:, :, :-1])
        out.append(across[:, :-1] + fy * (across[:, 1:] - across[:, :-1]))
    return out


def image_gradients(prev, next, p, window: int = DEFAULT_WINDOW):
    """Return ``(Ix, Iy, It)`` windows around position ``p = (x, y)``.

    Returns ``None`` when the window does not fit inside the frames.
    """
    a, b = _unit(prev), _unit(next)
    x = np.array([float(p[0])])
    y = np.array([float(p[1])])
    if not _in_bounds(x, y, a.shape, window)[0]:
        return None
    ix, iy, it = _sample_windows([_central_x(a), _central_y(a), b - a], x, y, window)
    return ix[0], iy[0], it[0]


class FlowSolver:
    """Precomputes gradients of one frame pair so many points can be solved."""

    def __init__(self, prev, next, window: int = DEFAULT_WINDOW, eig_min: float = DEFAULT_EIG_MIN,
                 iterations: int = DEFAULT_ITERATIONS):
        if window % 2 != 1 or window < 5:
            raise ParameterError(f"window must be odd and >= 5, got {window}")
        a, b = _unit(prev), _unit(next)
        if a.shape != b.shape:
            raise ParameterError(f"frame sizes differ: {a.shape} vs {b.shape}")
        self.shape = a.shape
        self.window = window
        self.eig_min = eig_min
        if iterations < 1:
            raise ParameterError("iterations must be >= 1")
        self.iterations = iterations
        self._prev = a
        self._next = b
        self._grads = (_central_x(a), _central_y(a))

    def solve(self, x, y, guess=(0.0, 0.0)):
        """Vectorised solve; returns ``(u, v, valid, reason)`` arrays.

        ``guess`` is the displacement the iteration starts from; it only
        changes how many refinement steps are needed, not the fixed point.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = x.size
        u = np.zeros(n)
        v = np.zeros(n)
        reason = np.full(n, OUT_OF_BOUNDS, dtype=object)
        inb = _in_bounds(x, y, self.shape, self.window)
        if inb.any():
            idx = np.flatnonzero(inb)
            px, py = x[inb], y[inb]
            ix, iy, p0 = _sample_windows(self._grads + (self._prev,), px, py, self.window)
            axis = (1, 2)
            sxx = np.sum(ix * ix, axis=axis)
            sxy = np.sum(ix * iy, axis=axis)
            syy = np.sum(iy * iy, axis=axis)
            npix = self.window * self.window
            # smallest eigenvalue of the window-averaged structure tensor
            tr = (sxx + syy) / npix
            det = (sxx * syy - sxy * sxy) / npix**2
            lam_min = 0.5 * tr - np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
            good = (lam_min >= self.eig_min) & (lam_min > 0)
            d = np.where(good, sxx * syy - sxy * sxy, 1.0)
            du = np.full(px.size, float(guess[0]) if self.iterations > 1 else 0.0)
            dv = np.full(px.size, float(guess[1]) if self.iterations > 1 else 0.0)
            live = good.copy()
            lost = np.zeros(px.size, dtype=bool)
            for _ in range(self.iterations):
                if not live.any():
                    break
                qx, qy = px[live] + du[live], py[live] + dv[live]
                fits = _in_bounds(qx, qy, self.shape, self.window)
                gone = np.flatnonzero(live)[~fits]
                lost[gone] = True
                live[gone] = False
                sel = np.flatnonzero(live)
                if sel.size == 0:
                    break
                (p1,) = _sample_windows((self._next,), px[sel] + du[sel], py[sel] + dv[sel], self.window)
                it = p1 - p0[sel]
                sxt = np.sum(ix[sel] * it, axis=axis)
                syt = np.sum(iy[sel] * it, axis=axis)
                step_u = (-syy[sel] * sxt + sxy[sel] * syt) / d[sel]
                step_v = (sxy[sel] * sxt - sxx[sel] * syt) / d[sel]
                du[sel] += step_u
                dv[sel] += step_v
                live[sel[np.hypot(step_u, step_v) < CONVERGENCE_PX]] = False
            good &= ~lost & np.isfinite(du) & np.isfinite(dv)
            u[idx[good]] = du[good]
            v[idx[good]] = dv[good]
            reason[idx] = np.where(good, OK, np.where(lost, OUT_OF_BOUNDS, SINGULAR))
        valid = reason == OK
        return u, v, valid, reason


def lk_at_points(
    prev,
    next,
    points: Sequence,
    window: int = DEFAULT_WINDOW,
    eig_min: float = DEFAULT_EIG_MIN,
    iterations: int = DEFAULT_ITERATIONS,
    guess=(0.0, 0.0),
) -> List[FlowVector]:
    """Lucas-Kanade flow from ``prev`` to ``next`` at each point.

    ``points`` may hold :class:`~thermal_ips.features.Keypoint` objects or
    ``(x, y)`` pairs.  Output order matches input order.  With
    ``iterations > 1`` the window in ``next`` is re-sampled at the current
    displacement estimate and the normal equations re-solved until the
    update drops below 1e-3 px; ``iterations=1`` is the plain one-shot solve.
    ``guess`` seeds the iteration (e.g. with the previous frame pair's mean
    motion).
    """
    solver = FlowSolver(prev, next, window, eig_min, iterations)
    xy = _points_xy(points)
    u, v, valid, reason = solver.solve(xy[:, 0], xy[:, 1], guess)
    return [
        FlowVector(float(px), float(py), float(pu), float(pv), bool(ok), str(why))
        for px, py, pu, pv, ok, why in zip(xy[:, 0], xy[:, 1], u, v, valid, reason)
    ]


def _points_xy(points) -> np.ndarray:
    if len(points) == 0:
        return np.zeros((0, 2))
    first = points[0]
    if hasattr(first, "x"):
        return np.array([(p.x, p.y) for p in points], dtype=float)
    return np.asarray(points, dtype=float).reshape(-1, 2)


def residual_map(prev, next, flow: FlowVector, window: int = DEFAULT_WINDOW) -> Optional[np.ndarray]:
    """|Ix*u + Iy*v + It| over the window of one flow vector."""
    g = image_gradients(prev, next, (flow.x, flow.y), window)
    if g is None:
        return None
    ix, iy, it = g
    return np.abs(ix * flow.u + iy * flow.v + it)
