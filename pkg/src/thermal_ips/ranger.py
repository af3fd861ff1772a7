"""Turn detection, per-leg LIDAR segmentation and robust range regression.

Each straight leg of the walk is fitted independently: an ordinary
least-squares kinematic trend gives the initial distance and velocity, and a
Gaussian-kernel support vector regression with the epsilon-Huber cost models
what the trend misses while shrugging off outliers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import DomainError, FittingError, ParameterError
from .sensorio import ImuLog, RangeLog, RangeSample

log = logging.getLogger(__name__)

DEFAULT_TURN_WINDOW = 15
DEFAULT_TURN_THRESH = 45.0
DEFAULT_C = 10.0
DEFAULT_EPSILON = 0.05
DEFAULT_DELTA = 0.5
MIN_SEGMENT_SAMPLES = 4
MAX_ITER = 200
TOL = 1e-6


@dataclass(frozen=True)
class TurnEvent:
    t: float
    frame: int
    heading_change: float


@dataclass(frozen=True)
class RangeSegment:
    t: np.ndarray
    distance: np.ndarray
    init_distance: Optional[float] = None
    init_velocity: Optional[float] = None

    @property
    def start_t(self) -> float:
        return float(self.t[0])

    @property
    def end_t(self) -> float:
        return float(self.t[-1])

    @property
    def samples(self) -> List[RangeSample]:
        return [RangeSample(float(a), float(b)) for a, b in zip(self.t, self.distance)]

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class SvrModel:
    """Trend plus kernel expansion fitted to one range segment."""

    train_t: np.ndarray
    alpha: np.ndarray
    b: float
    gamma: float
    C: float
    epsilon: float
    delta: float
    d0: float
    v0: float
    accel: float
    start_t: float
    end_t: float
    mean_dt: float
    iterations: int = 0
    residual_norm: float = 0.0

    def trend(self, t):
        tau = np.asarray(t, dtype=float) - self.start_t
        return self.d0 + self.v0 * tau + 0.5 * self.accel * tau * tau


# ---------------------------------------------------------------------------
# turns


def sigmoid_step_kernel(halfwidth: int) -> np.ndarray:
    """Antisymmetric step detector ``sigmoid(i / w) - 1/2`` on ``[-W, W]``.

    ``w = W / 4``; scaled so an ideal unit step produces a peak response of 1.
    """
    i = np.arange(1, halfwidth + 1)
    pos = 1.0 / (1.0 + np.exp(-i / (halfwidth / 4.0))) - 0.5
    pos = pos / pos.sum()
    return np.concatenate([-pos[::-1], [0.0], pos])


def turn_response(headings, kernel_halfwidth: int = DEFAULT_TURN_WINDOW) -> np.ndarray:
    h = np.asarray(headings, dtype=float)
    k = sigmoid_step_kernel(kernel_halfwidth)
    padded = np.pad(h, kernel_halfwidth, mode="edge")
    return np.correlate(padded, k, mode="valid")


def detect_turns(
    headings,
    kernel_halfwidth: int = DEFAULT_TURN_WINDOW,
    turn_thresh: float = DEFAULT_TURN_THRESH,
    times=None,
    fps: float = 30.0,
) -> List[TurnEvent]:
    """Find step changes in a heading trace.

    The trace is correlated with :func:`sigmoid_step_kernel`; local maxima of
    the absolute response above ``turn_thresh`` become turns, strongest first,
    each suppressing weaker peaks closer than ``2 * kernel_halfwidth`` frames.
    """
    if kernel_halfwidth < 2:
        raise ParameterError("kernel_halfwidth must be >= 2")
    h = np.asarray(headings, dtype=float)
    if h.size == 0:
        return []
    if not np.all(np.isfinite(h)):
        raise ParameterError("headings must be finite")
    resp = turn_response(h, kernel_halfwidth)
    mag = np.abs(resp)
    left = np.concatenate([[-np.inf], mag[:-1]])
    right = np.concatenate([mag[1:], [-np.inf]])
    peaks = np.flatnonzero((mag > turn_thresh) & (mag >= left) & (mag >= right))
    order = peaks[np.lexsort((peaks, -mag[peaks]))]
    accepted: List[int] = []
    for p in order:
        if all(abs(p - q) >= 2 * kernel_halfwidth for q in accepted):
            accepted.append(int(p))
    accepted.sort()
    t = np.asarray(times, dtype=float) if times is not None else np.arange(h.size) / fps
    return [TurnEvent(t=float(t[p]), frame=p, heading_change=float(resp[p])) for p in accepted]


# ---------------------------------------------------------------------------
# segmentation


def segment_ranges(ranges, turns: Sequence[TurnEvent], min_samples: int = MIN_SEGMENT_SAMPLES) -> List[RangeSegment]:
    """Split the range log at turn times.

    Fragments shorter than ``min_samples`` are dropped at either end of the
    sequence and merged into their predecessor elsewhere.
    """
    rl = RangeLog.from_samples(ranges)
    if len(rl) == 0:
        return []
    cuts = sorted(tr.t for tr in turns)
    bounds = np.searchsorted(rl.t, cuts, side="left")
    edges = [0] + [int(b) for b in bounds] + [len(rl)]
    pieces = [(edges[i], edges[i + 1]) for i in range(len(edges) - 1) if edges[i + 1] > edges[i]]

    kept: List[List[int]] = []
    for n, (a, b) in enumerate(pieces):
        if b - a >= min_samples:
            kept.append([a, b])
        elif n == 0 or n == len(pieces) - 1:
            log.warning(
                "dropping %d range sample(s) at t=%.3f..%.3f s: too few for a segment",
                b - a, rl.t[a], rl.t[b - 1],
            )
        elif kept:
            log.warning("merging %d range sample(s) at t=%.3f s into the previous segment", b - a, rl.t[a])
            kept[-1][1] = b
        else:
            log.warning("dropping %d leading range sample(s) at t=%.3f s", b - a, rl.t[a])
    return [RangeSegment(t=rl.t[a:b], distance=rl.distance[a:b]) for a, b in kept]


# ---------------------------------------------------------------------------
# initial conditions


def forward_accel(imu, start_t: float, end_t: float) -> float:
    """Mean forward-axis acceleration over ``[start_t, end_t]`` (0 without data)."""
    if imu is None:
        return 0.0
    imu = ImuLog.from_samples(imu)
    sel = (imu.t >= start_t) & (imu.t <= end_t)
    if not sel.any():
        return 0.0
    return float(np.mean(imu.accel[sel, 0]))


def init_conditions(segment: RangeSegment, imu=None, accel: Optional[float] = None) -> Tuple[float, float]:
    """Least-squares ``(d0, v0)`` of ``d(t) = d0 + v0*tau + accel*tau**2/2``.

    ``accel`` is the second derivative of range.  When omitted it is taken
    from the IMU as minus the mean forward acceleration over the segment,
    since walking forward closes the distance to the facing wall.
    """
    d0, v0, _ = _trend(segment, imu, accel)
    return d0, v0


def _trend(segment, imu, accel):
    if len(segment) < MIN_SEGMENT_SAMPLES:
        raise FittingError(f"segment has {len(segment)} samples; need {MIN_SEGMENT_SAMPLES}")
    tau = segment.t - segment.start_t
    if np.ptp(tau) == 0:
        raise FittingError("rank-deficient design: all range samples share one timestamp")
    if accel is None:
        accel = -forward_accel(imu, segment.start_t, segment.end_t)
    target = segment.distance - 0.5 * accel * tau * tau
    design = np.column_stack([np.ones_like(tau), tau])
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < 2:
        raise FittingError("rank-deficient design in initial-condition fit")
    return float(coef[0]), float(coef[1]), float(accel)


# ---------------------------------------------------------------------------
# robust SVR


def eps_huber(r, epsilon: float, delta: float) -> np.ndarray:
    """Zero inside the tube, quadratic up to ``delta``, linear beyond."""
    a = np.abs(r)
    width = delta - epsilon
    return np.where(
        a <= epsilon,
        0.0,
        np.where(a <= delta, (a - epsilon) ** 2 / (2 * width), a - epsilon - 0.5 * width),
    )


def eps_huber_slope(r, epsilon: float, delta: float) -> np.ndarray:
    """Derivative of :func:`eps_huber`; bounded by 1 in magnitude."""
    a = np.abs(r)
    return np.sign(r) * np.clip((a - epsilon) / (delta - epsilon), 0.0, 1.0)


def default_gamma(duration: float) -> float:
    bw = max(duration, 1e-9) / 8.0
    return 1.0 / (2.0 * bw * bw)


def gaussian_kernel(a, b, gamma: float) -> np.ndarray:
    diff = np.asarray(a, dtype=float)[:, None] - np.asarray(b, dtype=float)[None, :]
    return np.exp(-gamma * diff * diff)


def _irls_step(K, y, r, alpha, b, C, epsilon, delta):
    """Target coefficients for one reweighted least-squares step.

    Samples inside the tube get no weight, samples in the quadratic zone get
    the Newton weight ``C / (delta - epsilon)`` and samples in the linear zone
    are pinned at ``+-C``.  The coefficients of the quadratic zone and the
    bias then solve a bordered kernel system that also enforces
    ``sum(alpha) = 0``.  When the quadratic zone is empty the secant weights
    ``C * L'(r) / r`` over all out-of-tube samples are used instead.
    """
    n = y.size
    a = np.abs(r)
    quad = (a > epsilon) & (a <= delta)
    lin = a > delta
    new_alpha = np.zeros(n)
    if quad.any():
        idx = np.flatnonzero(quad)
        lidx = np.flatnonzero(lin)
        new_alpha[lidx] = C * np.sign(r[lidx])
        rhs_top = y[idx] - epsilon * np.sign(r[idx]) - K[np.ix_(idx, lidx)] @ new_alpha[lidx]
        ridge = (delta - epsilon) / C
        pinned = -new_alpha[lidx].sum()
    elif lin.any():
        idx = np.flatnonzero(lin)
        rhs_top = y[idx]
        ridge = a[idx] / C
        pinned = 0.0
    else:
        return alpha * 0.0, b
    m = idx.size
    system = np.empty((m + 1, m + 1))
    system[:m, :m] = K[np.ix_(idx, idx)]
    system[np.arange(m), np.arange(m)] += ridge
    system[:m, m] = 1.0
    system[m, :m] = 1.0
    system[m, m] = 0.0
    rhs = np.concatenate([rhs_top, [pinned]])
    try:
        sol = linalg.solve(system, rhs, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise FittingError(f"singular IRLS system: {exc}", (alpha, b), float(np.linalg.norm(r))) from exc
    new_alpha[idx] = sol[:m]
    return new_alpha, float(sol[m])


def svr_fit(
    segment: RangeSegment,
    C: float = DEFAULT_C,
    epsilon: float = DEFAULT_EPSILON,
    delta: float = DEFAULT_DELTA,
    gamma: Optional[float] = None,
    imu=None,
    accel: Optional[float] = None,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
) -> SvrModel:
    """Fit the epsilon-Huber kernel regression to a detrended segment.

    Minimises ``0.5 * a'Ka + C * sum(L(y - Ka - b))`` by iteratively
    reweighted least squares: each step solves the weighted kernel system on
    the samples outside the insensitive tube, followed by a backtracking line
    search on the objective.  Iteration stops when no fitted value moves by
    more than ``tol`` relative to the data scale; the coefficients are then read off the
    optimality condition ``alpha_i = C * L'(r_i)``, so each is bounded by ``C``.
    """
    n = len(segment)
    if n < MIN_SEGMENT_SAMPLES:
        raise FittingError(f"segment has {n} samples; need {MIN_SEGMENT_SAMPLES}")
    if C <= 0 or (gamma is not None and gamma <= 0):
        raise ParameterError("C and gamma must be positive")
    if epsilon < 0 or delta <= epsilon:
        raise ParameterError("need 0 <= epsilon < delta")

    d0, v0, acc = _trend(segment, imu, accel)
    t = np.asarray(segment.t, dtype=float)
    tau = t - t[0]
    y = segment.distance - (d0 + v0 * tau + 0.5 * acc * tau * tau)
    duration = float(t[-1] - t[0])
    if gamma is None:
        gamma = default_gamma(duration)
    K = gaussian_kernel(t, t, gamma)

    def objective(alpha, b):
        r = y - K @ alpha - b
        return 0.5 * alpha @ K @ alpha + C * np.sum(eps_huber(r, epsilon, delta)), r

    scale = max(1.0, float(np.max(np.abs(y))))
    alpha = np.zeros(n)
    b = float(np.median(y))
    obj, r = objective(alpha, b)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_alpha, new_b = _irls_step(K, y, r, alpha, b, C, epsilon, delta)
        d_alpha = new_alpha - alpha
        d_b = new_b - b
        step = 1.0
        while True:
            cand_obj, cand_r = objective(alpha + step * d_alpha, b + step * d_b)
            if cand_obj <= obj or step < 1e-10:
                break
            step *= 0.5
        if cand_obj > obj:
            converged = True  # no descent possible along the IRLS direction
            break
        alpha = alpha + step * d_alpha
        b = b + step * d_b
        moved = float(np.max(np.abs(r - cand_r)))
        obj, r = cand_obj, cand_r
        if moved <= tol * scale:
            converged = True
            break
    if not converged:
        raise FittingError(
            f"IRLS did not converge in {max_iter} iterations",
            last_iterate=(alpha, b),
            residual_norm=float(np.linalg.norm(r)),
        )
    # read the coefficients off the stationarity condition alpha = C * L'(r);
    # removes the residual KKT error of the stopped iteration and keeps |alpha| <= C
    alpha = C * eps_huber_slope(r, epsilon, delta)
    r = y - K @ alpha - b
    mean_dt = duration / (n - 1)
    return SvrModel(
        train_t=t,
        alpha=alpha,
        b=float(b),
        gamma=float(gamma),
        C=C,
        epsilon=epsilon,
        delta=delta,
        d0=d0,
        v0=v0,
        accel=acc,
        start_t=float(t[0]),
        end_t=float(t[-1]),
        mean_dt=mean_dt,
        iterations=it,
        residual_norm=float(np.linalg.norm(r)),
    )


def svr_predict(model: SvrModel, t):
    """Evaluate the fitted distance at time(s) ``t``.

    Raises :class:`DomainError` beyond one mean sample interval outside the
    fitted span.
    """
    tt = np.asarray(t, dtype=float)
    lo = model.start_t - model.mean_dt
    hi = model.end_t + model.mean_dt
    if np.any(tt < lo - 1e-12) or np.any(tt > hi + 1e-12):
        raise DomainError(f"t outside fitted domain [{lo:.4f}, {hi:.4f}] s")
    flat = np.atleast_1d(tt).ravel()
    val = model.trend(flat) + gaussian_kernel(flat, model.train_t, model.gamma) @ model.alpha + model.b
    return float(val[0]) if tt.ndim == 0 else val.reshape(tt.shape)
