"""Video compass: foreground rejection, flow-to-angle conversion, fusion."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterError

DEFAULT_NX = 320
DEFAULT_BETA = 49.0
DEFAULT_LOW_CUT = 0.2
DEFAULT_K_SIGMA = 2.0
DEFAULT_LAMBDA = 0.6


@dataclass(frozen=True)
class CameraModel:
    nx: int = DEFAULT_NX
    beta: float = DEFAULT_BETA  # horizontal field of view, degrees

    def __post_init__(self):
        if self.nx < 16:
            raise ParameterError(f"Nx must be >= 16, got {self.nx}")
        if not 0 < self.beta < 180:
            raise ParameterError(f"field of view must be in (0, 180) degrees, got {self.beta}")

    @property
    def rx(self) -> float:
        """Angular resolution, degrees per pixel."""
        return self.beta / self.nx


@dataclass(frozen=True)
class RejectionStats:
    """Bookkeeping of one frame pair's flow rejection.

    ``total`` counts valid vectors; ``invalid`` counts those the flow solver
    could not resolve and is not part of ``total``.
    """

    sigma: float
    low_cut: float
    high_cut: float
    total: int
    below: int
    above: int
    inliers: int
    invalid: int = 0

    @property
    def zero_survivors(self) -> bool:
        return self.inliers == 0


@dataclass(frozen=True)
class HeadingSample:
    frame: int
    t: float
    omega_c: float
    theta_c: float
    theta_g: float
    theta_fused: float
    n_inliers: int


def reject_and_average(
    flows: Sequence,
    low_cut: float = DEFAULT_LOW_CUT,
    k_sigma: float = DEFAULT_K_SIGMA,
    fixed_high_cut: Optional[float] = None,
) -> Tuple[float, RejectionStats]:
    """Average horizontal camera flow after discarding static and foreground vectors.

    Vectors slower than ``low_cut`` are dropped, the spread ``sigma`` of the
    remaining magnitudes is taken as their root-mean-square (the spread of a
    velocity distribution centred on zero), and vectors faster than
    ``k_sigma * sigma`` (or ``fixed_high_cut`` when given) are dropped as
    foreground activity.  Returns the mean ``u`` of the survivors, or 0 when
    none survive.
    """
    if low_cut <= 0 or k_sigma <= 0:
        raise ParameterError("low_cut and k_sigma must be positive")
    valid = [f for f in flows if f.valid]
    invalid = len(flows) - len(valid)
    mags = [math.hypot(f.u, f.v) for f in valid]
    kept = [(f, m) for f, m in zip(valid, mags) if m >= low_cut]
    below = len(valid) - len(kept)
    if kept:
        sigma = math.sqrt(math.fsum(m * m for _, m in kept) / len(kept))
        high_cut = fixed_high_cut if fixed_high_cut is not None else k_sigma * sigma
    else:
        sigma = 0.0
        high_cut = fixed_high_cut if fixed_high_cut is not None else math.inf
    survivors = [f for f, m in kept if m <= high_cut]
    above = len(kept) - len(survivors)
    u_mean = math.fsum(f.u for f in survivors) / len(survivors) if survivors else 0.0
    stats = RejectionStats(
        sigma=sigma,
        low_cut=low_cut,
        high_cut=high_cut,
        total=len(valid),
        below=below,
        above=above,
        inliers=len(survivors),
        invalid=invalid,
    )
    return u_mean, stats


def angular_velocity(u: float, cam: CameraModel) -> float:
    """Horizontal flow (pixels/frame) to yaw rate (degrees/frame)."""
    return u * cam.beta / cam.nx


def integrate_heading(omegas: Sequence[float]) -> np.ndarray:
    """Per-frame-pair rates to headings; one more output than input, starting at 0."""
    w = np.asarray(omegas, dtype=float)
    out = np.zeros(w.size + 1)
    np.cumsum(w, out=out[1:])
    return out


def display_heading(theta) -> np.ndarray:
    """Reduce unwrapped headings to [0, 360) for compass rendering."""
    return np.mod(np.asarray(theta, dtype=float), 360.0)


def fuse_headings(theta_c, theta_g, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Weighted blend ``lam * theta_g + (1 - lam) * theta_c``."""
    c = np.asarray(theta_c, dtype=float)
    g = np.asarray(theta_g, dtype=float)
    if c.shape != g.shape:
        raise ParameterError(f"heading lists differ in length: {c.shape} vs {g.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
    fused = lam * g + (1.0 - lam) * c
    # guard the convex-combination bound against rounding
    return np.clip(fused, np.minimum(c, g), np.maximum(c, g))


def heading_samples(times, omegas, theta_c, theta_g, theta_fused, inliers) -> List[HeadingSample]:
    """Zip per-frame arrays into records.

    ``omegas`` and ``inliers`` are per frame pair (one fewer than frames); the
    pair ending at frame k is reported on frame k and frame 0 carries zeros.
    """
    n = len(theta_c)
    out = []
    for k in range(n):
        out.append(
            HeadingSample(
                frame=k,
                t=float(times[k]),
                omega_c=float(omegas[k - 1]) if 0 < k <= len(omegas) else 0.0,
                theta_c=float(theta_c[k]),
                theta_g=float(theta_g[k]),
                theta_fused=float(theta_fused[k]),
                n_inliers=int(inliers[k - 1]) if 0 < k <= len(inliers) else 0,
            )
        )
    return out
