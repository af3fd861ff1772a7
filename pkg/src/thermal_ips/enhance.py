"""Adaptive-threshold enhancement applied ahead of keypoint detection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

DEFAULT_BLOCK = 11
DEFAULT_OFFSET = 2.0


@dataclass(frozen=True)
class EnhancedFrame:
    index: int
    t: float
    pixels: np.ndarray  # uint8, values in {0, 255}

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def box_sum(image: np.ndarray, block: int) -> np.ndarray:
    """Sum over a ``block x block`` neighbourhood with replicated borders.

    Integer rasters are summed with integer running sums, so the result is
    exact and threshold ties resolve the same way every time.
    """
    img = np.asarray(image)
    r = block // 2
    if np.issubdtype(img.dtype, np.integer):
        peak = int(np.max(np.abs(img))) if img.size else 0
        bound = peak * block * (max(img.shape) + block)
        dt = np.int32 if bound < 2**31 else np.int64
    else:
        dt = np.float64
    padded = np.pad(img.astype(dt), r, mode="edge")
    # running sums along rows, then along columns
    c = np.cumsum(padded, axis=0, dtype=dt)
    rows = np.empty((img.shape[0], padded.shape[1]), dt)
    rows[0] = c[block - 1]
    rows[1:] = c[block:] - c[:-block]
    c = np.cumsum(rows, axis=1, dtype=dt)
    out = np.empty(img.shape, dt)
    out[:, 0] = c[:, block - 1]
    out[:, 1:] = c[:, block:] - c[:, :-block]
    return out


def local_mean(image: np.ndarray, block: int) -> np.ndarray:
    """Mean over a ``block x block`` neighbourhood with replicated borders."""
    return box_sum(image, block) / float(block * block)


def adaptive_threshold(frame, block: int = DEFAULT_BLOCK, offset: float = DEFAULT_OFFSET) -> EnhancedFrame:
    """Binarise a frame against its local mean.

    A pixel becomes 255 when its intensity exceeds the neighbourhood mean minus
    ``offset``; otherwise 0.  Accepts a :class:`~thermal_ips.sensorio.Frame` or a
    bare 2-D array.
    """
    pixels = getattr(frame, "pixels", frame)
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    if block % 2 != 1 or block < 3 or block > min(w, h):
        raise ParameterError(f"block must be odd and within [3, {min(w, h)}], got {block}")
    # compare in summed units (pixel * n > sum - offset * n) to avoid dividing
    n = block * block
    total = box_sum(pixels, block)
    out = np.where(pixels.astype(np.float64) * n > total - offset * n, 255, 0).astype(np.uint8)
    return EnhancedFrame(
        index=getattr(frame, "index", 0),
        t=getattr(frame, "t", 0.0),
        pixels=out,
    )
