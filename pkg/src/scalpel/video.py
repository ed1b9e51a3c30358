"""Dense video containers, frame geometry, and pixel-level helpers.

A video is stored as a P x T matrix of fluorescence values: one row per
pixel, one column per frame. Pixels are indexed in row-major order within
the frame, so pixel ``p`` sits at ``(p // width, p % width)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FrameGeometry",
    "VideoMatrix",
    "ThresholdedVideo",
    "quantile",
    "threshold_video",
]


@dataclass(frozen=True)
class FrameGeometry:
    """Frame dimensions in pixels; ``n_pixels = height * width``."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("frame geometry must have height >= 1 and width >= 1")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def pixel_to_rowcol(self, pixel: int) -> tuple[int, int]:
        """Map a flat pixel index to its (row, col) position."""
        if not 0 <= pixel < self.n_pixels:
            raise ValueError(f"pixel index {pixel} out of range [0, {self.n_pixels})")
        return pixel // self.width, pixel % self.width

    def rowcol_to_pixel(self, row: int, col: int) -> int:
        """Map a (row, col) position to its flat pixel index."""
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise ValueError(f"position ({row}, {col}) outside {self.height}x{self.width} frame")
        return row * self.width + col


class VideoMatrix:
    """P x T fluorescence matrix with frame geometry.

    Values are widened to float64 on construction and must all be finite.
    """

    def __init__(self, values, geometry: FrameGeometry):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"video values must be 2-D (P x T), got shape {values.shape}")
        if values.shape[0] != geometry.n_pixels:
            raise ValueError(
                f"video has {values.shape[0]} pixel rows but geometry implies "
                f"{geometry.n_pixels}"
            )
        if not np.isfinite(values).all():
            raise ValueError("video contains non-finite values")
        self.values = values
        self.geometry = geometry

    @property
    def n_pixels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def frame(self, j: int) -> np.ndarray:
        """Frame ``j`` as a height x width image."""
        return self.values[:, j].reshape(self.geometry.height, self.geometry.width)

    def __repr__(self):
        g = self.geometry
        return f"VideoMatrix({g.height}x{g.width} px, {self.n_frames} frames)"


@dataclass
class ThresholdedVideo:
    """P x T matrix whose entries are either 0 or strictly above ``threshold``."""

    values: np.ndarray
    threshold: float


def quantile(video: VideoMatrix, q: float) -> float:
    """Quantile of all P*T entries, with linear interpolation between
    order statistics (position ``q * (n - 1)``). ``q=0`` is the minimum,
    ``q=1`` the maximum.
    """
    if video.values.size == 0:
        raise ValueError("empty input")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile fraction must be in [0, 1], got {q}")
    return float(np.quantile(video.values, q))


def threshold_video(video: VideoMatrix, threshold: float) -> ThresholdedVideo:
    """Zero out every entry not strictly greater than ``threshold``."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    out = np.where(video.values > threshold, video.values, 0.0)
    return ThresholdedVideo(values=out, threshold=float(threshold))
