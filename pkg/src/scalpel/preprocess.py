"""Video standardization: smoothing, bleaching correction, and delta-f/f.

The full transform runs three stages in order: a separable Gaussian smooth
over space and time, removal of a slow per-frame median trend (fit with a
low-degree-of-freedom regression spline), and a median-baseline delta-f/f
with a stabilizing global-quantile term in the denominator. Afterwards
every pixel trace has median exactly zero, and noise pixels are roughly
symmetric around zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline
from scipy.ndimage import gaussian_filter1d

from .video import VideoMatrix, quantile

__all__ = [
    "PreprocessConfig",
    "gaussian_smooth",
    "bleach_correct",
    "delta_f_over_f",
    "preprocess",
]


@dataclass
class PreprocessConfig:
    bandwidth: float = 1.0
    spline_df: int = 10
    denom_quantile: float = 0.10

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.spline_df < 2:
            raise ValueError("spline_df must be >= 2")
        if not 0.0 < self.denom_quantile < 1.0:
            raise ValueError("denom_quantile must be in (0, 1)")


def _normalized_filter1d(values: np.ndarray, sigma: float, axis: int) -> np.ndarray:
    """Gaussian filter truncated at radius ceil(4*sigma), renormalized over
    in-bounds taps so constants are preserved at the borders.
    """
    radius = math.ceil(4.0 * sigma)
    num = gaussian_filter1d(values, sigma, axis=axis, mode="constant", cval=0.0, radius=radius)
    shape = [1] * values.ndim
    shape[axis] = values.shape[axis]
    ones = np.ones(shape)
    den = gaussian_filter1d(ones, sigma, axis=axis, mode="constant", cval=0.0, radius=radius)
    return num / den


def _smooth_spatial(video: VideoMatrix, sigma: float) -> np.ndarray:
    g = video.geometry
    cube = video.values.reshape(g.height, g.width, video.n_frames)
    cube = _normalized_filter1d(cube, sigma, axis=0)
    cube = _normalized_filter1d(cube, sigma, axis=1)
    return cube.reshape(g.n_pixels, video.n_frames)


def _smooth_temporal(values: np.ndarray, sigma: float) -> np.ndarray:
    return _normalized_filter1d(values, sigma, axis=1)


def gaussian_smooth(video: VideoMatrix, bandwidth: float) -> VideoMatrix:
    """Smooth each frame with a 2-D Gaussian and each pixel trace with a
    1-D Gaussian, both with sigma = ``bandwidth``.

    The kernel is truncated at radius ceil(4*sigma) and renormalized to sum
    to one; at image/video borders the weights are renormalized over
    in-bounds taps, so constant inputs pass through unchanged.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    out = _smooth_spatial(video, bandwidth)
    out = _smooth_temporal(out, bandwidth)
    return VideoMatrix(out, video.geometry)


def _spline_design(x: np.ndarray, df: int) -> np.ndarray:
    """Design matrix of a B-spline regression basis with exactly ``df``
    functions. Cubic for df >= 4; degree df-1 (no interior knots) below
    that. Interior knots sit at equally spaced quantiles of ``x``.
    """
    degree = min(3, df - 1)
    n_interior = df - (degree + 1)
    lo, hi = float(x[0]), float(x[-1])
    if n_interior > 0:
        probs = np.arange(1, n_interior + 1) / (n_interior + 1)
        interior = np.quantile(x, probs)
    else:
        interior = np.empty(0)
    knots = np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])
    return BSpline.design_matrix(x, knots, degree).toarray()


def _fit_median_trend(video: VideoMatrix, spline_df: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame medians and their fitted spline trend."""
    T = video.n_frames
    if T < spline_df:
        raise ValueError("too few frames for spline fit")
    medians = np.median(video.values, axis=0)
    x = np.arange(T, dtype=np.float64)
    design = _spline_design(x, spline_df)
    coef, *_ = np.linalg.lstsq(design, medians, rcond=None)
    return medians, design @ coef


def bleach_correct(video: VideoMatrix, spline_df: int) -> VideoMatrix:
    """Subtract the fitted per-frame median trend from every frame.

    The trend is a least-squares B-spline fit (``spline_df`` basis
    functions) to the median fluorescence of each frame, so any median
    signal the basis reproduces exactly -- constants and linear drifts in
    particular -- is removed completely.
    """
    _, trend = _fit_median_trend(video, spline_df)
    return VideoMatrix(video.values - trend[None, :], video.geometry)


def delta_f_over_f(video: VideoMatrix, denom_quantile: float) -> VideoMatrix:
    """Standardize each pixel trace against its own median baseline.

    Output row i is ``(y_i - median(y_i)) / (median(y_i) + q)`` where q is
    the global ``denom_quantile`` quantile of the input matrix. The global
    term keeps dim pixels from blowing up; every output row has median
    exactly zero.
    """
    medians = np.median(video.values, axis=1)
    q = quantile(video, denom_quantile)
    denom = medians + q
    bad = np.flatnonzero(denom == 0.0)
    if bad.size:
        raise ValueError(f"zero delta-f/f denominator at pixel {int(bad[0])}")
    out = (video.values - medians[:, None]) / denom[:, None]
    return VideoMatrix(out, video.geometry)


def preprocess(raw: VideoMatrix, cfg: PreprocessConfig) -> VideoMatrix:
    """Run the full standardization: smooth, detrend, delta-f/f.

    The trend subtraction removes only the time-varying part of the median
    trend; its mean level is retained so the delta-f/f denominators stay on
    the raw fluorescence scale. (A fully centered video would feed the
    denominators a negative global quantile and flip trace signs.)
    """
    if raw.values.size == 0:
        raise ValueError("empty input")
    smoothed = gaussian_smooth(raw, cfg.bandwidth)
    _, trend = _fit_median_trend(smoothed, cfg.spline_df)
    detrended = VideoMatrix(
        smoothed.values - trend[None, :] + trend.mean(), smoothed.geometry
    )
    return delta_f_over_f(detrended, cfg.denom_quantile)
