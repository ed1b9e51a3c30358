"""Per-frame segmentation into a preliminary dictionary of binary masks.

Each frame is binarized at three data-driven thresholds, split into
4-connected components, and filtered by size and bounding box. Every
surviving component becomes one dictionary element, tagged with the frame
and threshold it came from. Duplicates across frames and thresholds are
kept on purpose: the clustering stage merges them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .video import FrameGeometry, VideoMatrix, quantile

__all__ = [
    "SpatialComponent",
    "SpatialDictionary",
    "SegmentConfig",
    "compute_thresholds",
    "threshold_frame",
    "connected_components",
    "filter_components",
    "build_preliminary_dictionary",
]

#: 4-connectivity structuring element (no diagonals).
_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.int32)


@dataclass
class SpatialComponent:
    """A binary pixel mask, stored as a sorted array of flat pixel indices.

    ``provenance`` is ``(frame, threshold)`` for segmentation output, or
    the string ``"cluster representative"``.
    """

    pixels: np.ndarray
    geometry: FrameGeometry
    provenance: tuple[int, float] | str

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.int64)
        if pixels.size == 0:
            raise ValueError("spatial component must be non-empty")
        if pixels.min() < 0 or pixels.max() >= self.geometry.n_pixels:
            raise ValueError("pixel index out of range for geometry")
        self.pixels = np.unique(pixels)

    @property
    def size(self) -> int:
        return int(self.pixels.size)

    def bounding_box(self) -> tuple[int, int]:
        """(height, width) of the tight bounding box, in pixels."""
        rows = self.pixels // self.geometry.width
        cols = self.pixels % self.geometry.width
        return int(rows.max() - rows.min() + 1), int(cols.max() - cols.min() + 1)

    def as_mask(self) -> np.ndarray:
        """Dense height x width binary mask."""
        mask = np.zeros(self.geometry.n_pixels, dtype=np.uint8)
        mask[self.pixels] = 1
        return mask.reshape(self.geometry.height, self.geometry.width)


class SpatialDictionary:
    """Ordered collection of spatial components sharing one geometry."""

    def __init__(self, components: list[SpatialComponent], geometry: FrameGeometry):
        for c in components:
            if c.geometry != geometry:
                raise ValueError("all components must share the dictionary geometry")
        self.components = list(components)
        self.geometry = geometry

    @property
    def n_components(self) -> int:
        return len(self.components)

    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.components], dtype=np.int64)

    def to_sparse(self):
        """Binary P x K matrix with one column per component (CSC)."""
        from scipy import sparse

        indices = np.concatenate([c.pixels for c in self.components]) if self.components else np.empty(0, dtype=np.int64)
        indptr = np.zeros(self.n_components + 1, dtype=np.int64)
        np.cumsum([c.size for c in self.components], out=indptr[1:])
        data = np.ones(indices.size, dtype=np.float64)
        return sparse.csc_matrix(
            (data, indices, indptr), shape=(self.geometry.n_pixels, self.n_components)
        )

    def __repr__(self):
        return f"SpatialDictionary(K={self.n_components})"


@dataclass
class SegmentConfig:
    min_size: int = 25
    max_size: int = 500
    max_width: int = 30
    max_height: int = 30
    threshold_quantile: float = 0.001

    def __post_init__(self):
        if not 0 < self.min_size <= self.max_size:
            raise ValueError("need 0 < min_size <= max_size")
        if self.max_width < 1 or self.max_height < 1:
            raise ValueError("max_width and max_height must be >= 1")
        if not 0.0 < self.threshold_quantile < 1.0:
            raise ValueError("threshold_quantile must be in (0, 1)")


def compute_thresholds(Y: VideoMatrix, threshold_quantile: float) -> list[float]:
    """The three segmentation thresholds for a standardized video, sorted
    ascending: the negative of the low quantile, the negative of the
    minimum, and their average.

    Standardized noise is roughly symmetric around zero, so values above
    the negative of the minimum are very unlikely to be noise.
    """
    neg_min = -float(Y.values.min())
    neg_q = -quantile(Y, threshold_quantile)
    thresholds = sorted([neg_min, neg_q, 0.5 * (neg_min + neg_q)])
    if thresholds[0] <= 0:
        raise ValueError("preprocessing contract violated: non-positive threshold")
    return thresholds


def threshold_frame(frame: np.ndarray, threshold: float, geometry: FrameGeometry) -> np.ndarray:
    """Binarize a flat frame vector: 1 where value > threshold."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    frame = np.asarray(frame)
    if frame.size != geometry.n_pixels:
        raise ValueError("frame length does not match geometry")
    return (frame.reshape(geometry.height, geometry.width) > threshold).astype(np.uint8)


def connected_components(image: np.ndarray) -> list[np.ndarray]:
    """Split a binary image into maximal 4-connected sets of 1-pixels.

    Returns sorted flat-index arrays, ordered by each set's smallest pixel.
    """
    labels, n = ndimage.label(image, structure=_FOUR_CONNECTED)
    if n == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    sets = np.split(order[counts[0]:], np.cumsum(counts[1:-1]))
    # stable argsort leaves each set in raster (ascending-index) order
    sets.sort(key=lambda s: s[0])
    return sets


def filter_components(components: list[SpatialComponent], cfg: SegmentConfig) -> list[SpatialComponent]:
    """Keep only components whose pixel count is within [min_size,
    max_size] and whose bounding box fits within max_width x max_height.
    """
    kept = []
    for c in components:
        if not cfg.min_size <= c.size <= cfg.max_size:
            continue
        height, width = c.bounding_box()
        if width > cfg.max_width or height > cfg.max_height:
            continue
        kept.append(c)
    return kept


def build_preliminary_dictionary(
    Y: VideoMatrix, cfg: SegmentConfig, thresholds: list[float] | None = None
) -> SpatialDictionary:
    """Segment every frame at each of the three thresholds and collect all
    surviving components, in (threshold asc, frame asc, smallest-pixel asc)
    order.
    """
    if thresholds is None:
        thresholds = compute_thresholds(Y, cfg.threshold_quantile)
    geometry = Y.geometry
    components: list[SpatialComponent] = []
    for threshold in thresholds:
        for j in range(Y.n_frames):
            image = threshold_frame(Y.values[:, j], threshold, geometry)
            candidates = [
                SpatialComponent(pixels, geometry, (j, float(threshold)))
                for pixels in connected_components(image)
            ]
            components.extend(filter_components(candidates, cfg))
    if not components:
        raise ValueError(
            "empty preliminary dictionary: no component passed the size filter; "
            "consider lowering the thresholds (threshold_quantile)"
        )
    return SpatialDictionary(components, geometry)
