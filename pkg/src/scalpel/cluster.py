"""Dictionary refinement: dissimilarities, prototype clustering, representatives.

Redundant dictionary elements (the same neuron caught in many frames) are
merged by hierarchical clustering under a combined dissimilarity: a cosine
dissimilarity between pixel masks, blended with a cosine dissimilarity
between each element's aggregate thresholded-fluorescence trace. The
linkage is minimax: two clusters merge at the smallest radius achievable
by any single member (the prototype) covering the merged cluster, so every
cluster read off a cut at height h contains a member within h of all the
others.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .segment import SpatialComponent, SpatialDictionary
from .video import ThresholdedVideo

__all__ = [
    "DissimilarityMatrix",
    "Merge",
    "Dendrogram",
    "ClusterConfig",
    "spatial_dissimilarity",
    "alternative_spatial_dissimilarities",
    "temporal_dissimilarity",
    "combined_dissimilarity",
    "protoclust",
    "cut_dendrogram",
    "cluster_representatives",
]

_SPATIAL_KINDS = ("cosine", "union", "min", "max")


@dataclass
class DissimilarityMatrix:
    """Symmetric K x K matrix of dissimilarities in [0, 1]."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("dissimilarity matrix must be square")
        if not np.allclose(v, v.T, atol=1e-12):
            raise ValueError("dissimilarity matrix must be symmetric")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Merge:
    """One agglomeration step: clusters ``left`` and ``right`` merge at
    ``height`` with minimax ``prototype`` (an element index)."""

    left: int
    right: int
    height: float
    prototype: int


@dataclass
class Dendrogram:
    """Merge tree over K elements: leaves are cluster ids 0..K-1, merge i
    creates cluster id K+i."""

    n_leaves: int
    merges: list[Merge]

    @property
    def leaves(self) -> np.ndarray:
        return np.arange(self.n_leaves)


@dataclass
class ClusterConfig:
    omega: float = 0.2
    cut_height: float = 0.18
    spatial_metric: str = "cosine"

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must be in [0, 1]")
        if not 0.0 <= self.cut_height <= 1.0:
            raise ValueError("cut_height must be in [0, 1]")
        if self.spatial_metric not in _SPATIAL_KINDS:
            raise ValueError(f"spatial_metric must be one of {_SPATIAL_KINDS}")


def _overlap_counts(dictionary: SpatialDictionary) -> np.ndarray:
    """K x K matrix of shared-pixel counts; the diagonal holds sizes."""
    A = dictionary.to_sparse()
    return np.asarray((A.T @ A).todense())


def spatial_dissimilarity(dictionary: SpatialDictionary) -> DissimilarityMatrix:
    """Cosine dissimilarity between pixel masks:
    ``1 - p_ij / sqrt(p_ii * p_jj)``. 1 iff disjoint, 0 iff identical.
    """
    p = _overlap_counts(dictionary)
    sizes = np.diag(p).astype(np.float64)
    d = 1.0 - p / np.sqrt(np.outer(sizes, sizes))
    np.clip(d, 0.0, 1.0, out=d)
    np.fill_diagonal(d, 0.0)
    return DissimilarityMatrix(d, "spatial")


def alternative_spatial_dissimilarities(
    dictionary: SpatialDictionary, kind: str
) -> DissimilarityMatrix:
    """Overlap dissimilarities normalized by the union, min, or max of the
    two mask sizes instead of their geometric mean.
    """
    if kind not in ("union", "min", "max"):
        raise ValueError("kind must be 'union', 'min', or 'max'")
    p = _overlap_counts(dictionary)
    sizes = np.diag(p).astype(np.float64)
    if kind == "union":
        denom = sizes[:, None] + sizes[None, :] - p
    elif kind == "min":
        denom = np.minimum(sizes[:, None], sizes[None, :])
    else:
        denom = np.maximum(sizes[:, None], sizes[None, :])
    d = 1.0 - p / denom
    np.clip(d, 0.0, 1.0, out=d)
    np.fill_diagonal(d, 0.0)
    return DissimilarityMatrix(d, kind)


def temporal_dissimilarity(
    dictionary: SpatialDictionary, yb: ThresholdedVideo
) -> DissimilarityMatrix:
    """Cosine dissimilarity between aggregate thresholded traces.

    Element i's trace is the thresholded fluorescence of each frame summed
    over the element's pixels. An element with an all-zero trace carries no
    temporal evidence and is set maximally dissimilar (1) to every other
    element.
    """
    A = dictionary.to_sparse()
    V = (A.T @ yb.values)  # K x T aggregate traces
    V = np.asarray(V)
    norms = np.sqrt((V**2).sum(axis=1))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    G = V @ V.T
    d = 1.0 - G / np.outer(safe, safe)
    d[zero, :] = 1.0
    d[:, zero] = 1.0
    np.clip(d, 0.0, 1.0, out=d)
    np.fill_diagonal(d, 0.0)
    return DissimilarityMatrix(d, "temporal")


def combined_dissimilarity(
    ds: DissimilarityMatrix, dt: DissimilarityMatrix, omega: float
) -> DissimilarityMatrix:
    """Blend spatial and temporal dissimilarities:
    ``omega * d_spatial + (1 - omega) * d_temporal``.
    """
    if ds.values.shape != dt.values.shape:
        raise ValueError("dissimilarity matrices must have matching shapes")
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must be in [0, 1]")
    return DissimilarityMatrix(omega * ds.values + (1.0 - omega) * dt.values, "combined")


def protoclust(D: DissimilarityMatrix) -> Dendrogram:
    """Agglomerative clustering under minimax linkage.

    The linkage between two clusters is the minimax radius of their union:
    the smallest, over candidate prototypes in the union, of the maximum
    dissimilarity from the prototype to every member. Each merge records
    that radius as its height and the achieving member as its prototype.
    Ties (equal radii) break toward the lexicographically smallest cluster
    id pair, and ties among prototype candidates toward the lowest element
    index.
    """
    K = D.n
    if K == 0:
        raise ValueError("empty dictionary")
    dist = D.values
    if not np.isfinite(dist).all():
        raise ValueError("dissimilarities must be finite")
    if K == 1:
        return Dendrogram(n_leaves=1, merges=[])

    # members[c]: sorted element indices of cluster c
    # maxd[c][x]:  max dissimilarity from element x to any member of c
    members: dict[int, np.ndarray] = {i: np.array([i], dtype=np.int64) for i in range(K)}
    maxd: dict[int, np.ndarray] = {i: dist[i].copy() for i in range(K)}
    active = set(range(K))

    heap: list[tuple[float, int, int]] = []
    for i in range(K):
        for j in range(i + 1, K):
            # minimax radius of a pair is just their dissimilarity
            heap.append((dist[i, j], i, j))
    heapq.heapify(heap)

    merges: list[Merge] = []
    next_id = K
    while len(active) > 1:
        while True:
            height, a, b = heapq.heappop(heap)
            if a in active and b in active:
                break
        active.discard(a)
        active.discard(b)
        union = np.concatenate([members[a], members[b]])
        union.sort()
        radius = np.maximum(maxd[a], maxd[b])
        candidates = radius[union]
        proto = int(union[int(np.argmin(candidates))])
        merges.append(Merge(left=a, right=b, height=float(height), prototype=proto))
        members[next_id] = union
        maxd[next_id] = radius
        del members[a], members[b], maxd[a], maxd[b]
        for w in active:
            mm = np.maximum(radius, maxd[w])
            link = min(mm[union].min(), mm[members[w]].min())
            heapq.heappush(heap, (float(link), w, next_id))
        active.add(next_id)
        next_id += 1
    return Dendrogram(n_leaves=K, merges=merges)


def cut_dendrogram(dend: Dendrogram, h: float) -> list[np.ndarray]:
    """Clusters formed by all merges with height <= h.

    Returns sorted element-index arrays, ordered by smallest member.
    """
    parent = {i: i for i in range(dend.n_leaves)}
    members = {i: [i] for i in range(dend.n_leaves)}
    next_id = dend.n_leaves
    for merge in dend.merges:
        if merge.height <= h:
            merged = members.pop(merge.left) + members.pop(merge.right)
            members[next_id] = merged
        next_id += 1
    clusters = [np.array(sorted(v), dtype=np.int64) for v in members.values()]
    clusters.sort(key=lambda c: c[0])
    return clusters


def cluster_representatives(
    clusters: list[np.ndarray], D: DissimilarityMatrix, dictionary: SpatialDictionary
) -> tuple[SpatialDictionary, list[int]]:
    """Pick one member per cluster: the one with the smallest median
    dissimilarity to the other members (self-distance excluded; ties go to
    the lowest element index). Returns the refined dictionary and the
    member count of each cluster.
    """
    dist = D.values
    representatives: list[SpatialComponent] = []
    sizes: list[int] = []
    for cluster in clusters:
        cluster = np.asarray(cluster, dtype=np.int64)
        if cluster.size == 1:
            rep = int(cluster[0])
        else:
            sub = dist[np.ix_(cluster, cluster)]
            # median over the other members: drop the self-distance column
            medians = np.array([
                np.median(np.delete(sub[i], i)) for i in range(cluster.size)
            ])
            rep = int(cluster[int(np.argmin(medians))])
        representatives.append(dictionary.components[rep])
        sizes.append(int(cluster.size))
    return SpatialDictionary(representatives, dictionary.geometry), sizes
