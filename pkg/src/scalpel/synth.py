"""Synthetic videos with known ground truth, plus brute-force oracles.

The generator is the forward model of the factorization: binary masks
times non-negative traces, plus a per-frame trend (which doubles as the
constant baseline level) and i.i.d. Gaussian noise. The oracles are
deliberately primitive so they share no algorithmic structure with the
main pipeline: a recursive-style flood fill for connectivity, and
projected subgradient descent for the penalized problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .video import FrameGeometry, VideoMatrix

__all__ = [
    "SyntheticSpec",
    "generate",
    "ellipse_pixels",
    "random_traces",
    "random_synthetic_spec",
    "oracle_sgl",
    "oracle_flood_fill",
]


@dataclass
class SyntheticSpec:
    """Ground-truth description of a synthetic video."""

    geometry: FrameGeometry
    n_frames: int
    masks: list[np.ndarray]          # one sorted pixel-index array per neuron
    traces: np.ndarray               # K x T, entrywise >= 0
    noise_sd: float = 0.0
    trend: np.ndarray | None = None  # per-frame offsets (baseline + bleaching)
    seed: int = 0

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=np.float64)
        if self.traces.shape != (len(self.masks), self.n_frames):
            raise ValueError("traces must be K x T with one row per mask")
        if (self.traces < 0).any():
            raise ValueError("ground-truth traces must be non-negative")
        for m in self.masks:
            m = np.asarray(m)
            if m.size == 0 or m.min() < 0 or m.max() >= self.geometry.n_pixels:
                raise ValueError("mask pixels must lie within the geometry")
        if self.trend is not None:
            self.trend = np.asarray(self.trend, dtype=np.float64)
            if self.trend.shape != (self.n_frames,):
                raise ValueError("trend must hold one offset per frame")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


def generate(spec: SyntheticSpec) -> tuple[VideoMatrix, tuple[np.ndarray, np.ndarray]]:
    """Render the forward model: masks @ traces + trend + noise.

    Returns the raw video and the ground truth pair ``(A, Z)`` where A is
    the dense P x K binary mask matrix.
    """
    P = spec.geometry.n_pixels
    K = len(spec.masks)
    A = np.zeros((P, K))
    for k, m in enumerate(spec.masks):
        A[np.asarray(m, dtype=np.int64), k] = 1.0
    values = A @ spec.traces
    if spec.trend is not None:
        values = values + spec.trend[None, :]
    if spec.noise_sd > 0:
        rng = np.random.default_rng(spec.seed)
        values = values + rng.normal(0.0, spec.noise_sd, values.shape)
    return VideoMatrix(values, spec.geometry), (A, spec.traces.copy())


def ellipse_pixels(geometry: FrameGeometry, center: tuple[float, float], axes: tuple[float, float]) -> np.ndarray:
    """Flat indices of pixels inside an axis-aligned ellipse."""
    rows = np.arange(geometry.height)[:, None]
    cols = np.arange(geometry.width)[None, :]
    r0, c0 = center
    ar, ac = axes
    inside = ((rows - r0) / ar) ** 2 + ((cols - c0) / ac) ** 2 <= 1.0
    return np.flatnonzero(inside.ravel())


def random_traces(rng: np.random.Generator, n_neurons: int, n_frames: int,
                  events_per_neuron: int = 10, decay: float = 0.6,
                  amplitude: float = 1.0) -> np.ndarray:
    """Sparse spike-and-decay traces with peaks near ``amplitude``."""
    Z = np.zeros((n_neurons, n_frames))
    kernel_len = 1
    while decay**kernel_len > 0.05:
        kernel_len += 1
    kernel = amplitude * decay ** np.arange(kernel_len)
    for k in range(n_neurons):
        times = rng.choice(n_frames, size=events_per_neuron, replace=False)
        heights = rng.uniform(0.7, 1.3, size=events_per_neuron)
        for t0, h in zip(times, heights):
            stop = min(n_frames, t0 + kernel_len)
            Z[k, t0:stop] += h * kernel[: stop - t0]
    return Z


def random_synthetic_spec(
    seed: int,
    geometry: FrameGeometry = FrameGeometry(50, 50),
    n_frames: int = 500,
    n_disjoint: int = 8,
    n_overlapping: int = 2,
    noise_ratio: float = 0.2,
    baseline: float = 100.0,
    bleach_drop: float = 10.0,
    amplitude: float = 30.0,
    events_per_neuron: int = 10,
) -> SyntheticSpec:
    """Build a spec with elliptical neurons on a grid: ``n_disjoint``
    separated cells plus one overlapping pair per two ``n_overlapping``.
    Noise sd is ``noise_ratio`` times the peak trace amplitude; the trend
    is a constant baseline with a linear bleaching decay.
    """
    rng = np.random.default_rng(seed)
    masks: list[np.ndarray] = []
    # place disjoint neurons on a coarse grid with jitter
    n_cells = n_disjoint + n_overlapping
    grid = int(np.ceil(np.sqrt(n_disjoint + (n_overlapping + 1) // 2)))
    cell_h = geometry.height / grid
    cell_w = geometry.width / grid
    slots = [(i, j) for i in range(grid) for j in range(grid)]
    rng.shuffle(slots)
    for k in range(n_disjoint):
        i, j = slots[k]
        r0 = (i + 0.5) * cell_h + rng.uniform(-1, 1)
        c0 = (j + 0.5) * cell_w + rng.uniform(-1, 1)
        ar = rng.uniform(2.5, min(5.0, cell_h / 2 - 1))
        ac = rng.uniform(2.5, min(5.0, cell_w / 2 - 1))
        masks.append(ellipse_pixels(geometry, (r0, c0), (ar, ac)))
    # each overlapping pair shares one grid slot, offset so they intersect
    for k in range(0, n_overlapping, 2):
        i, j = slots[n_disjoint + k // 2]
        r0 = (i + 0.5) * cell_h
        c0 = (j + 0.5) * cell_w
        ar = min(4.0, cell_h / 2 - 1)
        ac = min(4.0, cell_w / 2 - 1)
        masks.append(ellipse_pixels(geometry, (r0 - 1.5, c0 - 1.5), (ar, ac)))
        if k + 1 < n_overlapping:
            masks.append(ellipse_pixels(geometry, (r0 + 1.5, c0 + 1.5), (ar, ac)))
    traces = random_traces(
        rng, len(masks), n_frames, events_per_neuron=events_per_neuron,
        amplitude=amplitude,
    )
    trend = baseline - bleach_drop * np.arange(n_frames) / max(n_frames - 1, 1)
    return SyntheticSpec(
        geometry=geometry,
        n_frames=n_frames,
        masks=masks,
        traces=traces,
        noise_sd=noise_ratio * amplitude,
        trend=trend,
        seed=seed,
    )


@njit(cache=True)
def _subgradient_loop(Y, A, lam, alpha, iters, c, Z0):
    K = A.shape[1]
    T = Y.shape[1]
    Z = Z0.copy()
    best = np.inf
    best_Z = Z.copy()
    for b in range(1, iters + 1):
        R = Y - A @ Z
        obj = 0.5 * (R**2).sum() + lam * alpha * Z.sum()
        G = -A.T @ R + lam * alpha
        for k in range(K):
            norm_k = np.sqrt((Z[k] ** 2).sum())
            obj += lam * (1.0 - alpha) * norm_k
            if norm_k > 0:
                for t in range(T):
                    G[k, t] += lam * (1.0 - alpha) * Z[k, t] / norm_k
        if obj < best:
            best = obj
            best_Z = Z.copy()
        step = c / np.sqrt(b)
        Z = Z - step * G
        for k in range(K):
            for t in range(T):
                if Z[k, t] < 0.0:
                    Z[k, t] = 0.0
    return best_Z, best


def oracle_sgl(Y: np.ndarray, A_tilde: np.ndarray, lam: float, alpha: float,
               iters: int = 10**6, step_scale: float | None = None) -> np.ndarray:
    """Projected subgradient descent on the full penalized objective.

    Diminishing steps ``c / sqrt(b)``, projection onto the non-negative
    orthant, best-objective iterate returned. When a penalty is active the
    iteration budget is split into eight stages with step scales c/4^s,
    each starting from the best iterate so far: near a kink of the penalty
    the iterate oscillates with amplitude proportional to the step, so the
    shrinking scales settle it without stalling the initial descent.
    Intended for tiny instances only; slow, but shares nothing with the
    proximal solver.
    """
    Y = np.asarray(Y, dtype=np.float64)
    A = np.asarray(A_tilde, dtype=np.float64)
    if step_scale is None:
        step_scale = 0.5 * max(1.0, float(np.abs(Y).max())) / (1.0 + lam)
    scales = [step_scale] if lam == 0 else [step_scale / 4**s for s in range(8)]
    budget = int(iters) // len(scales)
    best_Z = np.zeros((A.shape[1], Y.shape[1]))
    best = np.inf
    for c in scales:
        Z, obj = _subgradient_loop(Y, A, float(lam), float(alpha), budget, float(c), best_Z)
        if obj < best:
            best, best_Z = obj, Z
    return best_Z


def oracle_flood_fill(image: np.ndarray) -> list[np.ndarray]:
    """4-neighborhood flood fill over a binary image, one stack-based fill
    per unvisited foreground pixel, scanning in raster order. Returns
    sorted flat-index arrays ordered by smallest member."""
    image = np.asarray(image)
    height, width = image.shape
    seen = np.zeros_like(image, dtype=bool)
    out = []
    for r0 in range(height):
        for c0 in range(width):
            if image[r0, c0] == 0 or seen[r0, c0]:
                continue
            stack = [(r0, c0)]
            seen[r0, c0] = True
            pixels = []
            while stack:
                r, c = stack.pop()
                pixels.append(r * width + c)
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < height and 0 <= cc < width and image[rr, cc] != 0 and not seen[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
            out.append(np.array(sorted(pixels), dtype=np.int64))
    out.sort(key=lambda p: p[0])
    return out
