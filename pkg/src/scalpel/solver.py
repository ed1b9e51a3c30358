"""Joint component selection and trace estimation via a non-negative
sparse group lasso.

Given a filtered dictionary of binary masks, each column is rescaled by
its squared norm (so every nonzero entry is 1/size, and component size
does not bias selection), the columns are partitioned into spatially
overlapping groups, and each group's traces are estimated by minimizing

    0.5 * ||Y - A_scaled Z||_F^2
        + lam * alpha * sum_k ||z_k||_1
        + lam * (1 - alpha) * sum_k ||z_k||_2      subject to Z >= 0.

The problem separates across groups: each group is solved on its own
pixel footprint only, which is what makes the step fast. Singleton groups
have a closed form; larger groups run proximal gradient descent whose
prox is a non-negative group soft-threshold. Rows of the solution that
come back all-zero are deselected dictionary elements.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _graph_components

from .segment import SpatialDictionary
from .video import VideoMatrix, quantile

__all__ = [
    "ScaledDictionary",
    "OverlapPartition",
    "SGLConfig",
    "TemporalTraces",
    "ConvergenceError",
    "scale_dictionary",
    "partition_components",
    "nonneg_group_soft_threshold",
    "solve_single",
    "solve_group_ggd",
    "solve_sgl",
    "solve_path",
    "sgl_objective",
    "max_lambda",
    "corollary_bound",
    "lambda_quantile_rule",
    "select_lambda_validation",
    "filter_dictionary",
]


@dataclass
class ScaledDictionary:
    """P x K_f matrix whose k-th column is the k-th mask divided by its
    pixel count (squared Euclidean norm of a binary column)."""

    matrix: sparse.csc_matrix
    source: SpatialDictionary

    @property
    def n_components(self) -> int:
        return self.matrix.shape[1]


@dataclass
class OverlapPartition:
    """Connected components of the column-overlap graph.

    ``groups[s]`` holds the column indices of group s; ``footprints[s]``
    the union of their pixels. Footprints are pairwise disjoint.
    """

    groups: list[np.ndarray]
    footprints: list[np.ndarray]

    @property
    def n_groups(self) -> int:
        return len(self.groups)


@dataclass
class SGLConfig:
    lam: float | None = None
    alpha: float = 0.9
    tol: float = 1e-8
    max_iter: int = 10_000
    iterate_tol: float | None = None

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be > 0 and max_iter >= 1")
        if self.iterate_tol is not None and self.iterate_tol < 0:
            raise ValueError("iterate_tol must be >= 0")


@dataclass
class TemporalTraces:
    """K_f x T matrix of estimated calcium traces, entrywise >= 0."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if (v < 0).any():
            raise ValueError("traces must be non-negative")
        self.values = v

    def nonzero_rows(self) -> np.ndarray:
        return np.flatnonzero((self.values != 0).any(axis=1))


class ConvergenceError(RuntimeError):
    """Raised when the group solver hits max_iter. Carries the last
    iterate (``traces``) and the final relative objective change
    (``gap``)."""

    def __init__(self, message: str, traces: np.ndarray, gap: float):
        super().__init__(message)
        self.traces = traces
        self.gap = gap


def scale_dictionary(Af: SpatialDictionary) -> ScaledDictionary:
    """Divide each binary column by its squared norm (its pixel count)."""
    if Af.n_components == 0:
        raise ValueError("cannot scale an empty dictionary")
    A = Af.to_sparse()
    sizes = Af.sizes().astype(np.float64)
    if (sizes == 0).any():
        raise ValueError("dictionary contains an empty column")
    scaled = A @ sparse.diags(1.0 / sizes)
    return ScaledDictionary(matrix=scaled.tocsc(), source=Af)


def partition_components(Af: SpatialDictionary) -> OverlapPartition:
    """Group columns by transitive spatial overlap.

    Two columns are adjacent when they share at least one pixel; groups
    are the connected components of that graph, ordered by smallest
    column index.
    """
    K = Af.n_components
    if K == 0:
        return OverlapPartition(groups=[], footprints=[])
    A = Af.to_sparse()
    adjacency = (A.T @ A) > 0
    n_groups, labels = _graph_components(adjacency, directed=False)
    raw = [np.flatnonzero(labels == g) for g in range(n_groups)]
    raw.sort(key=lambda idx: idx[0])
    footprints = [
        np.unique(np.concatenate([Af.components[k].pixels for k in group]))
        for group in raw
    ]
    return OverlapPartition(groups=raw, footprints=footprints)


def nonneg_group_soft_threshold(y: np.ndarray, c: float) -> np.ndarray:
    """Minimizer of ``0.5 * ||y - b||_2^2 + c * ||b||_2`` over b >= 0:
    ``(1 - c / ||(y)+||_2)+ * (y)+``.
    """
    if c < 0:
        raise ValueError("threshold must be >= 0")
    yp = np.clip(y, 0.0, None)
    norm = float(np.sqrt((yp**2).sum()))
    if norm == 0.0 or c >= norm:
        return np.zeros_like(yp)
    return (1.0 - c / norm) * yp


def solve_single(Y_M: np.ndarray, a_tilde: np.ndarray, lam: float, alpha: float) -> np.ndarray:
    """Closed-form trace for a one-column group.

    ``Y_M.T @ a_tilde`` is the average footprint fluorescence per frame;
    it is soft-thresholded by lam*alpha, group-soft-scaled by
    lam*(1-alpha), and divided by ``a_tilde.T @ a_tilde``.
    """
    a_tilde = np.asarray(a_tilde, dtype=np.float64)
    v = Y_M.T @ a_tilde
    aTa = float(a_tilde @ a_tilde)
    if aTa == 0.0:
        return np.zeros(Y_M.shape[1])
    u = v - lam * alpha
    return nonneg_group_soft_threshold(u, lam * (1.0 - alpha)) / aTa


def _row_prox(Yt: np.ndarray, c: float) -> np.ndarray:
    """Row-wise non-negative group soft-threshold of a matrix."""
    Yp = np.clip(Yt, 0.0, None)
    norms = np.sqrt((Yp**2).sum(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = np.where(norms > c, 1.0 - c / norms, 0.0)
    return factors[:, None] * Yp


def _group_objective(Z, AtY, G, YtY_half, lam, alpha):
    fit = YtY_half - (AtY * Z).sum() + 0.5 * (Z * (G @ Z)).sum()
    return (
        fit
        + lam * alpha * Z.sum()
        + lam * (1.0 - alpha) * np.sqrt((Z**2).sum(axis=1)).sum()
    )


def solve_group_ggd(
    Y_M: np.ndarray,
    A_MN: np.ndarray,
    lam: float,
    alpha: float,
    cfg: SGLConfig | None = None,
    warm_start: np.ndarray | None = None,
    track_objective: bool = False,
):
    """Proximal gradient descent for a multi-column group.

    The smooth part is the squared loss plus the linear l1 term (exact on
    the non-negative orthant); the prox handles the row-wise l2 penalty
    and the positivity constraint. The step size comes from a diagonal
    dominance bound on the Gram matrix, which guarantees majorization.

    Returns ``(Z, objectives)`` where ``objectives`` is the per-iteration
    objective history when requested (otherwise just the final value).
    """
    cfg = cfg or SGLConfig()
    n_cols = A_MN.shape[1]
    T = Y_M.shape[1]
    G = A_MN.T @ A_MN
    t = 1.0 / float(np.abs(G).sum(axis=0).max())
    AtY = A_MN.T @ Y_M
    YtY_half = 0.5 * float((Y_M**2).sum())

    if warm_start is not None:
        Z = np.asarray(warm_start, dtype=np.float64).copy()
        if Z.shape != (n_cols, T):
            raise ValueError("warm start has wrong shape")
        if (Z < 0).any():
            raise ValueError("warm start must be non-negative")
    else:
        Z = np.zeros((n_cols, T))

    prev = _group_objective(Z, AtY, G, YtY_half, lam, alpha)
    history = [prev]
    c = lam * (1.0 - alpha) * t
    for _ in range(cfg.max_iter):
        grad = -(AtY - G @ Z) + lam * alpha
        Z_new = _row_prox(Z - t * grad, c)
        obj = _group_objective(Z_new, AtY, G, YtY_half, lam, alpha)
        if track_objective:
            history.append(obj)
        gap = prev - obj
        settled = cfg.iterate_tol is None or np.abs(Z_new - Z).max() <= cfg.iterate_tol
        Z = Z_new
        if gap <= cfg.tol * max(prev, 1e-300) and settled:
            return Z, (history if track_objective else obj)
        prev = obj
    raise ConvergenceError(
        f"group solve did not converge within {cfg.max_iter} iterations "
        f"(last relative change {gap / max(prev, 1e-300):.3e})",
        traces=Z,
        gap=float(gap),
    )


def _solve_groups(
    values: np.ndarray,
    scaled: ScaledDictionary,
    partition: OverlapPartition,
    lam,
    alpha: float,
    cfg: SGLConfig,
    rows: np.ndarray | None = None,
    warm: dict[int, np.ndarray] | None = None,
) -> np.ndarray:
    """Dispatch every group to the closed form or the iterative solver.

    ``rows``, when given, restricts the data and dictionary to a subset of
    pixels (used for training-pixel solves); the column scaling is left
    untouched. ``lam`` may be a scalar or a per-group sequence. ``warm``
    maps group index to a starting iterate and is updated in place.
    """
    K = scaled.n_components
    T = values.shape[1]
    Z = np.zeros((K, T))
    A = scaled.matrix
    in_rows = None
    if rows is not None:
        in_rows = np.zeros(A.shape[0], dtype=bool)
        in_rows[rows] = True
    lams = np.broadcast_to(np.asarray(lam, dtype=np.float64), (partition.n_groups,))
    for s, (group, footprint) in enumerate(zip(partition.groups, partition.footprints)):
        if in_rows is not None:
            footprint = footprint[in_rows[footprint]]
            if footprint.size == 0:
                continue
        Y_M = values[footprint, :]
        block = np.asarray(A[footprint][:, group].todense())
        if group.size == 1:
            Z[group[0]] = solve_single(Y_M, block[:, 0], float(lams[s]), alpha)
        else:
            start = warm.get(s) if warm is not None else None
            Z_g, _ = solve_group_ggd(
                Y_M, block, float(lams[s]), alpha, cfg=cfg, warm_start=start
            )
            Z[group] = Z_g
            if warm is not None:
                warm[s] = Z_g
    return Z


def solve_sgl(
    Y: VideoMatrix,
    Af: SpatialDictionary,
    lam,
    alpha: float,
    cfg: SGLConfig | None = None,
) -> TemporalTraces:
    """Solve the full problem for one penalty weight.

    ``lam`` may be a scalar or one value per overlap group (in partition
    order). All-zero rows of the result are deselected components.
    """
    if Af.n_components == 0:
        raise ValueError("cannot solve with an empty dictionary")
    cfg = cfg or SGLConfig()
    scaled = scale_dictionary(Af)
    partition = partition_components(Af)
    Z = _solve_groups(Y.values, scaled, partition, lam, alpha, cfg)
    return TemporalTraces(Z)


def solve_path(
    Y: VideoMatrix,
    Af: SpatialDictionary,
    lambdas,
    alpha: float,
    cfg: SGLConfig | None = None,
) -> list[TemporalTraces]:
    """Solve along a strictly descending sequence of penalty weights,
    warm-starting each iterative group solve at the previous solution."""
    lambdas = [float(l) for l in lambdas]
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be strictly descending")
    cfg = cfg or SGLConfig()
    scaled = scale_dictionary(Af)
    partition = partition_components(Af)
    warm: dict[int, np.ndarray] = {}
    out = []
    for lam in lambdas:
        Z = _solve_groups(Y.values, scaled, partition, lam, alpha, cfg, warm=warm)
        out.append(TemporalTraces(Z))
    return out


def sgl_objective(values: np.ndarray, A, Z: np.ndarray, lam: float, alpha: float) -> float:
    """Objective value of the penalized problem at Z (A sparse or dense)."""
    R = values - A @ Z
    return float(
        0.5 * (np.asarray(R) ** 2).sum()
        + lam * alpha * Z.sum()
        + lam * (1.0 - alpha) * np.sqrt((Z**2).sum(axis=1)).sum()
    )


def _row_root(row: np.ndarray, alpha: float, tol: float) -> float:
    """Smallest lam with ``lam*(1-alpha) >= ||(row - lam*alpha)+||_2``.

    The left side is non-decreasing and the right side non-increasing in
    lam, so the condition is monotone and bisection applies. The upper
    bracket is the closed sufficient bound, which always satisfies the
    condition.
    """
    pos = np.clip(row, 0.0, None)
    norm_pos = float(np.sqrt((pos**2).sum()))
    if norm_pos == 0.0:
        return 0.0
    if alpha == 1.0:
        return float(row.max())
    if alpha == 0.0:
        return norm_pos
    hi = min(float(row.max()) / alpha, norm_pos / (1.0 - alpha))
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lhs = mid * (1.0 - alpha)
        rhs = float(np.sqrt((np.clip(row - mid * alpha, 0.0, None) ** 2).sum()))
        if lhs >= rhs:
            hi = mid
        else:
            lo = mid
    return hi


def max_lambda(A_tilde, Y, alpha: float, tol: float = 1e-10) -> float:
    """Smallest penalty weight at which the whole solution is zero.

    For alpha in {0, 1} this is closed-form (the largest positive entry,
    or the largest row norm of the positive part, of ``A_tilde.T @ Y``);
    in between it is found by per-row bisection, bracketed above by the
    closed sufficient bound. Returns 0 when ``A_tilde.T @ Y`` has no
    positive entry.
    """
    R = _correlation_matrix(A_tilde, Y)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if (R <= 0).all():
        return 0.0
    return max(_row_root(R[k], alpha, tol) for k in range(R.shape[0]))


def corollary_bound(A_tilde, Y, alpha: float) -> float:
    """Closed-form sufficient (not necessary) upper bound on the zeroing
    weight for alpha in (0, 1)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("the closed bound applies to alpha in (0, 1)")
    R = _correlation_matrix(A_tilde, Y)
    pos = np.clip(R, 0.0, None)
    per_row = np.minimum(pos.max(axis=1) / alpha, np.sqrt((pos**2).sum(axis=1)) / (1.0 - alpha))
    return float(per_row.max())


def _correlation_matrix(A_tilde, Y) -> np.ndarray:
    if isinstance(A_tilde, ScaledDictionary):
        A_tilde = A_tilde.matrix
    values = Y.values if isinstance(Y, VideoMatrix) else np.asarray(Y)
    return np.asarray((A_tilde.T @ values))


def lambda_quantile_rule(Y: VideoMatrix, alpha: float, q: float = 0.001) -> float:
    """Penalty weight from the noise distribution: the negative of the low
    quantile of the standardized video, divided by alpha. Frames whose
    average fluorescence falls below lam*alpha are zeroed by the closed
    form, so this zeroes out noise-level activity."""
    if alpha <= 0:
        raise ValueError("quantile rule requires alpha > 0")
    return -quantile(Y, q) / alpha


def select_lambda_validation(
    Y: VideoMatrix,
    Af: SpatialDictionary,
    alpha: float,
    cfg: SGLConfig | None = None,
    seed: int = 0,
    n_lambdas: int = 20,
    lambda_min_ratio: float = 0.01,
    threshold_quantile: float = 0.001,
    return_details: bool = False,
):
    """Pick the penalty weight with a pixel-holdout validation set.

    60% of each group footprint (rounded up) is sampled into a training
    set; the model is fit on training pixels over a descending path of
    ``n_lambdas`` weights; validation error is measured against the
    *thresholded* video on held-out pixels (only the bright parts of the
    video need to be reconstructed well); the largest weight within 5% of
    the minimum error wins, and is rescaled by P / |train| to account for
    the unnormalized squared loss of the full-pixel problem.

    With ``return_details`` the selected weight comes with the path, the
    error curve, and the pixel split.
    """
    cfg = cfg or SGLConfig()
    scaled = scale_dictionary(Af)
    partition = partition_components(Af)
    rng = np.random.default_rng(seed)
    P = Y.n_pixels

    train_parts = []
    for footprint in partition.footprints:
        if footprint.size < 2:
            warnings.warn(
                "a group footprint has a single pixel; it trains on that pixel "
                "and contributes no validation pixels"
            )
        n_train = math.ceil(0.6 * footprint.size)
        train_parts.append(rng.choice(footprint, size=n_train, replace=False))
    train = np.unique(np.concatenate(train_parts))
    in_train = np.zeros(P, dtype=bool)
    in_train[train] = True
    validation = np.flatnonzero(~in_train)

    A_train = scaled.matrix[train]
    lam_hi = max_lambda(A_train, Y.values[train, :], alpha)
    if lam_hi == 0.0:
        return (0.0, {}) if return_details else 0.0
    lambdas = np.geomspace(lam_hi, lam_hi * lambda_min_ratio, n_lambdas)

    YB = np.where(Y.values > -quantile(Y, threshold_quantile), Y.values, 0.0)
    YB_val = YB[validation, :]
    A_val = scaled.matrix[validation]

    warm: dict[int, np.ndarray] = {}
    errors = np.empty(n_lambdas)
    for i, lam in enumerate(lambdas):
        Z = _solve_groups(Y.values, scaled, partition, float(lam), alpha, cfg, rows=train, warm=warm)
        resid = YB_val - np.asarray(A_val @ Z)
        errors[i] = (resid**2).sum() / validation.size
    best = errors.min()
    within = np.flatnonzero(errors <= 1.05 * best)
    lam_star = float(lambdas[within[0]])  # path is descending: first hit is largest
    selected = lam_star / (train.size / P)
    if return_details:
        return selected, {
            "lambdas": lambdas,
            "errors": errors,
            "train": train,
            "validation": validation,
            "lam_star": lam_star,
        }
    return selected


def filter_dictionary(
    A: SpatialDictionary,
    cluster_sizes,
    min_members: int,
    manual_keep_drop: list[tuple[str, int]] | None = None,
) -> tuple[SpatialDictionary, list[int]]:
    """Drop columns whose cluster had fewer than ``min_members`` members,
    then apply explicit ``("keep", k)`` / ``("drop", k)`` overrides.

    Returns the filtered dictionary and the kept column indices of ``A``.
    """
    sizes = list(cluster_sizes)
    if len(sizes) != A.n_components:
        raise ValueError("cluster_sizes must align with the dictionary columns")
    keep = [s >= min_members for s in sizes]
    for action, k in manual_keep_drop or []:
        if not 0 <= k < A.n_components:
            raise ValueError(f"keep/drop index {k} out of range")
        if action == "keep":
            keep[k] = True
        elif action == "drop":
            keep[k] = False
        else:
            raise ValueError(f"unknown keep/drop action {action!r}")
    kept = [k for k, flag in enumerate(keep) if flag]
    if not kept:
        raise ValueError("empty filtered dictionary")
    filtered = SpatialDictionary([A.components[k] for k in kept], A.geometry)
    return filtered, kept
