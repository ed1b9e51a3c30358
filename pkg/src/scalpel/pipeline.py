"""End-to-end orchestration: standardize, segment, cluster, filter, solve.

A run owns its output directory: intermediate artifacts (the standardized
video, the preliminary and refined dictionaries) are persisted so the
expensive standardization runs once per data set even when the later
steps are re-tuned, and the final masks, traces, diagnostics, and a JSON
manifest are written next to them. Reruns with the same configuration and
seed produce byte-identical CSVs.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as sio
from .cluster import (
    ClusterConfig,
    alternative_spatial_dissimilarities,
    combined_dissimilarity,
    cut_dendrogram,
    cluster_representatives,
    protoclust,
    spatial_dissimilarity,
    temporal_dissimilarity,
)
from .preprocess import PreprocessConfig, preprocess
from .segment import (
    SegmentConfig,
    SpatialDictionary,
    build_preliminary_dictionary,
    compute_thresholds,
)
from .solver import (
    SGLConfig,
    filter_dictionary,
    lambda_quantile_rule,
    select_lambda_validation,
    solve_sgl,
)
from .video import VideoMatrix, quantile, threshold_video

__all__ = [
    "PipelineConfig",
    "RunManifest",
    "PipelineError",
    "run_pipeline",
    "emit_diagnostics",
    "parse_keep_drop",
]

_LAMBDA_MODES = ("quantile", "validation", "fixed")


@dataclass
class PipelineConfig:
    input_path: str | None = None
    input_format: str = "flat"
    out_dir: str = "scalpel-out"
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    sgl: SGLConfig = field(default_factory=SGLConfig)
    min_members: int = 5
    lambda_mode: str = "quantile"
    lambda_value: float | None = None
    seed: int = 0
    keep_drop: list[tuple[str, int]] | None = None

    def __post_init__(self):
        if self.lambda_mode not in _LAMBDA_MODES:
            raise ValueError(f"lambda_mode must be one of {_LAMBDA_MODES}")
        if self.lambda_mode == "fixed" and self.lambda_value is None:
            raise ValueError("lambda_mode 'fixed' requires lambda_value")
        if self.min_members < 1:
            raise ValueError("min_members must be >= 1")


@dataclass
class RunManifest:
    """Summary of one pipeline run: configuration snapshot, per-step
    counts, the thresholds and penalty weight used, and timings."""

    config: dict
    n_preliminary: int
    n_refined: int
    n_filtered: int
    n_selected: int
    thresholds: list[float]
    lambda_mode: str
    lambda_value: float
    seed: int
    timings: dict[str, float]
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.n_preliminary >= self.n_refined >= self.n_filtered >= self.n_selected:
            raise ValueError("component counts must be non-increasing across steps")

    def counts(self) -> tuple[int, int, int, int]:
        return (self.n_preliminary, self.n_refined, self.n_filtered, self.n_selected)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


class PipelineError(RuntimeError):
    """A pipeline step failed; ``step`` names it."""

    def __init__(self, step: str, cause: BaseException):
        super().__init__(f"step {step!r} failed: {cause}")
        self.step = step


def parse_keep_drop(path) -> list[tuple[str, int]]:
    """Parse a manual review file of ``keep <k>`` / ``drop <k>`` lines
    (indices refer to columns of the refined dictionary; ``#`` comments
    and blank lines are ignored)."""
    actions = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("keep", "drop") or not parts[1].isdigit():
            raise ValueError(f"{path}:{lineno}: expected 'keep <k>' or 'drop <k>', got {line!r}")
        actions.append((parts[0], int(parts[1])))
    return actions


def _timed(timings: dict, step: str, fn):
    start = time.perf_counter()
    try:
        result = fn()
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(step, exc) from exc
    timings[step] = time.perf_counter() - start
    return result


def _spatial_dissimilarity(dictionary, cfg: ClusterConfig):
    if cfg.spatial_metric == "cosine":
        return spatial_dissimilarity(dictionary)
    return alternative_spatial_dissimilarities(dictionary, cfg.spatial_metric)


def run_pipeline(cfg: PipelineConfig, raw: VideoMatrix | None = None) -> RunManifest:
    """Execute every step and write all artifacts under ``cfg.out_dir``.

    ``raw`` may be passed directly to skip the loading step (the manifest
    then records no input path). Deterministic given the configuration and
    seed."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    notes: list[str] = []

    if raw is None:
        if cfg.input_path is None:
            raise ValueError("either raw video or cfg.input_path is required")
        raw = _timed(timings, "load", lambda: sio.load_video(cfg.input_path, cfg.input_format))

    def _preprocess():
        Y = preprocess(raw, cfg.preprocess)
        sio.save_video_flat(Y, out / "preprocessed.bin", dtype="float64")
        return Y

    Y = _timed(timings, "preprocess", _preprocess)

    def _segment():
        thresholds = compute_thresholds(Y, cfg.segment.threshold_quantile)
        prelim = build_preliminary_dictionary(Y, cfg.segment, thresholds)
        sio.write_masks_csv(out / "preliminary_masks.csv", [c.pixels for c in prelim.components])
        sio.write_provenance_csv(out / "preliminary_provenance.csv", prelim.components)
        return thresholds, prelim

    thresholds, prelim = _timed(timings, "segment", _segment)

    def _cluster():
        yb = threshold_video(Y, -quantile(Y, cfg.segment.threshold_quantile))
        ds = _spatial_dissimilarity(prelim, cfg.cluster)
        dt = temporal_dissimilarity(prelim, yb)
        d = combined_dissimilarity(ds, dt, cfg.cluster.omega)
        dend = protoclust(d)
        clusters = cut_dendrogram(dend, cfg.cluster.cut_height)
        refined, sizes = cluster_representatives(clusters, d, prelim)
        sio.write_masks_csv(out / "refined_masks.csv", [c.pixels for c in refined.components])
        sio.write_provenance_csv(out / "refined_provenance.csv", refined.components)
        sio.write_sizes_csv(out / "cluster_sizes.csv", sizes)
        return refined, sizes

    refined, sizes = _timed(timings, "cluster", _cluster)

    filtered, kept = _timed(
        timings,
        "filter",
        lambda: filter_dictionary(refined, sizes, cfg.min_members, cfg.keep_drop),
    )

    def _choose_lambda():
        if cfg.lambda_mode == "fixed":
            return float(cfg.lambda_value)
        if cfg.lambda_mode == "quantile":
            return lambda_quantile_rule(Y, cfg.sgl.alpha, q=cfg.segment.threshold_quantile)
        return select_lambda_validation(
            Y,
            filtered,
            cfg.sgl.alpha,
            cfg=cfg.sgl,
            seed=cfg.seed,
            threshold_quantile=cfg.segment.threshold_quantile,
        )

    lam = _timed(timings, "lambda", _choose_lambda)

    traces = _timed(timings, "solve", lambda: solve_sgl(Y, filtered, lam, cfg.sgl.alpha, cfg.sgl))

    def _write():
        sio.write_masks_csv(out / "masks.csv", [c.pixels for c in filtered.components])
        sio.write_traces_csv(out / "traces.csv", traces.values)
        _write_mask_images(filtered, out / "masks")
        emit_diagnostics(Y, filtered, traces.values, out / "diagnostics")
        return None

    _timed(timings, "write", _write)

    n_selected = int(traces.nonzero_rows().size)
    if filtered.n_components == 0:
        notes.append("empty result: no components survived filtering")

    config_snapshot = {
        "input_path": cfg.input_path,
        "input_format": cfg.input_format,
        "out_dir": str(out),
        "preprocess": asdict(cfg.preprocess),
        "segment": asdict(cfg.segment),
        "cluster": asdict(cfg.cluster),
        "sgl": {**asdict(cfg.sgl)},
        "min_members": cfg.min_members,
        "lambda_mode": cfg.lambda_mode,
        "lambda_value": cfg.lambda_value,
        "seed": cfg.seed,
        "keep_drop": cfg.keep_drop,
    }
    manifest = RunManifest(
        config=config_snapshot,
        n_preliminary=prelim.n_components,
        n_refined=refined.n_components,
        n_filtered=filtered.n_components,
        n_selected=n_selected,
        thresholds=[float(t) for t in thresholds],
        lambda_mode=cfg.lambda_mode,
        lambda_value=float(lam),
        seed=cfg.seed,
        timings=timings,
        notes=notes,
    )
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def _variance_image(values: np.ndarray, geometry) -> np.ndarray:
    var = values.var(axis=1)
    return var.reshape(geometry.height, geometry.width)


def _to_uint8(image: np.ndarray) -> np.ndarray:
    peak = image.max()
    if peak <= 0:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.clip(255.0 * image / peak, 0, 255).astype(np.uint8)


def _write_mask_images(dictionary: SpatialDictionary, directory: Path) -> None:
    from PIL import Image

    directory.mkdir(parents=True, exist_ok=True)
    for k, comp in enumerate(dictionary.components):
        img = Image.fromarray(comp.as_mask() * np.uint8(255), mode="L")
        img.save(directory / f"component_{k:03d}.png")


def emit_diagnostics(Y: VideoMatrix, Af: SpatialDictionary, Z_hat: np.ndarray, outdir) -> None:
    """Write the pixel-wise variance heat map, per-component mask overlays
    on that map, and per-component trace plots, plus a variance CSV.

    Pixels inside true components should show clearly higher variance than
    background; the overlays make mismatches easy to spot."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from PIL import Image

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    variance = _variance_image(Y.values, Y.geometry)
    lines = ["pixel,variance"]
    lines.extend(f"{p},{repr(float(v))}" for p, v in enumerate(variance.ravel()))
    (outdir / "variance.csv").write_text("\n".join(lines) + "\n")

    base = _to_uint8(variance)
    Image.fromarray(base, mode="L").save(outdir / "variance_map.png")

    for k, comp in enumerate(Af.components):
        overlay = np.stack([base, base, base], axis=-1)
        rows = comp.pixels // Y.geometry.width
        cols = comp.pixels % Y.geometry.width
        overlay[rows, cols, 0] = 255
        overlay[rows, cols, 1] = overlay[rows, cols, 1] // 2
        overlay[rows, cols, 2] = overlay[rows, cols, 2] // 2
        Image.fromarray(overlay, mode="RGB").save(outdir / f"component_{k:03d}_overlay.png")

        fig, ax = plt.subplots(figsize=(8, 2))
        ax.plot(Z_hat[k], linewidth=0.8)
        ax.set_xlabel("frame")
        ax.set_ylabel("trace")
        ax.set_title(f"component {k}")
        fig.tight_layout()
        fig.savefig(outdir / f"component_{k:03d}_trace.png", dpi=100)
        plt.close(fig)
