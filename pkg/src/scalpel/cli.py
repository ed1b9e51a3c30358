"""Command-line interface.

``scalpel run`` executes the whole pipeline; ``preprocess``, ``segment``,
``cluster``, and ``solve`` expose the individual steps on persisted
intermediate artifacts, so the expensive standardization can be reused
while re-tuning later steps. ``scalpel synth`` renders a synthetic data
set with ground truth for validation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .cluster import (
    ClusterConfig,
    combined_dissimilarity,
    cut_dendrogram,
    cluster_representatives,
    protoclust,
    temporal_dissimilarity,
)
from .pipeline import (
    PipelineConfig,
    PipelineError,
    _spatial_dissimilarity,
    emit_diagnostics,
    parse_keep_drop,
    run_pipeline,
)
from .preprocess import PreprocessConfig, preprocess
from .segment import (
    SegmentConfig,
    SpatialComponent,
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
from .synth import SyntheticSpec, ellipse_pixels, generate, random_synthetic_spec, random_traces
from .video import FrameGeometry, quantile, threshold_video


def _add_preprocess_options(p):
    p.add_argument("--bandwidth", type=float, default=1.0, help="Gaussian sigma in pixels/frames")
    p.add_argument("--spline-df", type=int, default=10, help="trend spline degrees of freedom")
    p.add_argument("--denom-quantile", type=float, default=0.10, help="global quantile added to delta-f/f denominators")


def _add_segment_options(p):
    p.add_argument("--threshold-quantile", type=float, default=0.001)
    p.add_argument("--min-size", type=int, default=25)
    p.add_argument("--max-size", type=int, default=500)
    p.add_argument("--max-width", type=int, default=30)
    p.add_argument("--max-height", type=int, default=30)


def _add_cluster_options(p):
    p.add_argument("--omega", type=float, default=0.2, help="spatial weight in the combined dissimilarity")
    p.add_argument("--cut-height", type=float, default=0.18)
    p.add_argument("--spatial-metric", choices=["cosine", "union", "min", "max"], default="cosine")


def _add_solve_options(p):
    p.add_argument("--min-members", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--lambda-mode", choices=["quantile", "validation", "fixed"], default="quantile")
    p.add_argument("--lambda", dest="lambda_value", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keep-drop", type=str, default=None, help="file of 'keep <k>' / 'drop <k>' overrides")


def _segment_config(args) -> SegmentConfig:
    return SegmentConfig(
        min_size=args.min_size,
        max_size=args.max_size,
        max_width=args.max_width,
        max_height=args.max_height,
        threshold_quantile=args.threshold_quantile,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scalpel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline")
    run.add_argument("--input", required=True)
    run.add_argument("--format", choices=["frames", "flat"], default="flat")
    run.add_argument("--out", required=True)
    _add_preprocess_options(run)
    _add_segment_options(run)
    _add_cluster_options(run)
    _add_solve_options(run)

    pre = sub.add_parser("preprocess", help="standardize a raw video")
    pre.add_argument("--input", required=True)
    pre.add_argument("--format", choices=["frames", "flat"], default="flat")
    pre.add_argument("--out", required=True)
    _add_preprocess_options(pre)

    seg = sub.add_parser("segment", help="build the preliminary dictionary")
    seg.add_argument("--preprocessed", required=True, help="preprocessed .bin from 'scalpel preprocess'")
    seg.add_argument("--out", required=True)
    _add_segment_options(seg)

    clu = sub.add_parser("cluster", help="refine the dictionary by prototype clustering")
    clu.add_argument("--preprocessed", required=True)
    clu.add_argument("--masks", required=True, help="preliminary_masks.csv")
    clu.add_argument("--provenance", default=None, help="preliminary_provenance.csv (optional)")
    clu.add_argument("--out", required=True)
    clu.add_argument("--threshold-quantile", type=float, default=0.001)
    _add_cluster_options(clu)

    sol = sub.add_parser("solve", help="filter the dictionary and estimate traces")
    sol.add_argument("--preprocessed", required=True)
    sol.add_argument("--masks", required=True, help="refined_masks.csv")
    sol.add_argument("--sizes", required=True, help="cluster_sizes.csv")
    sol.add_argument("--out", required=True)
    sol.add_argument("--threshold-quantile", type=float, default=0.001)
    _add_solve_options(sol)

    syn = sub.add_parser("synth", help="render a synthetic data set with ground truth")
    syn.add_argument("--spec", required=True, help="JSON description of the synthetic video")
    syn.add_argument("--out", required=True)

    return parser


def _cmd_run(args) -> int:
    cfg = PipelineConfig(
        input_path=args.input,
        input_format=args.format,
        out_dir=args.out,
        preprocess=PreprocessConfig(
            bandwidth=args.bandwidth,
            spline_df=args.spline_df,
            denom_quantile=args.denom_quantile,
        ),
        segment=_segment_config(args),
        cluster=ClusterConfig(
            omega=args.omega, cut_height=args.cut_height, spatial_metric=args.spatial_metric
        ),
        sgl=SGLConfig(alpha=args.alpha, tol=args.tol, max_iter=args.max_iter),
        min_members=args.min_members,
        lambda_mode=args.lambda_mode,
        lambda_value=args.lambda_value,
        seed=args.seed,
        keep_drop=parse_keep_drop(args.keep_drop) if args.keep_drop else None,
    )
    manifest = run_pipeline(cfg)
    print(
        f"done: {manifest.n_preliminary} preliminary -> {manifest.n_refined} refined -> "
        f"{manifest.n_filtered} filtered -> {manifest.n_selected} selected "
        f"(lambda={manifest.lambda_value:.6g})"
    )
    return 0


def _cmd_preprocess(args) -> int:
    raw = sio.load_video(args.input, args.format)
    cfg = PreprocessConfig(
        bandwidth=args.bandwidth, spline_df=args.spline_df, denom_quantile=args.denom_quantile
    )
    Y = preprocess(raw, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sio.save_video_flat(Y, out / "preprocessed.bin", dtype="float64")
    print(f"wrote {out / 'preprocessed.bin'}")
    return 0


def _load_preprocessed(path):
    return sio.load_video(path, "flat")


def _cmd_segment(args) -> int:
    Y = _load_preprocessed(args.preprocessed)
    cfg = _segment_config(args)
    thresholds = compute_thresholds(Y, cfg.threshold_quantile)
    dictionary = build_preliminary_dictionary(Y, cfg, thresholds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sio.write_masks_csv(out / "preliminary_masks.csv", [c.pixels for c in dictionary.components])
    sio.write_provenance_csv(out / "preliminary_provenance.csv", dictionary.components)
    (out / "thresholds.json").write_text(json.dumps({"thresholds": thresholds}) + "\n")
    print(f"{dictionary.n_components} preliminary components at thresholds {thresholds}")
    return 0


def _read_dictionary(masks_path, provenance_path, geometry) -> SpatialDictionary:
    pixel_sets = sio.read_masks_csv(masks_path)
    provenance: list[tuple[int, float] | str] = ["unknown"] * len(pixel_sets)
    if provenance_path:
        rows = Path(provenance_path).read_text().strip().splitlines()[1:]
        for row in rows:
            k_str, frame, threshold = row.split(",")
            if frame:
                provenance[int(k_str)] = (int(frame), float(threshold))
    components = [
        SpatialComponent(pixels, geometry, provenance[k]) for k, pixels in enumerate(pixel_sets)
    ]
    return SpatialDictionary(components, geometry)


def _cmd_cluster(args) -> int:
    Y = _load_preprocessed(args.preprocessed)
    dictionary = _read_dictionary(args.masks, args.provenance, Y.geometry)
    cfg = ClusterConfig(omega=args.omega, cut_height=args.cut_height, spatial_metric=args.spatial_metric)
    yb = threshold_video(Y, -quantile(Y, args.threshold_quantile))
    ds = _spatial_dissimilarity(dictionary, cfg)
    dt = temporal_dissimilarity(dictionary, yb)
    d = combined_dissimilarity(ds, dt, cfg.omega)
    dendrogram = protoclust(d)
    clusters = cut_dendrogram(dendrogram, cfg.cut_height)
    refined, sizes = cluster_representatives(clusters, d, dictionary)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sio.write_masks_csv(out / "refined_masks.csv", [c.pixels for c in refined.components])
    sio.write_provenance_csv(out / "refined_provenance.csv", refined.components)
    sio.write_sizes_csv(out / "cluster_sizes.csv", sizes)
    print(f"{dictionary.n_components} -> {refined.n_components} components at cut height {cfg.cut_height}")
    return 0


def _cmd_solve(args) -> int:
    Y = _load_preprocessed(args.preprocessed)
    refined = _read_dictionary(args.masks, None, Y.geometry)
    sizes = sio.read_sizes_csv(args.sizes)
    keep_drop = parse_keep_drop(args.keep_drop) if args.keep_drop else None
    filtered, kept = filter_dictionary(refined, sizes, args.min_members, keep_drop)
    sgl_cfg = SGLConfig(alpha=args.alpha, tol=args.tol, max_iter=args.max_iter)
    if args.lambda_mode == "fixed":
        if args.lambda_value is None:
            raise ValueError("--lambda-mode fixed requires --lambda")
        lam = args.lambda_value
    elif args.lambda_mode == "quantile":
        lam = lambda_quantile_rule(Y, args.alpha, q=args.threshold_quantile)
    else:
        lam = select_lambda_validation(
            Y, filtered, args.alpha, cfg=sgl_cfg, seed=args.seed,
            threshold_quantile=args.threshold_quantile,
        )
    traces = solve_sgl(Y, filtered, lam, args.alpha, sgl_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sio.write_masks_csv(out / "masks.csv", [c.pixels for c in filtered.components])
    sio.write_traces_csv(out / "traces.csv", traces.values)
    emit_diagnostics(Y, filtered, traces.values, out / "diagnostics")
    (out / "solve_manifest.json").write_text(
        json.dumps(
            {
                "kept_columns": kept,
                "lambda_mode": args.lambda_mode,
                "lambda_value": float(lam),
                "n_selected": int(traces.nonzero_rows().size),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(f"solved with lambda={lam:.6g}: {traces.nonzero_rows().size} of {filtered.n_components} selected")
    return 0


def _spec_from_json(payload: dict) -> SyntheticSpec:
    geometry = FrameGeometry(height=int(payload["height"]), width=int(payload["width"]))
    n_frames = int(payload["frames"])
    seed = int(payload.get("seed", 0))
    rng = np.random.default_rng(seed)
    if "neurons" in payload:
        masks = [
            ellipse_pixels(geometry, tuple(n["center"]), tuple(n["axes"]))
            for n in payload["neurons"]
        ]
        traces = random_traces(
            rng,
            len(masks),
            n_frames,
            events_per_neuron=int(payload.get("events_per_neuron", 10)),
            amplitude=float(payload.get("amplitude", 30.0)),
        )
        baseline = float(payload.get("baseline", 100.0))
        drop = float(payload.get("bleach_drop", 10.0))
        trend = baseline - drop * np.arange(n_frames) / max(n_frames - 1, 1)
        return SyntheticSpec(
            geometry=geometry,
            n_frames=n_frames,
            masks=masks,
            traces=traces,
            noise_sd=float(payload.get("noise_sd", 0.0)),
            trend=trend,
            seed=seed,
        )
    return random_synthetic_spec(
        seed,
        geometry=geometry,
        n_frames=n_frames,
        n_disjoint=int(payload.get("n_disjoint", 8)),
        n_overlapping=int(payload.get("n_overlapping", 2)),
        noise_ratio=float(payload.get("noise_ratio", 0.2)),
        baseline=float(payload.get("baseline", 100.0)),
        bleach_drop=float(payload.get("bleach_drop", 10.0)),
        amplitude=float(payload.get("amplitude", 30.0)),
        events_per_neuron=int(payload.get("events_per_neuron", 10)),
    )


def _cmd_synth(args) -> int:
    payload = json.loads(Path(args.spec).read_text())
    spec = _spec_from_json(payload)
    video, (A, Z) = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sio.save_video_flat(video, out / "video.bin", dtype="float64")
    truth = {
        "masks": [np.flatnonzero(A[:, k]).tolist() for k in range(A.shape[1])],
        "traces": Z.tolist(),
    }
    (out / "ground_truth.json").write_text(json.dumps(truth) + "\n")
    print(f"wrote {out / 'video.bin'} ({video.n_pixels} px x {video.n_frames} frames, {A.shape[1]} neurons)")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "preprocess": _cmd_preprocess,
    "segment": _cmd_segment,
    "cluster": _cmd_cluster,
    "solve": _cmd_solve,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
