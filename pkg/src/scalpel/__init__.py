"""Neuron identification and calcium trace estimation for calcium
imaging videos: per-frame segmentation builds a large dictionary of
candidate masks, prototype clustering de-duplicates it, and a
non-negative sparse group lasso jointly selects components and estimates
their traces.
"""

from .video import FrameGeometry, ThresholdedVideo, VideoMatrix, quantile, threshold_video
from .preprocess import PreprocessConfig, bleach_correct, delta_f_over_f, gaussian_smooth, preprocess
from .segment import (
    SegmentConfig,
    SpatialComponent,
    SpatialDictionary,
    build_preliminary_dictionary,
    compute_thresholds,
    connected_components,
    filter_components,
    threshold_frame,
)
from .cluster import (
    ClusterConfig,
    Dendrogram,
    DissimilarityMatrix,
    Merge,
    alternative_spatial_dissimilarities,
    cluster_representatives,
    combined_dissimilarity,
    cut_dendrogram,
    protoclust,
    spatial_dissimilarity,
    temporal_dissimilarity,
)
from .solver import (
    ConvergenceError,
    OverlapPartition,
    ScaledDictionary,
    SGLConfig,
    TemporalTraces,
    corollary_bound,
    filter_dictionary,
    lambda_quantile_rule,
    max_lambda,
    nonneg_group_soft_threshold,
    partition_components,
    scale_dictionary,
    select_lambda_validation,
    sgl_objective,
    solve_group_ggd,
    solve_path,
    solve_sgl,
    solve_single,
)
from .pipeline import PipelineConfig, PipelineError, RunManifest, emit_diagnostics, run_pipeline
from .synth import SyntheticSpec, generate, oracle_flood_fill, oracle_sgl, random_synthetic_spec
from .io import load_video, save_video_flat

__version__ = "0.1.0"
