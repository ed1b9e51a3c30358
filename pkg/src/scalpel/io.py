"""Video ingestion and on-disk artifact formats.

Two video input formats are supported:

* a directory of grayscale PNG/TIFF frames, ordered by zero-padded
  filename;
* a flat little-endian binary of ``P * T`` floats (frame after frame, each
  frame row-major) next to a JSON sidecar ``{"height", "width", "frames"}``
  with an optional ``"dtype"`` of ``"float32"`` (default) or ``"float64"``.

Intermediate artifacts are plain CSVs so they can be inspected and reused
across runs: masks as (component, pixel) pairs, traces as one row per
component, cluster sizes and provenance as small two/three-column tables.
CSV writers format floats with ``repr`` so reruns are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .video import FrameGeometry, VideoMatrix

__all__ = [
    "load_video",
    "save_video_flat",
    "write_masks_csv",
    "read_masks_csv",
    "write_traces_csv",
    "read_traces_csv",
    "write_sizes_csv",
    "read_sizes_csv",
    "write_provenance_csv",
]

_FRAME_SUFFIXES = {".png", ".tif", ".tiff"}
_GRAYSCALE_MODES = {"1", "L", "I", "I;16", "I;16B", "F"}
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def _fmt(x: float) -> str:
    """Shortest exact decimal representation of a float."""
    return repr(float(x))


def load_video(path, format: str) -> VideoMatrix:
    """Load a video from a frame directory (``"frames"``) or a flat binary
    with JSON sidecar (``"flat"``)."""
    path = Path(path)
    if format == "frames":
        return _load_frames(path)
    if format == "flat":
        return _load_flat(path)
    raise ValueError(f"unknown video format {format!r} (expected 'frames' or 'flat')")


def _load_frames(directory: Path) -> VideoMatrix:
    if not directory.is_dir():
        raise ValueError(f"frame directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in _FRAME_SUFFIXES)
    if not files:
        raise ValueError(f"no PNG/TIFF frames found in {directory}")
    columns = []
    geometry = None
    for f in files:
        with Image.open(f) as img:
            if img.mode not in _GRAYSCALE_MODES:
                raise ValueError(f"frame {f.name} is not grayscale (mode {img.mode})")
            arr = np.asarray(img, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"frame {f.name} is not a single-channel image")
        g = FrameGeometry(height=arr.shape[0], width=arr.shape[1])
        if geometry is None:
            geometry = g
        elif g != geometry:
            raise ValueError(
                f"frame {f.name} is {g.height}x{g.width} but earlier frames "
                f"are {geometry.height}x{geometry.width}"
            )
        columns.append(arr.ravel())
    return VideoMatrix(np.stack(columns, axis=1), geometry)


def _sidecar_path(bin_path: Path) -> Path:
    return bin_path.with_suffix(".json")


def _load_flat(bin_path: Path) -> VideoMatrix:
    if bin_path.is_dir():
        raise ValueError(f"flat format expects a .bin file, got directory {bin_path}")
    sidecar = _sidecar_path(bin_path)
    if not sidecar.exists():
        raise ValueError(f"missing sidecar {sidecar}")
    meta = json.loads(sidecar.read_text())
    for key in ("height", "width", "frames"):
        if key not in meta:
            raise ValueError(f"sidecar {sidecar} is missing field {key!r}")
    geometry = FrameGeometry(height=int(meta["height"]), width=int(meta["width"]))
    n_frames = int(meta["frames"])
    dtype = _DTYPES.get(meta.get("dtype", "float32"))
    if dtype is None:
        raise ValueError(f"unsupported dtype {meta.get('dtype')!r} in sidecar")
    data = np.fromfile(bin_path, dtype=dtype)
    expected = geometry.n_pixels * n_frames
    if data.size != expected:
        raise ValueError(
            f"flat file holds {data.size} values but sidecar implies "
            f"{expected} ({geometry.n_pixels} pixels x {n_frames} frames)"
        )
    values = data.reshape(n_frames, geometry.n_pixels).T
    return VideoMatrix(values, geometry)


def save_video_flat(video: VideoMatrix, bin_path, dtype: str = "float32") -> None:
    """Write a video as flat binary plus sidecar (one frame after another,
    row-major within each frame)."""
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    bin_path = Path(bin_path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    video.values.T.astype(_DTYPES[dtype]).tofile(bin_path)
    meta = {
        "height": video.geometry.height,
        "width": video.geometry.width,
        "frames": video.n_frames,
        "dtype": dtype,
    }
    _sidecar_path(bin_path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def write_masks_csv(path, components: list[np.ndarray]) -> None:
    """(component, pixel) pairs, one row per mask pixel."""
    lines = ["component,pixel"]
    for k, pixels in enumerate(components):
        lines.extend(f"{k},{int(p)}" for p in pixels)
    Path(path).write_text("\n".join(lines) + "\n")


def read_masks_csv(path) -> list[np.ndarray]:
    rows = Path(path).read_text().strip().splitlines()
    if not rows or rows[0] != "component,pixel":
        raise ValueError(f"{path} is not a masks CSV")
    by_component: dict[int, list[int]] = {}
    for row in rows[1:]:
        k_str, p_str = row.split(",")
        by_component.setdefault(int(k_str), []).append(int(p_str))
    if not by_component:
        return []
    n = max(by_component) + 1
    if sorted(by_component) != list(range(n)):
        raise ValueError(f"{path} has gaps in component numbering")
    return [np.array(sorted(by_component[k]), dtype=np.int64) for k in range(n)]


def write_traces_csv(path, traces: np.ndarray) -> None:
    """One row per component: ``component,frame_0,...,frame_{T-1}``."""
    traces = np.asarray(traces)
    T = traces.shape[1] if traces.ndim == 2 else 0
    header = "component," + ",".join(f"frame_{t}" for t in range(T))
    lines = [header]
    for k in range(traces.shape[0]):
        lines.append(f"{k}," + ",".join(_fmt(v) for v in traces[k]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_traces_csv(path) -> np.ndarray:
    rows = Path(path).read_text().strip().splitlines()
    if not rows or not rows[0].startswith("component,frame_0"):
        raise ValueError(f"{path} is not a traces CSV")
    data = [[float(v) for v in row.split(",")[1:]] for row in rows[1:]]
    return np.array(data, dtype=np.float64)


def write_sizes_csv(path, sizes) -> None:
    lines = ["component,members"]
    lines.extend(f"{k},{int(s)}" for k, s in enumerate(sizes))
    Path(path).write_text("\n".join(lines) + "\n")


def read_sizes_csv(path) -> list[int]:
    rows = Path(path).read_text().strip().splitlines()
    if not rows or rows[0] != "component,members":
        raise ValueError(f"{path} is not a cluster-sizes CSV")
    return [int(row.split(",")[1]) for row in rows[1:]]


def write_provenance_csv(path, components) -> None:
    """(component, frame, threshold) for segmentation output; cluster
    representatives keep their originating frame and threshold."""
    lines = ["component,frame,threshold"]
    for k, comp in enumerate(components):
        if isinstance(comp.provenance, tuple):
            frame, threshold = comp.provenance
            lines.append(f"{k},{int(frame)},{_fmt(threshold)}")
        else:
            lines.append(f"{k},,")
    Path(path).write_text("\n".join(lines) + "\n")
