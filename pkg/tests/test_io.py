import json

import numpy as np
import pytest
from PIL import Image

from scalpel.io import (
    load_video,
    read_masks_csv,
    read_sizes_csv,
    read_traces_csv,
    save_video_flat,
    write_masks_csv,
    write_sizes_csv,
    write_traces_csv,
)
from scalpel.video import FrameGeometry, VideoMatrix


class TestFlatFormat:
    def test_round_trip_float32_bitwise(self, tmp_path, rng):
        values = rng.normal(size=(20, 3)).astype(np.float32).astype(np.float64)
        video = VideoMatrix(values, FrameGeometry(4, 5))
        save_video_flat(video, tmp_path / "v.bin", dtype="float32")
        back = load_video(tmp_path / "v.bin", "flat")
        assert np.array_equal(back.values, values)
        assert back.geometry == video.geometry

    def test_round_trip_float64_bitwise(self, tmp_path, rng):
        values = rng.normal(size=(20, 3))
        video = VideoMatrix(values, FrameGeometry(4, 5))
        save_video_flat(video, tmp_path / "v.bin", dtype="float64")
        back = load_video(tmp_path / "v.bin", "flat")
        assert np.array_equal(back.values, values)

    def test_sidecar_example(self, tmp_path):
        data = np.arange(60, dtype="<f4")
        (tmp_path / "v.bin").write_bytes(data.tobytes())
        (tmp_path / "v.json").write_text(json.dumps({"height": 4, "width": 5, "frames": 3}))
        video = load_video(tmp_path / "v.bin", "flat")
        assert video.n_pixels == 20 and video.n_frames == 3
        # first frame is the first 20 values, row-major
        assert np.array_equal(video.values[:, 0], np.arange(20.0))

    def test_length_mismatch_names_both_counts(self, tmp_path):
        (tmp_path / "v.bin").write_bytes(np.zeros(10, dtype="<f4").tobytes())
        (tmp_path / "v.json").write_text(json.dumps({"height": 4, "width": 5, "frames": 3}))
        with pytest.raises(ValueError, match="10 values.*60"):
            load_video(tmp_path / "v.bin", "flat")

    def test_missing_sidecar_field(self, tmp_path):
        (tmp_path / "v.bin").write_bytes(b"")
        (tmp_path / "v.json").write_text(json.dumps({"height": 4, "width": 5}))
        with pytest.raises(ValueError, match="frames"):
            load_video(tmp_path / "v.bin", "flat")

    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "v.bin").write_bytes(b"")
        with pytest.raises(ValueError, match="sidecar"):
            load_video(tmp_path / "v.bin", "flat")


class TestFramesFormat:
    @staticmethod
    def _write_frame(path, arr):
        Image.fromarray(arr.astype(np.uint8), mode="L").save(path)

    def test_directory_of_frames(self, tmp_path):
        rng = np.random.default_rng(0)
        frames = [rng.integers(0, 255, size=(4, 5)) for _ in range(3)]
        for j, f in enumerate(frames):
            self._write_frame(tmp_path / f"frame_{j:03d}.png", f)
        video = load_video(tmp_path, "frames")
        assert video.n_pixels == 20 and video.n_frames == 3
        for j, f in enumerate(frames):
            assert np.array_equal(video.frame(j), f.astype(np.float64))

    def test_ordering_by_filename(self, tmp_path):
        self._write_frame(tmp_path / "f_010.png", np.full((2, 2), 10))
        self._write_frame(tmp_path / "f_002.png", np.full((2, 2), 2))
        video = load_video(tmp_path, "frames")
        assert video.values[0, 0] == 2 and video.values[0, 1] == 10

    def test_inconsistent_dimensions(self, tmp_path):
        self._write_frame(tmp_path / "a.png", np.zeros((2, 2)))
        self._write_frame(tmp_path / "b.png", np.zeros((3, 2)))
        with pytest.raises(ValueError, match="2x2"):
            load_video(tmp_path, "frames")

    def test_non_grayscale_rejected(self, tmp_path):
        Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8), mode="RGB").save(tmp_path / "a.png")
        with pytest.raises(ValueError, match="not grayscale"):
            load_video(tmp_path, "frames")

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ValueError, match="no PNG/TIFF frames"):
            load_video(tmp_path, "frames")

    def test_sixteen_bit_tiff(self, tmp_path):
        arr = np.array([[0, 1000], [2000, 65535]], dtype=np.uint16)
        Image.fromarray(arr).save(tmp_path / "a.tif")
        video = load_video(tmp_path, "frames")
        assert np.array_equal(video.frame(0), arr.astype(np.float64))

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError, match="unknown video format"):
            load_video(tmp_path, "avi")


class TestCSVFormats:
    def test_masks_round_trip(self, tmp_path):
        masks = [np.array([0, 3, 7]), np.array([2])]
        write_masks_csv(tmp_path / "m.csv", masks)
        back = read_masks_csv(tmp_path / "m.csv")
        assert [b.tolist() for b in back] == [[0, 3, 7], [2]]

    def test_traces_round_trip_exact(self, tmp_path, rng):
        traces = np.abs(rng.normal(size=(3, 7)))
        write_traces_csv(tmp_path / "t.csv", traces)
        back = read_traces_csv(tmp_path / "t.csv")
        assert np.array_equal(back, traces)  # repr round-trips floats exactly

    def test_traces_header(self, tmp_path):
        write_traces_csv(tmp_path / "t.csv", np.zeros((1, 3)))
        header = (tmp_path / "t.csv").read_text().splitlines()[0]
        assert header == "component,frame_0,frame_1,frame_2"

    def test_sizes_round_trip(self, tmp_path):
        write_sizes_csv(tmp_path / "s.csv", [5, 1, 12])
        assert read_sizes_csv(tmp_path / "s.csv") == [5, 1, 12]

    def test_masks_reject_wrong_header(self, tmp_path):
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_masks_csv(tmp_path / "bad.csv")
