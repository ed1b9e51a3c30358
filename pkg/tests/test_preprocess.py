import numpy as np
import pytest

from scalpel.preprocess import (
    PreprocessConfig,
    _fit_median_trend,
    _smooth_spatial,
    bleach_correct,
    delta_f_over_f,
    gaussian_smooth,
    preprocess,
)
from scalpel.video import FrameGeometry, VideoMatrix

from conftest import as_video


def grid_video(values):
    values = np.asarray(values, dtype=np.float64)
    side = int(np.sqrt(values.shape[0]))
    assert side * side == values.shape[0]
    return VideoMatrix(values, FrameGeometry(side, side))


class TestGaussianSmooth:
    def test_preserves_constants(self):
        v = VideoMatrix(np.full((36, 10), 3.7), FrameGeometry(6, 6))
        out = gaussian_smooth(v, 1.0)
        assert np.allclose(out.values, 3.7, atol=1e-12)

    def test_impulse_mass_sums_to_one(self):
        # spatial pass only on a centered impulse: blob mass stays 1 (the
        # frame is large enough that no blob pixel is border-renormalized)
        g = FrameGeometry(19, 19)
        frame = np.zeros((g.n_pixels, 1))
        frame[g.rowcol_to_pixel(9, 9), 0] = 1.0
        blob = _smooth_spatial(VideoMatrix(frame, g), 1.0)[:, 0].reshape(19, 19)
        assert abs(blob.sum() - 1.0) < 1e-12
        assert np.allclose(blob, blob.T)  # symmetric kernel, centered impulse
        assert np.allclose(blob, blob[::-1, :])

    def test_single_frame_unchanged_by_temporal_pass(self):
        g = FrameGeometry(4, 4)
        rng = np.random.default_rng(0)
        v = VideoMatrix(rng.normal(size=(16, 1)), g)
        spatial_only = _smooth_spatial(v, 1.0)
        full = gaussian_smooth(v, 1.0)
        assert np.allclose(full.values, spatial_only, atol=1e-12)

    def test_commutes_with_adding_constant(self, rng):
        v = VideoMatrix(rng.normal(size=(25, 8)), FrameGeometry(5, 5))
        shifted = VideoMatrix(v.values + 2.5, v.geometry)
        a = gaussian_smooth(shifted, 1.3).values
        b = gaussian_smooth(v, 1.3).values + 2.5
        assert np.allclose(a, b, atol=1e-10)

    def test_rejects_bad_bandwidth(self):
        v = VideoMatrix(np.zeros((4, 2)), FrameGeometry(2, 2))
        with pytest.raises(ValueError):
            gaussian_smooth(v, 0.0)


class TestBleachCorrect:
    def test_constant_medians_subtracted(self, rng):
        base = rng.normal(size=(9, 30))
        base -= np.median(base, axis=0)[None, :]  # per-frame medians now 0
        v = grid_video(base + 4.0)                # constant median 4 everywhere
        out = bleach_correct(v, 10)
        assert np.allclose(out.values, base, atol=1e-9)

    def test_linear_medians_removed(self, rng):
        T = 60
        base = rng.normal(size=(16, T))
        base -= np.median(base, axis=0)[None, :]
        trend = 2.0 + 0.05 * np.arange(T)
        v = grid_video(base + trend[None, :])
        out = bleach_correct(v, 10)
        medians = np.median(out.values, axis=0)
        assert np.abs(medians[2:-2]).max() < 1e-8

    def test_zero_video(self):
        v = grid_video(np.zeros((4, 15)))
        out = bleach_correct(v, 10)
        assert np.allclose(out.values, 0.0, atol=1e-12)

    def test_too_few_frames(self):
        v = grid_video(np.zeros((4, 5)))
        with pytest.raises(ValueError, match="too few frames"):
            bleach_correct(v, 10)

    def test_invariant_to_spline_reproducible_trend(self, rng):
        # adding a constant-plus-linear frame signal does not change output
        T = 50
        v = grid_video(rng.normal(size=(16, T)) + 10.0)
        trend = 3.0 - 0.02 * np.arange(T)
        shifted = VideoMatrix(v.values + trend[None, :], v.geometry)
        a = bleach_correct(v, 10).values
        b = bleach_correct(shifted, 10).values
        assert np.abs(a - b).max() < 1e-8


class TestDeltaFOverF:
    def test_constant_pixel_trace_zeroed(self):
        v = as_video([[5.0, 5.0, 5.0], [1.0, 1.0, 1.0]])
        out = delta_f_over_f(v, 0.5)
        assert np.array_equal(out.values[0], [0.0, 0.0, 0.0])

    def test_worked_example(self):
        # pixel [2,4,6] has median 4; global 10% quantile of the matrix is 1
        v = as_video([[2.0, 4.0, 6.0], [1.0, 1.0, 1.0]])
        assert np.quantile(v.values, 0.1) == 1.0
        out = delta_f_over_f(v, 0.1)
        assert np.allclose(out.values[0], [-0.4, 0.0, 0.4], atol=1e-12)

    def test_identical_rows_identical_outputs(self):
        v = as_video([[2.0, 3.0, 7.0], [2.0, 3.0, 7.0]])
        out = delta_f_over_f(v, 0.2)
        assert np.array_equal(out.values[0], out.values[1])

    def test_zero_denominator_names_pixel(self):
        # global median of the matrix is 1; second pixel's median is -1
        v = as_video([[2.0, 4.0, 6.0], [-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
        with pytest.raises(ValueError, match="pixel 1"):
            delta_f_over_f(v, 0.5)

    def test_row_medians_exactly_zero(self, rng):
        v = as_video(rng.normal(10, 2, size=(30, 41)))
        out = delta_f_over_f(v, 0.1)
        assert np.abs(np.median(out.values, axis=1)).max() < 1e-12


class TestPreprocess:
    def test_constant_video_maps_to_zero(self):
        v = grid_video(np.full((25, 30), 3.0))
        out = preprocess(v, PreprocessConfig())
        assert np.allclose(out.values, 0.0, atol=1e-12)

    def test_noise_approximately_centered(self):
        rng = np.random.default_rng(7)
        raw = grid_video(100.0 + rng.normal(0, 1.0, size=(144, 80)))
        out = preprocess(raw, PreprocessConfig())
        sd = out.values.std()
        assert abs(out.values.mean()) < 0.05 * sd

    def test_pixel_medians_zero(self):
        rng = np.random.default_rng(8)
        raw = grid_video(50.0 + rng.normal(0, 1.0, size=(64, 60)))
        out = preprocess(raw, PreprocessConfig())
        assert np.abs(np.median(out.values, axis=1)).max() < 1e-12

    def test_linear_bleach_trend_removed(self):
        # the trend-removal oracle: generate with and without a linear
        # bleaching drift, compare the final per-frame medians
        rng = np.random.default_rng(9)
        T = 70
        base = 80.0 + rng.normal(0, 1.0, size=(100, T))
        trend = -10.0 * np.arange(T) / (T - 1)
        out_plain = preprocess(grid_video(base), PreprocessConfig())
        out_trend = preprocess(grid_video(base + trend[None, :]), PreprocessConfig())
        med_plain = np.median(out_plain.values, axis=0)
        med_trend = np.median(out_trend.values, axis=0)
        assert np.abs(med_plain - med_trend).max() < 1e-3

    def test_empty_errors(self):
        v = VideoMatrix(np.zeros((1, 0)), FrameGeometry(1, 1))
        with pytest.raises(ValueError, match="empty input"):
            preprocess(v, PreprocessConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PreprocessConfig(bandwidth=-1)
        with pytest.raises(ValueError):
            PreprocessConfig(spline_df=1)
        with pytest.raises(ValueError):
            PreprocessConfig(denom_quantile=0.0)


class TestMedianTrendFit:
    def test_reproduces_linear_exactly(self):
        T = 40
        v = grid_video(np.tile(1.0 + 0.3 * np.arange(T), (9, 1)))
        medians, fitted = _fit_median_trend(v, 10)
        assert np.abs(medians - fitted).max() < 1e-9

    def test_low_df_degrades_degree(self):
        # df=2 fits a straight line
        T = 30
        v = grid_video(np.tile(5.0 - 0.1 * np.arange(T), (4, 1)))
        _, fitted = _fit_median_trend(v, 2)
        assert np.abs(fitted - (5.0 - 0.1 * np.arange(T))).max() < 1e-9
