import numpy as np
import pytest

from scalpel.solver import SGLConfig, max_lambda, sgl_objective, solve_single
from scalpel.synth import (
    SyntheticSpec,
    ellipse_pixels,
    generate,
    oracle_flood_fill,
    oracle_sgl,
    random_synthetic_spec,
)
from scalpel.video import FrameGeometry


def tiny_spec(noise_sd=0.0, trend=None, seed=0):
    g = FrameGeometry(4, 4)
    masks = [np.array([0, 1, 4]), np.array([10, 11])]
    traces = np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]])
    return SyntheticSpec(
        geometry=g, n_frames=3, masks=masks, traces=traces,
        noise_sd=noise_sd, trend=trend, seed=seed,
    )


class TestGenerate:
    def test_noiseless_forward_model_exact(self):
        video, (A, Z) = generate(tiny_spec())
        assert np.array_equal(video.values, A @ Z)

    def test_zero_traces_pure_trend(self):
        spec = tiny_spec(trend=np.array([5.0, 6.0, 7.0]))
        spec.traces = np.zeros_like(spec.traces)
        video, _ = generate(spec)
        assert np.allclose(video.values, np.tile([5.0, 6.0, 7.0], (16, 1)))

    def test_seed_reproducible(self):
        a, _ = generate(tiny_spec(noise_sd=0.5, seed=9))
        b, _ = generate(tiny_spec(noise_sd=0.5, seed=9))
        assert np.array_equal(a.values, b.values)

    def test_validates_negative_traces(self):
        spec = tiny_spec()
        with pytest.raises(ValueError):
            SyntheticSpec(
                geometry=spec.geometry, n_frames=3, masks=spec.masks,
                traces=-np.ones((2, 3)),
            )

    def test_random_spec_shapes(self):
        spec = random_synthetic_spec(seed=3, geometry=FrameGeometry(30, 30),
                                     n_frames=100, n_disjoint=4, n_overlapping=2)
        assert len(spec.masks) == 6
        assert spec.traces.shape == (6, 100)
        sizes = [m.size for m in spec.masks]
        assert all(10 <= s <= 200 for s in sizes)
        # disjoint masks really are disjoint
        for i in range(4):
            for j in range(i + 1, 4):
                assert not set(spec.masks[i].tolist()) & set(spec.masks[j].tolist())
        # the overlapping pair overlaps
        assert set(spec.masks[4].tolist()) & set(spec.masks[5].tolist())

    def test_ellipse_within_bounds(self):
        g = FrameGeometry(20, 20)
        px = ellipse_pixels(g, (10, 10), (3, 5))
        assert px.size > 0
        assert px.min() >= 0 and px.max() < 400


class TestOracleFloodFill:
    def test_empty(self):
        assert oracle_flood_fill(np.zeros((3, 3), dtype=int)) == []

    def test_full(self):
        out = oracle_flood_fill(np.ones((3, 3), dtype=int))
        assert len(out) == 1 and out[0].size == 9

    def test_diagonals_split(self):
        out = oracle_flood_fill(np.eye(3, dtype=int))
        assert len(out) == 3


class TestOracleSGL:
    def test_matches_closed_form_singleton(self, rng):
        Y = rng.normal(size=(3, 4)) + 0.5
        a = np.array([0.5, 0.5, 0.0])
        lam, alpha = 0.4, 0.7
        z_exact = solve_single(Y, a, lam, alpha)
        A = a[:, None]
        Z_oracle = oracle_sgl(Y, A, lam, alpha, iters=300_000)
        obj_exact = sgl_objective(Y, A, z_exact[None, :], lam, alpha)
        obj_oracle = sgl_objective(Y, A, Z_oracle, lam, alpha)
        assert obj_oracle >= obj_exact - 1e-9
        assert abs(obj_oracle - obj_exact) < 1e-6

    def test_zero_solution_at_max_lambda(self, rng):
        Y = np.abs(rng.normal(size=(4, 3)))
        A = np.array([[0.5, 0.0], [0.5, 0.0], [0.0, 1.0], [0.0, 0.0]])
        lam = float(np.sqrt((np.clip(A.T @ Y, 0, None) ** 2).sum(axis=1)).max())
        Z = oracle_sgl(Y, A, lam, 0.0, iters=300_000)
        obj_zero = sgl_objective(Y, A, np.zeros((2, 3)), lam, 0.0)
        assert abs(sgl_objective(Y, A, Z, lam, 0.0) - obj_zero) < 1e-6

    def test_lambda_zero_is_unpenalized_least_squares(self, rng):
        Y = rng.normal(size=(4, 3))
        A = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5], [0.0, 0.0]])
        Z = oracle_sgl(Y, A, 0.0, 0.9, iters=300_000)
        # at a non-negative least squares optimum the projected gradient vanishes
        G = -A.T @ (Y - A @ Z)
        violation = np.where(Z > 1e-12, np.abs(G), np.clip(-G, 0, None))
        assert violation.max() < 1e-4
