import numpy as np
import pytest

from corrdepth.camera import (
    RansacConfig,
    hypothesis_index_sets,
    ransac_fit,
    solve_lstsq,
)
from corrdepth.errors import (
    DegenerateConfigurationError,
    InputError,
    NoConsensusError,
)
from corrdepth.geometry import HPoint3, Pixel2
from corrdepth.scenes import CorruptionSpec, corrupt
from corrdepth.geometry import CorrespondenceSet


def random_instance(rng, k, noise=0.0, grid=64.0):
    """Lifted points in general position plus targets from a random camera."""
    pts = np.column_stack([
        rng.uniform(0, grid, (k, 2)),
        rng.uniform(-1, 1, k),
        np.ones(k),
    ])
    cam = rng.normal(size=(2, 4))
    tgt = pts @ cam.T
    if noise:
        tgt = tgt + rng.normal(0, noise, tgt.shape)
    return pts, tgt, cam


def normal_equations_oracle(pts, tgt):
    """Independent least-squares solve: (X X^T) P^T = X x^T by dense elimination."""
    x = pts.T
    return np.linalg.solve(x @ x.T, x @ tgt).T


class TestSolveLstsq:
    def test_exact_data_recovers_generator(self):
        rng = np.random.default_rng(0)
        pts, tgt, cam = random_instance(rng, 30)
        fitted, _ = solve_lstsq(pts, tgt)
        np.testing.assert_allclose(fitted.p, cam, atol=1e-8)

    def test_minimal_square_system_interpolates(self):
        rng = np.random.default_rng(1)
        pts, tgt, _ = random_instance(rng, 4)
        fitted, _ = solve_lstsq(pts, tgt)
        residuals = pts @ fitted.p.T - tgt
        assert np.abs(residuals).max() < 1e-8

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            k = int(rng.integers(5, 200))
            pts, tgt, _ = random_instance(rng, k, noise=1.0)
            fitted, _ = solve_lstsq(pts, tgt)
            oracle = normal_equations_oracle(pts, tgt)
            np.testing.assert_allclose(fitted.p, oracle, atol=1e-6)

    def test_accepts_dataclass_sequences(self):
        pts = [HPoint3(0, 0, 0.1), HPoint3(5, 1, -0.2), HPoint3(2, 7, 0.4), HPoint3(9, 3, 0.0)]
        tgt = [Pixel2(1, 0), Pixel2(4, 2), Pixel2(3, 6), Pixel2(8, 4)]
        cam, _ = solve_lstsq(pts, tgt)
        assert cam.p.shape == (2, 4)

    def test_constant_depth_is_degenerate(self):
        rng = np.random.default_rng(3)
        pts = np.column_stack([rng.uniform(0, 31, (10, 2)), np.full(10, 0.5), np.ones(10)])
        tgt = rng.normal(size=(10, 2))
        with pytest.raises(DegenerateConfigurationError) as err:
            solve_lstsq(pts, tgt)
        assert err.value.rank == 3
        assert "rank 3" in str(err.value)

    def test_collinear_constant_is_rank_two(self):
        xs = np.arange(8.0)
        pts = np.column_stack([xs, 2 * xs + 1, np.zeros(8), np.ones(8)])
        with pytest.raises(DegenerateConfigurationError) as err:
            solve_lstsq(pts, np.zeros((8, 2)))
        assert err.value.rank == 2

    def test_too_few_points(self):
        with pytest.raises(InputError):
            solve_lstsq(np.ones((3, 4)), np.ones((3, 2)))

    def test_pseudo_inverse_identity(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            pts, tgt, _ = random_instance(rng, int(rng.integers(5, 60)), noise=0.5)
            _, factors = solve_lstsq(pts, tgt)
            xt = pts  # K x 4 stack, i.e. X^T
            pinv_xt = factors.pinv().T
            np.testing.assert_allclose(xt @ pinv_xt @ xt, xt, atol=1e-8)

    def test_residual_optimality_under_perturbation(self):
        rng = np.random.default_rng(5)
        pts, tgt, _ = random_instance(rng, 40, noise=2.0)
        fitted, _ = solve_lstsq(pts, tgt)
        base = float(np.sum((pts @ fitted.p.T - tgt) ** 2))
        for _ in range(100):
            perturbed = fitted.p + rng.normal(0, 1e-3, (2, 4))
            cost = float(np.sum((pts @ perturbed.T - tgt) ** 2))
            assert cost >= base - 1e-12

    def test_factors_reconstruct_stack(self):
        rng = np.random.default_rng(6)
        pts, tgt, _ = random_instance(rng, 25, noise=0.1)
        _, factors = solve_lstsq(pts, tgt)
        np.testing.assert_allclose(
            factors.u @ np.diag(factors.s) @ factors.v.T, pts.T, atol=1e-10
        )
        assert np.all(np.diff(factors.s) <= 0)
        np.testing.assert_allclose(factors.u.T @ factors.u, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(factors.v.T @ factors.v, np.eye(4), atol=1e-10)


class TestRansac:
    def test_clean_data_all_inliers(self):
        rng = np.random.default_rng(10)
        pts, tgt, cam = random_instance(rng, 60)
        outcome = ransac_fit(pts, tgt, RansacConfig(seed=1))
        assert outcome.inlier_mask.all()
        assert outcome.inlier_count == 60
        np.testing.assert_allclose(outcome.camera.p, cam, atol=1e-6)

    def test_matches_full_lstsq_without_outliers(self):
        rng = np.random.default_rng(11)
        pts, tgt, _ = random_instance(rng, 80)
        outcome = ransac_fit(pts, tgt, RansacConfig(seed=2))
        full, _ = solve_lstsq(pts, tgt)
        np.testing.assert_allclose(outcome.camera.p, full.p, atol=1e-9)

    def test_rejects_gross_outliers(self):
        rng = np.random.default_rng(12)
        cfg = RansacConfig(inlier_threshold=2.0, seed=3)
        pts, tgt, _ = random_instance(rng, 100)
        corrupted = corrupt(
            CorrespondenceSet(pts[:, :2], tgt),
            CorruptionSpec(outlier_fraction=0.2, outlier_magnitude=10 * cfg.inlier_threshold, seed=4),
        )
        moved = np.any(corrupted.target != tgt, axis=1)
        assert moved.sum() == 20
        outcome = ransac_fit(pts, corrupted.target, cfg)
        # every clean point is an inlier, no corrupted point is
        assert outcome.inlier_mask[~moved].all()
        assert not outcome.inlier_mask[moved].any()
        clean_fit, _ = solve_lstsq(pts[~moved], tgt[~moved])
        np.testing.assert_allclose(outcome.camera.p, clean_fit.p, atol=1e-4)

    def test_minimal_instance(self):
        rng = np.random.default_rng(13)
        pts, tgt, _ = random_instance(rng, 4)
        outcome = ransac_fit(pts, tgt, RansacConfig(seed=5))
        assert outcome.inlier_count == 4

    def test_no_consensus_when_targets_scattered(self):
        # A minimal 4-point hypothesis interpolates its own sample, so force
        # overdetermined hypotheses that cannot fit scattered targets.
        rng = np.random.default_rng(14)
        pts, tgt, _ = random_instance(rng, 12)
        scattered = tgt + rng.normal(0, 500.0, tgt.shape)
        cfg = RansacConfig(inlier_threshold=1e-6, min_sample_size=5, seed=6)
        with pytest.raises(NoConsensusError):
            ransac_fit(pts, scattered, cfg)

    def test_all_degenerate_samples_raise(self):
        rng = np.random.default_rng(15)
        pts = np.column_stack([rng.uniform(0, 31, (10, 2)), np.zeros(10), np.ones(10)])
        tgt = rng.normal(size=(10, 2))
        with pytest.raises(DegenerateConfigurationError):
            ransac_fit(pts, tgt, RansacConfig(seed=7))

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(16)
        pts, tgt, _ = random_instance(rng, 50, noise=1.0)
        cfg = RansacConfig(seed=21)
        a = ransac_fit(pts, tgt, cfg)
        b = ransac_fit(pts, tgt, cfg)
        assert np.array_equal(a.inlier_mask, b.inlier_mask)
        assert np.array_equal(a.camera.p, b.camera.p)

    def test_permutation_invariance_with_replayed_plan(self):
        # Reordering the input and replaying the same hypothesis sets (mapped
        # through the permutation, in canonical sorted form) must give the
        # same camera and inlier count.
        rng = np.random.default_rng(17)
        pts, tgt, _ = random_instance(rng, 40, noise=0.5)
        tgt[rng.choice(40, 8, replace=False)] += 25.0
        cfg = RansacConfig(seed=8)
        plan = hypothesis_index_sets(40, cfg)
        base = ransac_fit(pts, tgt, cfg, hypothesis_sets=plan)

        perm = rng.permutation(40)
        inv = np.empty(40, dtype=int)
        inv[perm] = np.arange(40)
        mapped_plan = [np.sort(inv[idx]) for idx in plan]
        permuted = ransac_fit(pts[perm], tgt[perm], cfg, hypothesis_sets=mapped_plan)

        assert permuted.inlier_count == base.inlier_count
        assert np.array_equal(permuted.inlier_mask, base.inlier_mask[perm])
        np.testing.assert_allclose(permuted.camera.p, base.camera.p, atol=1e-9)

    def test_requires_minimum_sample_count(self):
        with pytest.raises(InputError):
            ransac_fit(np.ones((3, 4)), np.ones((3, 2)), RansacConfig())

    def test_sampling_plan_is_seeded_and_sorted(self):
        cfg = RansacConfig(seed=9, max_iterations=10)
        a = hypothesis_index_sets(30, cfg)
        b = hypothesis_index_sets(30, cfg)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa, sb)
            assert np.all(np.diff(sa) > 0)
