import numpy as np
import pytest

from corrdepth.camera import RansacConfig
from corrdepth.errors import InputError
from corrdepth.geometry import CorrespondenceSet, DepthField, lift_many
from corrdepth.optim import FitReport, OptimConfig, fit_depth, grid_laplacian
from corrdepth.robust import RobustParams
from corrdepth.scenes import SceneSpec, ViewSpec, generate_correspondences, render_depth

VIEWS = (ViewSpec(0, 0), ViewSpec(15, 6), ViewSpec(345, -6))
SPEC = SceneSpec("gaussian-bumps", (), (16, 16), VIEWS, 7)
RANSAC = RansacConfig(inlier_threshold=3.0, max_iterations=32, seed=0)
ROBUST = RobustParams(cutoff=5.0)


def scene_pairs(n=100):
    return [
        (generate_correspondences(SPEC, 0, 1, n), 1.0),
        (generate_correspondences(SPEC, 0, 2, n), 1.0),
    ]


class TestFitDepth:
    def test_ground_truth_init_stops_immediately(self):
        # Seed the optimizer at the exact solution by fitting zero iterations
        # is not possible; instead verify the fixed-point exit: a state with
        # zero loss and zero gradient stops after the first evaluation.
        gt = render_depth(SPEC, 0)
        pairs = scene_pairs(n=120)
        cfg = OptimConfig(learning_rate=1.0, max_iters=200, seed=1)
        # targets regenerated from the gt depth grid are reproduced by the
        # solve to ~1e-14 px; quartic cost of that is below the float floor,
        # so the trace starts at 0.0 exactly
        field, report = _fit_from(gt.values, pairs, cfg)
        assert report.iterations_run == 1
        assert report.stop_reason == "plateau"
        assert report.loss_trace[0] == 0.0
        assert np.array_equal(field.values, gt.values)

    def test_recovers_depth_up_to_affine_gauge(self):
        from corrdepth.metrics import align

        pairs = scene_pairs(n=256)  # dense for the 16x16 grid
        cfg = OptimConfig(learning_rate=2.0, momentum=0.9, grad_clamp=5.0, max_iters=300, seed=2)
        field, report = fit_depth(pairs, 16, 16, cfg, RANSAC, ROBUST)
        gt = render_depth(SPEC, 0)
        aligned, _ = align(field, gt)
        rmse = float(np.sqrt(((aligned.values - gt.values) ** 2).mean()))
        assert rmse < 0.02
        assert report.stop_reason == "max-iters"

    def test_trace_length_matches_iterations(self):
        pairs = scene_pairs(n=32)
        cfg = OptimConfig(learning_rate=0.5, max_iters=15, seed=3)
        _, report = fit_depth(pairs, 16, 16, cfg, RANSAC, ROBUST)
        assert len(report.loss_trace) == report.iterations_run == 15

    def test_moving_average_of_clean_trace_is_nonincreasing(self):
        pairs = scene_pairs(n=256)
        cfg = OptimConfig(learning_rate=1.0, momentum=0.9, grad_clamp=5.0, max_iters=150, seed=4)
        _, report = fit_depth(pairs, 16, 16, cfg, RANSAC, ROBUST)
        trace = np.array(report.loss_trace)
        window = 25
        ma = np.convolve(trace, np.ones(window) / window, mode="valid")
        assert np.all(np.diff(ma) <= 1e-9)

    def test_output_range_is_clipped(self):
        pairs = scene_pairs(n=64)
        cfg = OptimConfig(learning_rate=50.0, momentum=0.9, grad_clamp=5.0, max_iters=40, seed=5)
        field, _ = fit_depth(pairs, 16, 16, cfg, RANSAC, ROBUST)
        field.assert_bounded()

    def test_deterministic_given_seed(self):
        pairs = scene_pairs(n=64)
        cfg = OptimConfig(learning_rate=1.0, max_iters=25, seed=6)
        f1, r1 = fit_depth(pairs, 16, 16, cfg, RANSAC, ROBUST)
        f2, r2 = fit_depth(pairs, 16, 16, cfg, RANSAC, ROBUST)
        assert np.array_equal(f1.values, f2.values)
        assert r1.loss_trace == r2.loss_trace

    def test_uniform_random_init_is_seeded(self):
        pairs = scene_pairs(n=64)
        cfg = OptimConfig(learning_rate=1.0, max_iters=5, seed=7, init_mode="uniform-random")
        f1, _ = fit_depth(pairs, 16, 16, cfg, RANSAC, ROBUST)
        f2, _ = fit_depth(pairs, 16, 16, cfg, RANSAC, ROBUST)
        assert np.array_equal(f1.values, f2.values)

    def test_holdout_plateau_stops_early(self):
        pairs = scene_pairs(n=200)
        holdout = generate_correspondences(SPEC, 0, 1, 40)
        cfg = OptimConfig(learning_rate=2.0, momentum=0.9, max_iters=4000, patience=20, seed=8)
        _, report = fit_depth(pairs, 16, 16, cfg, RANSAC, ROBUST, holdout=holdout)
        assert report.stop_reason == "plateau"
        assert report.iterations_run < 4000

    def test_solver_error_aborts_with_partial_trace(self):
        # A correspondence set too small for consensus fails at iteration 0.
        corr = CorrespondenceSet(
            np.array([[1.0, 1.0], [2.0, 3.0], [5.0, 2.0], [7.0, 7.0]]),
            np.array([[100.0, -50.0], [0.0, 90.0], [-80.0, 2.0], [9.0, 200.0]]),
        )
        cfg = OptimConfig(learning_rate=1.0, max_iters=10, seed=9)
        ransac = RansacConfig(inlier_threshold=1e-9, min_sample_size=5, seed=1)
        field, report = fit_depth([(corr, 1.0)], 16, 16, cfg, ransac, ROBUST)
        assert report.stop_reason == "error"
        assert report.iterations_run == 0
        assert report.error_message

    def test_rejects_out_of_bounds_sources(self):
        corr = CorrespondenceSet(np.array([[20.0, 2.0]] * 4), np.zeros((4, 2)))
        with pytest.raises(InputError):
            fit_depth([(corr, 1.0)], 16, 16, OptimConfig(), RANSAC, ROBUST)

    def test_smoothing_fills_untouched_pixels(self):
        pairs = scene_pairs(n=24)
        smooth = OptimConfig(learning_rate=2.0, max_iters=300, seed=10, smooth_lambda=0.1)
        rough = OptimConfig(learning_rate=2.0, max_iters=300, seed=10)
        f_smooth, _ = fit_depth(pairs, 16, 16, smooth, RANSAC, ROBUST)
        f_rough, _ = fit_depth(pairs, 16, 16, rough, RANSAC, ROBUST)
        touched = np.zeros((16, 16), dtype=bool)
        for corr, _ in pairs:
            for x, y in corr.source.astype(int):
                touched[y, x] = True
        # without smoothing untouched pixels stay at the dithered init
        assert np.abs(f_rough.values[~touched]).max() < 5e-3
        assert np.abs(f_smooth.values[~touched]).max() > 5e-3


def _fit_from(init_values, pairs, cfg):
    """Run fit_depth with the initial grid forced to init_values."""
    import corrdepth.optim as optim_module

    original = optim_module._initial_grid
    optim_module._initial_grid = lambda w, h, c: init_values.copy()
    try:
        return fit_depth(pairs, init_values.shape[1], init_values.shape[0], cfg,
                         RANSAC, ROBUST)
    finally:
        optim_module._initial_grid = original


class TestGridLaplacian:
    def test_constant_grid_has_zero_laplacian(self):
        assert not grid_laplacian(np.full((5, 7), 0.3)).any()

    def test_matches_energy_finite_difference(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(6, 5))

        def energy(v):
            return 0.5 * (
                ((v[1:, :] - v[:-1, :]) ** 2).sum() + ((v[:, 1:] - v[:, :-1]) ** 2).sum()
            )

        lap = grid_laplacian(values)
        h = 1e-6
        for idx in [(0, 0), (2, 3), (5, 4), (3, 0)]:
            vp = values.copy()
            vp[idx] += h
            vm = values.copy()
            vm[idx] -= h
            fd = (energy(vp) - energy(vm)) / (2 * h)
            assert lap[idx] == pytest.approx(fd, abs=1e-8)


class TestReportSerialization:
    def test_report_json_fields(self, tmp_path):
        from corrdepth.optim import write_report_json, write_trace_csv
        import json

        report = FitReport(0.5, (1.0, 0.5), 2, "max-iters")
        p = tmp_path / "report.json"
        write_report_json(report, p)
        doc = json.loads(p.read_text())
        assert doc["stop_reason"] == "max-iters"
        assert doc["loss_trace"] == [1.0, 0.5]
        c = tmp_path / "trace.csv"
        write_trace_csv(report, c)
        assert c.read_text().splitlines() == ["iter,loss", "0,1", "1,0.5"]
