"""Canonical desk-scale experiments: recovery runs, the sparse-count study,
the robust-kernel ablation, and the gradient check suite.

These back both the runnable scripts and the acceptance tests, so settings
live here in one place. All randomness is seeded.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .camera import RansacConfig
from .errors import InputError
from .geometry import CorrespondenceSet, DepthField, FloatArray
from .gradients import composite_loss, loss_and_grad
from .metrics import align, metrics, shift_gt_positive
from .optim import OptimConfig, fit_depth
from .robust import RobustParams
from .scenes import (
    SURFACE_KINDS,
    CorruptionSpec,
    SceneSpec,
    ViewSpec,
    corrupt,
    generate_correspondences,
    render_depth,
)

# Three-view setup used by the canonical experiments: a frontal source plus
# two moderately rotated targets (well inside the height-field regime).
CANONICAL_VIEWS = (
    ViewSpec(azimuth=0.0, elevation=0.0),
    ViewSpec(azimuth=15.0, elevation=6.0),
    ViewSpec(azimuth=345.0, elevation=-6.0),
)
CANONICAL_RESOLUTION = (32, 32)

# Descent settings for the grid fits. The configured learning rate is far
# above the library default: a direct per-pixel grid sees the 1/N-scaled mean
# loss gradient, so it needs a correspondingly larger step than a shared
# parametric model would.
RECOVERY_OPTIM = OptimConfig(
    learning_rate=2.0,
    momentum=0.9,
    grad_clamp=5.0,
    max_iters=400,
    seed=3,
)
RECOVERY_RANSAC = RansacConfig(inlier_threshold=3.0, max_iterations=64, seed=0)
RECOVERY_ROBUST = RobustParams(cutoff=5.0)


def canonical_scene(kind: str, seed: int = 7) -> SceneSpec:
    if kind not in SURFACE_KINDS:
        raise InputError(f"unknown surface kind {kind!r}")
    return SceneSpec(
        surface_kind=kind,
        surface_params=(),
        resolution=CANONICAL_RESOLUTION,
        views=CANONICAL_VIEWS,
        seed=seed,
    )


@dataclass(frozen=True)
class RecoveryResult:
    kind: str
    n_points: int
    aligned_rmse: float
    aligned_l1: float
    pearson: float
    final_loss: float
    stop_reason: str


def _scene_pairs(
    spec: SceneSpec, n_points: int, corruption: CorruptionSpec | None
) -> list[tuple[CorrespondenceSet, float]]:
    pairs = []
    for tgt_view in (1, 2):
        corr = generate_correspondences(spec, 0, tgt_view, n_points)
        if corruption is not None:
            noisy = corrupt(corr, CorruptionSpec(
                gaussian_sigma=corruption.gaussian_sigma,
                outlier_fraction=corruption.outlier_fraction,
                outlier_magnitude=corruption.outlier_magnitude,
                seed=corruption.seed + tgt_view,
            ))
            corr = noisy
        pairs.append((corr, 1.0))
    return pairs


def recovery_run(
    kind: str,
    n_points: int | None = None,
    corruption: CorruptionSpec | None = None,
    optim: OptimConfig = RECOVERY_OPTIM,
    ransac: RansacConfig = RECOVERY_RANSAC,
    robust: RobustParams = RECOVERY_ROBUST,
    scene_seed: int = 7,
) -> tuple[RecoveryResult, DepthField, DepthField]:
    """Fit the frontal view of a canonical scene from its two target views.

    ``n_points=None`` means dense (every pixel). Returns the summary, the
    fitted grid, and the ground-truth grid.
    """
    spec = canonical_scene(kind, seed=scene_seed)
    w, h = spec.resolution
    n = w * h if n_points is None else n_points
    pairs = _scene_pairs(spec, n, corruption)
    fitted, report = fit_depth(pairs, w, h, optim, ransac, robust)
    gt = render_depth(spec, 0)
    gt_pos = shift_gt_positive(gt)
    aligned, _ = align(fitted, gt_pos)
    rep = metrics(aligned, gt_pos)
    pearson = float(np.corrcoef(aligned.values.ravel(), gt_pos.values.ravel())[0, 1])
    result = RecoveryResult(
        kind=kind,
        n_points=n,
        aligned_rmse=rep.rmse,
        aligned_l1=rep.l1,
        pearson=pearson,
        final_loss=report.final_loss,
        stop_reason=report.stop_reason,
    )
    return result, fitted, gt


# Sparse fits leave most pixels untouched, so the count study turns on the
# smoothness term (in every arm, dense included, for comparability).
STUDY_OPTIM = OptimConfig(
    learning_rate=2.0,
    momentum=0.9,
    grad_clamp=5.0,
    max_iters=600,
    seed=3,
    smooth_lambda=0.01,
)
STUDY_COUNTS = (10, 50, 100, None)  # None = dense


def sparse_count_study(kinds=SURFACE_KINDS) -> dict[str, dict[str, float]]:
    """Aligned L1 error as a function of correspondences per pair.

    Returns {kind: {"10": l1, "50": l1, "100": l1, "dense": l1}}.
    """
    table: dict[str, dict[str, float]] = {}
    for kind in kinds:
        row: dict[str, float] = {}
        for n in STUDY_COUNTS:
            label = "dense" if n is None else str(n)
            result, _, _ = recovery_run(kind, n_points=n, optim=STUDY_OPTIM)
            row[label] = result.aligned_l1
        table[kind] = row
    return table


OUTLIER_CORRUPTION = CorruptionSpec(
    gaussian_sigma=0.0,
    outlier_fraction=0.2,
    outlier_magnitude=30.0,
    seed=99,
)
ABLATION_OPTIM = OptimConfig(
    learning_rate=2.0,
    momentum=0.9,
    grad_clamp=5.0,
    max_iters=600,
    seed=3,
    smooth_lambda=0.01,
)
ABLATION_N_POINTS = 200


def robust_ablation(kinds=SURFACE_KINDS) -> dict[str, dict[str, float]]:
    """Aligned L1 with the saturating kernel versus with it disabled.

    Both arms see the same 20% gross outliers; the disabled arm uses an
    infinite cutoff, i.e. a plain half-squared distance.
    """
    table: dict[str, dict[str, float]] = {}
    for kind in kinds:
        with_kernel, _, _ = recovery_run(
            kind,
            n_points=ABLATION_N_POINTS,
            corruption=OUTLIER_CORRUPTION,
            optim=ABLATION_OPTIM,
            robust=RobustParams(cutoff=5.0),
        )
        without_kernel, _, _ = recovery_run(
            kind,
            n_points=ABLATION_N_POINTS,
            corruption=OUTLIER_CORRUPTION,
            optim=ABLATION_OPTIM,
            robust=RobustParams(cutoff=float("inf")),
        )
        table[kind] = {
            "robust": with_kernel.aligned_l1,
            "disabled": without_kernel.aligned_l1,
        }
    return table


# ---------------------------------------------------------------------------
# Gradient check suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckCase:
    n_corr: int
    max_rel_error: float
    grad_scale: float


def _random_instance(rng: np.random.Generator, n_corr: int, grid: int = 24):
    """A correspondence problem with noise and ~15% gross outliers."""
    flat = rng.choice(grid * grid, size=n_corr, replace=False)
    xs = (flat % grid).astype(np.float64)
    ys = (flat // grid).astype(np.float64)
    values = rng.uniform(-0.8, 0.8, (grid, grid))
    field = DepthField(values)
    cam = rng.normal(size=(2, 4))
    pts = np.column_stack([xs, ys, values[ys.astype(int), xs.astype(int)], np.ones(n_corr)])
    tgt = pts @ cam.T + rng.normal(0.0, 1.0, (n_corr, 2))
    n_out = max(1, n_corr // 7)
    out_idx = rng.choice(n_corr, size=n_out, replace=False)
    tgt[out_idx] += rng.normal(0.0, 30.0, (n_out, 2))
    mask = np.ones(n_corr, dtype=bool)
    mask[out_idx] = False
    return CorrespondenceSet(np.column_stack([xs, ys]), tgt), field, mask


def finite_difference_grad(
    corr: CorrespondenceSet,
    field: DepthField,
    robust: RobustParams,
    inlier_mask,
    step: float = 1e-5,
) -> FloatArray:
    """Central differences of the frozen-mask loss at every touched pixel."""
    values = field.values
    out = np.zeros_like(values)
    seen = set()
    for x, y in corr.source:
        key = (int(y), int(x))
        if key in seen:
            continue
        seen.add(key)
        vp = values.copy()
        vp[key] += step
        vm = values.copy()
        vm[key] -= step
        out[key] = (
            composite_loss(corr, DepthField(vp), robust, inlier_mask)
            - composite_loss(corr, DepthField(vm), robust, inlier_mask)
        ) / (2.0 * step)
    return out


def gradcheck_suite(
    seed: int = 0,
    n_instances: int = 50,
    min_corr: int = 8,
    max_corr: int = 200,
    step: float = 1e-5,
    break_analytic: bool = False,
) -> list[GradCheckCase]:
    """Compare analytic and finite-difference depth gradients on random cases.

    Per-instance error is max |analytic - numeric| over the grid, relative to
    the largest numeric gradient magnitude. ``break_analytic`` deliberately
    corrupts the analytic gradient (negative control).
    """
    rng = np.random.default_rng(seed)
    robust = RobustParams(cutoff=5.0)
    ransac = RansacConfig(seed=0)
    cases = []
    for _ in range(n_instances):
        n_corr = int(rng.integers(min_corr, max_corr + 1))
        corr, field, mask = _random_instance(rng, n_corr)
        lg = loss_and_grad(corr, field, ransac, robust, inlier_mask=mask)
        analytic = lg.per_depth
        if break_analytic:
            analytic = analytic * 1.05 + 1e-4
        numeric = finite_difference_grad(corr, field, robust, mask, step=step)
        scale = float(np.abs(numeric).max())
        err = float(np.abs(analytic - numeric).max()) / max(scale, 1e-12)
        cases.append(GradCheckCase(n_corr=n_corr, max_rel_error=err, grad_scale=scale))
    return cases
