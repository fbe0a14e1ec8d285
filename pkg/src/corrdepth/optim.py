"""First-order recovery of a depth grid from correspondence sets.

Plain SGD with momentum on the per-pixel depth values: each iteration sums
the weighted loss gradients over all correspondence sets, clamps every
element to the configured magnitude, applies the momentum update, and
projects the grid back into [-1, 1]. Stopping is either a fixed iteration
budget or a patience rule on a held-out correspondence set.

A constant initial grid (the ``zeros`` mode) makes every lifted point
coplanar, which leaves the camera solve degenerate and the loss sitting on a
symmetric saddle. The fitter therefore adds a tiny seeded dither to constant
initializations before the first iteration; everything after that is
deterministic in the config seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import RansacConfig, ransac_fit, solve_lstsq
from .errors import InputError, SolverError
from .geometry import CorrespondenceSet, DepthField, FloatArray, lift_many
from .gradients import loss_and_grad
from .robust import RobustParams, distance_cost

INIT_MODES = ("zeros", "uniform-random")

# Scale of the symmetry-breaking dither applied to constant initial grids.
_DITHER_SCALE = 1e-3


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    grad_clamp: float = 5.0
    max_iters: int = 5000
    patience: int = 50
    init_mode: str = "zeros"
    seed: int = 0
    smooth_lambda: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must lie in [0, 1)")
        if self.grad_clamp <= 0:
            raise InputError("grad_clamp must be positive")
        if self.max_iters < 1:
            raise InputError("max_iters must be at least 1")
        if self.patience < 1:
            raise InputError("patience must be at least 1")
        if self.init_mode not in INIT_MODES:
            raise InputError(f"init_mode must be one of {INIT_MODES}")
        if self.smooth_lambda < 0:
            raise InputError("smooth_lambda must be nonnegative")


@dataclass(frozen=True)
class FitReport:
    final_loss: float
    loss_trace: tuple[float, ...]
    iterations_run: int
    stop_reason: str  # "plateau" | "max-iters" | "error"
    error_message: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "final_loss": self.final_loss,
                "loss_trace": list(self.loss_trace),
                "iterations_run": self.iterations_run,
                "stop_reason": self.stop_reason,
                "error_message": self.error_message,
            },
            sort_keys=True,
        )


def write_report_json(report: FitReport, path: str | Path) -> None:
    Path(path).write_text(report.to_json() + "\n")


def write_trace_csv(report: FitReport, path: str | Path) -> None:
    lines = ["iter,loss"]
    lines += [f"{i},{'%.17g' % v}" for i, v in enumerate(report.loss_trace)]
    Path(path).write_text("\n".join(lines) + "\n")


def grid_laplacian(values: FloatArray) -> FloatArray:
    """4-neighbor graph Laplacian of the grid (gradient of the smoothness energy)."""
    out = np.zeros_like(values)
    out[:-1, :] += values[:-1, :] - values[1:, :]
    out[1:, :] += values[1:, :] - values[:-1, :]
    out[:, :-1] += values[:, :-1] - values[:, 1:]
    out[:, 1:] += values[:, 1:] - values[:, :-1]
    return out


def _initial_grid(width: int, height: int, cfg: OptimConfig) -> FloatArray:
    if cfg.init_mode == "zeros":
        grid = np.zeros((height, width))
    else:
        grid = np.random.default_rng(cfg.seed).uniform(-1.0, 1.0, size=(height, width))
    if grid.max() == grid.min():
        # Constant grids sit on the degenerate saddle; break the symmetry.
        dither = np.random.default_rng([cfg.seed, 0xD17]).normal(
            0.0, _DITHER_SCALE, size=grid.shape
        )
        grid = np.clip(grid + dither, -1.0, 1.0)
    return grid


def holdout_loss(
    holdout: CorrespondenceSet,
    field: DepthField,
    ransac_cfg: RansacConfig,
    robust: RobustParams,
) -> float:
    """Correspondence loss of the held-out set under its own fitted camera."""
    pts = lift_many(holdout.source, field)
    outcome = ransac_fit(pts, holdout.target, ransac_cfg)
    cam, _ = solve_lstsq(pts[outcome.inlier_mask], holdout.target[outcome.inlier_mask])
    dist = np.linalg.norm(pts @ cam.p.T - holdout.target, axis=1)
    return float(distance_cost(dist, robust).mean())


def fit_depth(
    pairs: Sequence[tuple[CorrespondenceSet, float]],
    width: int,
    height: int,
    cfg: OptimConfig,
    ransac_cfg: RansacConfig,
    robust: RobustParams,
    holdout: CorrespondenceSet | None = None,
) -> tuple[DepthField, FitReport]:
    """Recover a depth grid by descending the summed correspondence loss.

    ``pairs`` holds (correspondences, weight) tuples; the traced training loss
    is the weighted mean of the per-set losses. A solver failure at any
    iteration aborts with ``stop_reason="error"`` and the partial trace. The
    returned grid always lies inside [-1, 1].
    """
    if not pairs:
        raise InputError("need at least one correspondence set")
    weights = np.array([float(w) for _, w in pairs])
    if np.any(weights <= 0):
        raise InputError("pair weights must be positive")
    for corr, _ in pairs:
        if (
            corr.source[:, 0].max() >= width
            or corr.source[:, 1].max() >= height
            or corr.source.min() < 0
        ):
            raise InputError("correspondence sources fall outside the requested grid")

    grid = _initial_grid(width, height, cfg)
    velocity = np.zeros_like(grid)
    trace: list[float] = []
    best_holdout = np.inf
    stale = 0
    stop_reason = "max-iters"
    error_message = ""

    for _ in range(cfg.max_iters):
        field = DepthField(grid)
        total_grad = np.zeros_like(grid)
        loss_sum = 0.0
        try:
            for (corr, w) in pairs:
                lg = loss_and_grad(corr, field, ransac_cfg, robust)
                total_grad += w * lg.per_depth
                loss_sum += w * lg.loss_value
        except SolverError as exc:
            stop_reason = "error"
            error_message = str(exc)
            break
        train_loss = loss_sum / float(weights.sum())
        trace.append(train_loss)

        at_fixed_point = (
            train_loss == 0.0
            and not total_grad.any()
            and not velocity.any()
        )
        if at_fixed_point:
            stop_reason = "plateau"
            break

        if cfg.smooth_lambda > 0.0:
            total_grad += cfg.smooth_lambda * grid_laplacian(grid)
        clamped = np.clip(total_grad, -cfg.grad_clamp, cfg.grad_clamp)
        assert float(np.abs(clamped).max()) <= cfg.grad_clamp
        velocity = cfg.momentum * velocity + clamped
        grid = np.clip(grid - cfg.learning_rate * velocity, -1.0, 1.0)

        if holdout is not None:
            try:
                hl = holdout_loss(holdout, DepthField(grid), ransac_cfg, robust)
            except SolverError as exc:
                stop_reason = "error"
                error_message = f"holdout evaluation failed: {exc}"
                break
            if hl < best_holdout:
                best_holdout = hl
                stale = 0
            else:
                stale += 1
            if stale >= cfg.patience:
                stop_reason = "plateau"
                break

    final = DepthField(grid)
    report = FitReport(
        final_loss=trace[-1] if trace else float("nan"),
        loss_trace=tuple(trace),
        iterations_run=len(trace),
        stop_reason=stop_reason,
        error_message=error_message,
    )
    return final, report
