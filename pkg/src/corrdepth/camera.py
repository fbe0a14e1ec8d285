"""Affine camera fitting: SVD-factored least squares plus RANSAC consensus.

The 2x4 camera P is the least-squares solution of ``targets = P @ X`` where X
is the 4xK stack of lifted points. Solving through the SVD of X keeps the
factors around so the gradient engine can differentiate the same solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .errors import (
    DegenerateConfigurationError,
    InputError,
    NoConsensusError,
)
from .geometry import (
    AffineCamera,
    BoolArray,
    FloatArray,
    as_pixel_stack,
    as_point_stack,
)

# Relative cutoff below which singular values count as zero (numerical rank).
SV_RELATIVE_CUTOFF = 1e-10


@dataclass(frozen=True)
class RansacConfig:
    """Consensus-search settings.

    ``inlier_threshold`` is the pixel reprojection distance below which a
    correspondence supports a hypothesis. ``min_sample_size`` defaults to 4:
    the camera has 8 unknowns and each correspondence contributes 2 equations.
    ``refit_rounds`` > 1 re-masks and refits repeatedly after selection.
    """

    inlier_threshold: float = 2.0
    max_iterations: int = 256
    min_sample_size: int = 4
    seed: int = 0
    refit_rounds: int = 1

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise InputError("inlier_threshold must be positive")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be at least 1")
        if self.min_sample_size < 4:
            raise InputError("min_sample_size must be at least 4")
        if self.refit_rounds < 1:
            raise InputError("refit_rounds must be at least 1")


@dataclass(frozen=True, eq=False)
class RansacOutcome:
    """Best camera found, with its supporting inlier set."""

    camera: AffineCamera
    inlier_mask: BoolArray
    inlier_count: int


@dataclass(frozen=True, eq=False)
class SvdFactors:
    """Thin SVD of the 4xK lifted point stack X: ``X = u @ diag(s) @ v.T``.

    u is 4x4 orthogonal, s holds the 4 singular values (descending), v is Kx4
    with orthonormal columns. Equivalently ``X.T = v @ diag(s) @ u.T``.
    """

    u: FloatArray
    s: FloatArray
    v: FloatArray

    def pinv(self, rel_cutoff: float = SV_RELATIVE_CUTOFF) -> FloatArray:
        """Pseudo-inverse of X (Kx4); singular values below the cutoff are zeroed."""
        s = self.s
        inv = np.where(s > rel_cutoff * s[0], 1.0 / np.where(s == 0, 1.0, s), 0.0)
        return self.v @ (inv[:, None] * self.u.T)


def solve_lstsq(
    points3: Sequence | npt.ArrayLike, targets: Sequence | npt.ArrayLike
) -> tuple[AffineCamera, SvdFactors]:
    """Least-squares camera fit through the pseudo-inverse of the point stack.

    Solves ``P.T = pinv(X.T) @ targets`` for the 2x4 camera minimizing
    sum ||P X_i - t_i||^2. Requires K >= 4 points whose 4xK stack has full
    rank; otherwise raises DegenerateConfigurationError naming the rank.
    """
    pts = as_point_stack(points3)
    tgt = as_pixel_stack(targets)
    if len(pts) != len(tgt):
        raise InputError(f"point/target count mismatch: {len(pts)} vs {len(tgt)}")
    if len(pts) < 4:
        raise InputError(f"need at least 4 correspondences to fit a camera, got {len(pts)}")

    # X is 4xK; numpy's thin SVD of X gives u (4,4), s (4,), vh (4,K).
    u, s, vh = np.linalg.svd(pts.T, full_matrices=False)
    rank = int(np.count_nonzero(s > SV_RELATIVE_CUTOFF * s[0])) if s[0] > 0 else 0
    if rank < 4:
        raise DegenerateConfigurationError(
            f"lifted points span only rank {rank} of 4; "
            "cannot determine the camera (coplanar configuration)",
            rank=rank,
        )
    factors = SvdFactors(u=u, s=s, v=vh.T)
    p_t = factors.pinv().T @ tgt  # (4,2): pinv(X.T) @ targets
    return AffineCamera(p_t.T), factors


def hypothesis_index_sets(n_points: int, cfg: RansacConfig) -> list[np.ndarray]:
    """Seeded sampling plan: one sorted index set of size min_sample_size per round."""
    rng = np.random.default_rng(cfg.seed)
    return [
        np.sort(rng.choice(n_points, size=cfg.min_sample_size, replace=False))
        for _ in range(cfg.max_iterations)
    ]


def _batch_minimal_fit(
    pts: FloatArray, tgt: FloatArray, samples: np.ndarray
) -> tuple[FloatArray, BoolArray]:
    """Fit one camera per sampled index set; flag degenerate samples.

    Same math as solve_lstsq, batched over hypotheses.
    """
    a = pts[samples]  # (B, m, 4) = per-sample X.T
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    ok = s[:, -1] > SV_RELATIVE_CUTOFF * s[:, 0]
    s_safe = np.where(s > 0, s, 1.0)
    inv_s = np.where(ok[:, None], 1.0 / s_safe, 0.0)
    pinv = np.einsum("bji,bj,bkj->bik", vh, inv_s, u)  # (B, 4, m) = pinv of each X.T
    p_t = pinv @ tgt[samples]  # (B, 4, 2)
    return p_t.transpose(0, 2, 1), ok


def ransac_fit(
    points3: Sequence | npt.ArrayLike,
    targets: Sequence | npt.ArrayLike,
    cfg: RansacConfig,
    hypothesis_sets: list[np.ndarray] | None = None,
) -> RansacOutcome:
    """RANSAC camera estimation over lifted point / target pairs.

    Runs ``cfg.max_iterations`` hypothesize-and-count rounds with
    ``min_sample_size`` samples, keeps the hypothesis with the most inliers
    (ties broken by lower mean inlier residual, then by round order), refits
    on the winning inlier set, and recomputes the final mask under the refit
    camera. Deterministic given ``cfg.seed``.

    ``hypothesis_sets`` overrides the seeded sampling plan with explicit index
    sets; used to test equivalence under reordering of the input.
    """
    pts = as_point_stack(points3)
    tgt = as_pixel_stack(targets)
    n = len(pts)
    if len(tgt) != n:
        raise InputError(f"point/target count mismatch: {n} vs {len(tgt)}")
    if n < cfg.min_sample_size:
        raise InputError(
            f"need at least min_sample_size={cfg.min_sample_size} correspondences, got {n}"
        )

    plan = hypothesis_sets if hypothesis_sets is not None else hypothesis_index_sets(n, cfg)
    samples = np.asarray(plan, dtype=np.intp)
    cams, ok = _batch_minimal_fit(pts, tgt, samples)
    if not ok.any():
        raise DegenerateConfigurationError(
            f"all {len(plan)} hypothesis samples were rank deficient", rank=None
        )

    # Residual distance of every point under every valid hypothesis.
    proj = np.einsum("bij,kj->bki", cams, pts)  # (B, n, 2)
    dist = np.linalg.norm(proj - tgt[None, :, :], axis=2)  # (B, n)
    inlier = dist < cfg.inlier_threshold
    counts = np.where(ok, inlier.sum(axis=1), -1)

    best = -1
    best_key = None
    for b in range(len(plan)):
        if counts[b] < cfg.min_sample_size:
            continue
        mean_res = float(dist[b][inlier[b]].mean())
        key = (-int(counts[b]), mean_res)
        if best_key is None or key < best_key:
            best, best_key = b, key
    if best < 0:
        raise NoConsensusError(
            f"no hypothesis reached {cfg.min_sample_size} inliers in {len(plan)} rounds"
        )

    mask = inlier[best].copy()
    camera = None
    for _ in range(cfg.refit_rounds):
        camera, _ = solve_lstsq(pts[mask], tgt[mask])
        res = np.linalg.norm(project_residuals(camera, pts, tgt), axis=1)
        mask = res < cfg.inlier_threshold
    count = int(mask.sum())
    if count < cfg.min_sample_size:
        raise NoConsensusError(
            f"refit camera retains only {count} inliers (< {cfg.min_sample_size})"
        )
    return RansacOutcome(camera=camera, inlier_mask=mask, inlier_count=count)


def project_residuals(cam: AffineCamera, pts: FloatArray, tgt: FloatArray) -> FloatArray:
    """(N, 2) signed reprojection residuals ``P X_i - t_i``."""
    return pts @ cam.p.T - tgt
