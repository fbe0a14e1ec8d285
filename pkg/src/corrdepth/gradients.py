"""Analytic gradient of the robust reprojection loss with respect to depth.

Two paths contribute for each correspondence i with source pixel q_i and
depth d = D[q_i]:

* the direct path: d changes the lifted point X_i, moving its projection
  through the camera's depth column;
* the camera path: d changes the lifted points the camera was fitted to, so
  the least-squares solve itself shifts. This is differentiated through the
  SVD factors of the inlier stack using the standard first-order SVD
  perturbation identities (the same computation an autodiff framework
  performs when backpropagating through an SVD-based pseudo-inverse).

The inlier selection is treated as piecewise constant: RANSAC picks the mask,
and gradients flow through the refitted solve on that fixed mask. Outliers
were ignored by the solve, so only inlier depths carry the camera path; all
correspondences carry the direct path.

The SVD perturbation identities divide by differences of squared singular
values, so the jacobian refuses to evaluate (raises) when singular values are
repeated or the stack is rank deficient, rather than silently regularizing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import RansacConfig, SvdFactors, ransac_fit, solve_lstsq
from .errors import IllConditionedJacobianError, InputError
from .geometry import (
    BoolArray,
    CorrespondenceSet,
    DepthField,
    FloatArray,
    as_pixel_stack,
    as_point_stack,
    lift_many,
)
from .robust import NORM_EPS, RobustParams, distance_cost, distance_cost_grad

# Singular values closer (relative to the largest) than this are treated as
# repeated and make the jacobian unreliable.
SV_GAP_CUTOFF = 1e-8
SV_RANK_CUTOFF = 1e-10


@dataclass(frozen=True, eq=False)
class LossGradient:
    """Loss value plus d(loss)/d(depth) on the full grid (zero at untouched pixels)."""

    per_depth: FloatArray
    loss_value: float


def camera_jacobian(
    svd: SvdFactors, inlier_points, inlier_targets
) -> FloatArray:
    """Derivative of every camera entry w.r.t. each inlier depth.

    Returns an (8, K) array: column k holds dP/dd_k flattened row-major
    (P[0,0..3], P[1,0..3]). ``svd`` must be the factors of the 4xK inlier
    stack that produced the camera.

    Derivation: with X = u diag(s) v^T (u 4x4, v Kx4) the camera is
    P = t^T v diag(1/s) u^T where t are the targets. Perturbing one depth
    changes X by dX = e_2 e_k^T, and the factor perturbations follow the
    standard identities

        du = u (F o [m s + s m^T])
        ds = diag(m)
        dv = v (F o [s m + m^T s]) + (I - v v^T) dX^T u / s

    with m = u^T dX v and F_ij = 1 / (s_j^2 - s_i^2). Repeated singular
    values or rank deficiency make F or 1/s blow up, hence the guard.
    """
    pts = as_point_stack(inlier_points)
    tgt = as_pixel_stack(inlier_targets)
    u, s, v = svd.u, svd.s, svd.v
    k = v.shape[0]
    if len(pts) != k or len(tgt) != k:
        raise InputError(f"factor/point count mismatch: {k} vs {len(pts)}/{len(tgt)}")

    smax = float(s[0])
    if smax <= 0 or float(s[-1]) <= SV_RANK_CUTOFF * smax:
        raise IllConditionedJacobianError(
            f"rank-deficient point stack (singular values {s.tolist()})"
        )
    gaps = np.abs(s[:, None] - s[None, :])[np.triu_indices(4, 1)]
    if float(gaps.min()) < SV_GAP_CUTOFF * smax:
        raise IllConditionedJacobianError(
            f"repeated singular values (relative gap below {SV_GAP_CUTOFF}): {s.tolist()}"
        )

    x = tgt.T  # (2, K)
    sinv = 1.0 / s
    denom = s[None, :] ** 2 - s[:, None] ** 2
    f = np.zeros((4, 4))
    off = ~np.eye(4, dtype=bool)
    f[off] = 1.0 / denom[off]

    u2 = u[2]  # u^T e_depth: row of u for the depth coordinate
    xv = x @ v  # (2, 4)
    # x @ (I - v v^T) e_k for all k at once
    xg = x - xv @ v.T  # (2, K)

    # W1[k] and W2[k] are the 4x4 brackets for du_k and dv_k.
    vs = v * s[None, :]
    w1 = f[None] * (u2[None, :, None] * vs[:, None, :]) + (
        f * (s[:, None] * u2[None, :])
    )[None] * v[:, :, None]
    w2 = (f * (s * u2)[:, None])[None] * v[:, None, :] + (
        f * (u2 * s)[None, :]
    )[None] * v[:, :, None]

    ds = v * u2[None, :]  # (K, 4): diagonal of each dSigma_k

    t1 = np.einsum("ab,kbc->kac", xv, w2 * sinv[None, None, :])
    t2 = xg.T[:, :, None] * (u2 * sinv**2)[None, None, :]
    t3 = -(xv[None, :, :] * (sinv**2 * ds)[:, None, :])
    t4 = np.einsum("ab,kcb->kac", xv * sinv[None, :], w1)
    dp = np.einsum("kab,cb->kac", t1 + t2 + t3 + t4, u)  # (K, 2, 4)
    return dp.reshape(k, 8).T


def composite_loss(
    corr: CorrespondenceSet,
    field: DepthField,
    robust: RobustParams,
    inlier_mask: BoolArray,
) -> float:
    """Frozen-mask loss: refit the camera on the masked pairs, evaluate on all.

    This is the deterministic function the analytic gradient differentiates;
    finite differences of it are the reference oracle.
    """
    pts = lift_many(corr.source, field)
    cam, _ = solve_lstsq(pts[inlier_mask], corr.target[inlier_mask])
    dist = np.linalg.norm(pts @ cam.p.T - corr.target, axis=1)
    return float(distance_cost(dist, robust).mean())


def loss_and_grad(
    corr: CorrespondenceSet,
    field: DepthField,
    ransac_cfg: RansacConfig,
    robust: RobustParams,
    inlier_mask: BoolArray | None = None,
    inlier_only: bool = False,
) -> LossGradient:
    """Loss and full-grid depth gradient for one correspondence set.

    When ``inlier_mask`` is None, RANSAC selects it (selection itself carries
    no gradient). The camera is then refitted on the mask and both gradient
    paths are accumulated per source pixel; pixels hosting several
    correspondences sum their contributions.

    ``inlier_only`` restricts the averaged loss to the masked pairs instead
    of all of them (the saturating kernel already caps outlier influence in
    the default all-pairs form).
    """
    pts = lift_many(corr.source, field)
    tgt = corr.target
    if inlier_mask is None:
        outcome = ransac_fit(pts, tgt, ransac_cfg)
        mask = outcome.inlier_mask
    else:
        mask = np.asarray(inlier_mask, dtype=bool)
        if mask.shape != (len(corr),):
            raise InputError(f"inlier mask must have shape ({len(corr)},)")
        if int(mask.sum()) < 4:
            raise InputError("inlier mask must select at least 4 correspondences")
    cam, factors = solve_lstsq(pts[mask], tgt[mask])

    err = pts @ cam.p.T - tgt  # (N, 2)
    dist = np.linalg.norm(err, axis=1)
    in_loss = mask if inlier_only else np.ones(len(corr), dtype=bool)
    n_loss = int(in_loss.sum())
    loss = float(distance_cost(dist[in_loss], robust).mean())

    # Weight of each correspondence: d(cost)/d(distance) / distance, guarded
    # at zero distance where the cost gradient is exactly zero anyway.
    w = np.where(in_loss, distance_cost_grad(dist, robust), 0.0)
    w = w / np.maximum(dist, NORM_EPS) / n_loss

    grid = np.zeros((field.height, field.width))
    ix = np.rint(corr.source[:, 0]).astype(np.intp)
    iy = np.rint(corr.source[:, 1]).astype(np.intp)

    if np.any(w != 0.0):
        # Direct path: the lifted point moves along the camera's depth column.
        direct = w * (err @ cam.p[:, 2])
        np.add.at(grid, (iy, ix), direct)

        # Camera path: dL/dP contracted with dP/dd_k for each inlier k.
        g_cam = np.einsum("i,ia,ib->ab", w, err, pts)  # (2, 4) = dL/dP
        jac = camera_jacobian(factors, pts[mask], tgt[mask])  # (8, K)
        per_inlier = g_cam.reshape(8) @ jac
        np.add.at(grid, (iy[mask], ix[mask]), per_inlier)

    return LossGradient(per_depth=grid, loss_value=loss)
