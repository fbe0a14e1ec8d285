"""Saturating robust kernel and the mean robust reprojection loss.

The kernel grows like a quadratic for small errors and flattens to the
constant ``cutoff**2 / 4`` once the error passes ``cutoff``; it is C1 at the
knee, so large (outlier) errors contribute bounded cost and zero gradient.
Setting ``cutoff=inf`` disables the saturation, leaving plain x**2 / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .errors import InputError
from .geometry import CorrespondenceSet, DepthField, AffineCamera, lift_many, project_points

# Guard inside the gradient of the Euclidean norm; the distance is not
# differentiable at exactly zero.
NORM_EPS = 1e-12


@dataclass(frozen=True)
class RobustParams:
    """Kernel settings.

    ``cutoff`` is the error level (pixels) beyond which cost saturates.
    ``on_squared`` feeds the kernel the squared distance instead of the
    distance (alternative reading of the loss; off by default).
    """

    cutoff: float = 5.0
    on_squared: bool = False

    def __post_init__(self):
        if not self.cutoff > 0:
            raise InputError("cutoff must be positive")


def robust_weight(x: npt.ArrayLike, params: RobustParams) -> np.ndarray | float:
    """Kernel value: x^2/2 * (1 - x^2 / (2 c^2)) for x <= c, else c^2/4."""
    arr = np.asarray(x, dtype=np.float64)
    c2 = params.cutoff * params.cutoff
    x2 = arr * arr
    # The quadratic branch evaluates to exactly c^2/4 at the knee.
    quart = 0.5 * x2 * (1.0 - x2 / (2.0 * c2)) if math.isfinite(c2) else 0.5 * x2
    out = np.where(x2 <= c2, quart, 0.25 * c2)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def robust_weight_grad(x: npt.ArrayLike, params: RobustParams) -> np.ndarray | float:
    """Kernel derivative: x - x^3/c^2 for x <= c, else 0."""
    arr = np.asarray(x, dtype=np.float64)
    c = params.cutoff
    grad = arr - arr**3 / (c * c) if math.isfinite(c) else arr.copy()
    out = np.where(arr <= c, grad, 0.0)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def distance_cost(dist: npt.ArrayLike, params: RobustParams) -> np.ndarray:
    """Per-correspondence cost of a reprojection distance under the kernel."""
    d = np.asarray(dist, dtype=np.float64)
    arg = d * d if params.on_squared else d
    return np.asarray(robust_weight(arg, params))


def distance_cost_grad(dist: npt.ArrayLike, params: RobustParams) -> np.ndarray:
    """d(cost)/d(distance); chain rule through the square when on_squared."""
    d = np.asarray(dist, dtype=np.float64)
    if params.on_squared:
        return np.asarray(robust_weight_grad(d * d, params)) * 2.0 * d
    return np.asarray(robust_weight_grad(d, params))


def corr_loss(
    cam: AffineCamera,
    corr: CorrespondenceSet,
    field: DepthField,
    params: RobustParams,
) -> float:
    """Mean robust reprojection cost over all correspondences.

    Lifts each source pixel with its stored depth, projects through ``cam``,
    and averages the kernel of the Euclidean distances to the targets.
    Bounded above by cutoff^2 / 4.
    """
    pts = lift_many(corr.source, field)
    dist = np.linalg.norm(project_points(cam, pts) - corr.target, axis=1)
    return float(distance_cost(dist, params).mean())
