"""corrdepth: dense depth from sparse two-view correspondences.

A depth grid is recovered by first-order descent on a robust reprojection
loss whose camera is re-estimated every step with RANSAC and a least-squares
solve that the gradient flows through.
"""

from .camera import RansacConfig, RansacOutcome, SvdFactors, ransac_fit, solve_lstsq
from .errors import (
    DegenerateAlignmentError,
    DegenerateConfigurationError,
    DivisionHazardError,
    IllConditionedJacobianError,
    InputError,
    InsufficientSupportError,
    NoConsensusError,
    OutOfBoundsError,
    SolverError,
)
from .geometry import (
    AffineCamera,
    CorrespondenceSet,
    DepthField,
    HPoint3,
    Pixel2,
    lift,
    lift_many,
    project,
    project_points,
    reprojection_residual,
)
from .gradients import LossGradient, camera_jacobian, composite_loss, loss_and_grad
from .metrics import DepthAlignment, MetricReport, align, metrics, shift_gt_positive
from .optim import FitReport, OptimConfig, fit_depth
from .robust import RobustParams, corr_loss, robust_weight, robust_weight_grad
from .scenes import (
    CorruptionSpec,
    SceneSpec,
    ViewSpec,
    corrupt,
    generate_correspondences,
    gt_camera,
    pair_transform,
    render_depth,
)

__version__ = "0.1.0"

__all__ = [
    "AffineCamera",
    "CorrespondenceSet",
    "CorruptionSpec",
    "DepthAlignment",
    "DepthField",
    "DegenerateAlignmentError",
    "DegenerateConfigurationError",
    "DivisionHazardError",
    "FitReport",
    "HPoint3",
    "IllConditionedJacobianError",
    "InputError",
    "InsufficientSupportError",
    "LossGradient",
    "MetricReport",
    "NoConsensusError",
    "OptimConfig",
    "OutOfBoundsError",
    "Pixel2",
    "RansacConfig",
    "RansacOutcome",
    "RobustParams",
    "SceneSpec",
    "SolverError",
    "SvdFactors",
    "ViewSpec",
    "align",
    "camera_jacobian",
    "composite_loss",
    "corr_loss",
    "corrupt",
    "fit_depth",
    "generate_correspondences",
    "gt_camera",
    "lift",
    "lift_many",
    "loss_and_grad",
    "metrics",
    "pair_transform",
    "project",
    "project_points",
    "ransac_fit",
    "render_depth",
    "reprojection_residual",
    "robust_weight",
    "robust_weight_grad",
    "shift_gt_positive",
    "solve_lstsq",
]
