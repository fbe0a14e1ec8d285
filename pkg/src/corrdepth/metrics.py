"""Depth evaluation: affine-in-depth alignment plus the four error metrics.

A depth estimate is only determined up to an affine reparameterization, so
before computing errors the prediction is mapped onto the ground truth with
``scale * (pred - pred_shift) + gt_shift`` where the shifts are the masked
medians and the scale is the least-squares fit of the shifted prediction to
the shifted ground truth. Evaluations are then invariant to affine changes of
the prediction (including sign flips).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateAlignmentError, DivisionHazardError, InputError
from .geometry import BoolArray, DepthField

# Relative metrics divide by |gt|; values below this are a renormalization bug.
GT_MAGNITUDE_FLOOR = 1e-6


@dataclass(frozen=True)
class DepthAlignment:
    """Affine map applied to a prediction: scale * (pred - pred_shift) + gt_shift."""

    scale: float
    pred_shift: float
    gt_shift: float


@dataclass(frozen=True)
class MetricReport:
    l1: float
    rmse: float
    rel_l1: float
    sq_rel: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def to_csv_row(self) -> str:
        return "%.17g,%.17g,%.17g,%.17g" % (self.l1, self.rmse, self.rel_l1, self.sq_rel)

    @staticmethod
    def csv_header() -> str:
        return "l1,rmse,rel_l1,sq_rel"


def _check_grids(pred: DepthField, gt: DepthField, mask: BoolArray | None) -> BoolArray:
    if pred.values.shape != gt.values.shape:
        raise InputError(
            f"grid shape mismatch: {pred.values.shape} vs {gt.values.shape}"
        )
    if mask is None:
        return np.ones(pred.values.shape, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != pred.values.shape:
        raise InputError(f"mask shape {m.shape} does not match grids {pred.values.shape}")
    return m


def align(
    pred: DepthField,
    gt: DepthField,
    mask: BoolArray | None = None,
    literal_scale: bool = False,
) -> tuple[DepthField, DepthAlignment]:
    """Fit the affine-in-depth map from prediction to ground truth on the mask.

    ``pred_shift``/``gt_shift`` are the masked medians; the scale is
    sum(p~ * g~) / sum(p~^2) over the mask with p~, g~ the shifted values,
    which minimizes the masked squared error for the fixed shifts.
    ``literal_scale`` computes the ratio from the unshifted values instead
    (compatibility variant; no longer least-squares optimal).
    """
    m = _check_grids(pred, gt, mask)
    if not m.any():
        raise DegenerateAlignmentError("alignment mask is empty")
    p = pred.values[m]
    g = gt.values[m]
    pred_shift = float(np.median(p))
    gt_shift = float(np.median(g))
    if literal_scale:
        denom = float(np.sum(p * p))
        numer = float(np.sum(p * g))
    else:
        ps = p - pred_shift
        gs = g - gt_shift
        denom = float(np.sum(ps * ps))
        numer = float(np.sum(ps * gs))
    if denom == 0.0:
        raise DegenerateAlignmentError(
            "prediction is constant on the mask; depth scale is undefined"
        )
    scale = numer / denom
    aligned = DepthField(scale * (pred.values - pred_shift) + gt_shift)
    return aligned, DepthAlignment(scale=scale, pred_shift=pred_shift, gt_shift=gt_shift)


def metrics(
    aligned: DepthField, gt: DepthField, mask: BoolArray | None = None
) -> MetricReport:
    """Mean absolute, RMS, relative-absolute, and relative-squared error on the mask."""
    m = _check_grids(aligned, gt, mask)
    if not m.any():
        raise InputError("metric mask is empty")
    a = aligned.values[m]
    g = gt.values[m]
    absg = np.abs(g)
    if float(absg.min()) < GT_MAGNITUDE_FLOOR:
        raise DivisionHazardError(
            "ground-truth depth contains near-zero magnitudes; shift it to a "
            "positive range (see shift_gt_positive) before computing relative metrics"
        )
    err = a - g
    return MetricReport(
        l1=float(np.mean(np.abs(err))),
        rmse=float(np.sqrt(np.mean(err * err))),
        rel_l1=float(np.mean(np.abs(err) / absg)),
        sq_rel=float(np.mean(err * err / absg)),
    )


def shift_gt_positive(
    gt: DepthField, mask: BoolArray | None = None, floor: float = 0.1
) -> DepthField:
    """Shift a ground-truth grid so its masked minimum equals ``floor``.

    Relative metrics assume strictly positive reference depths; synthetic
    grids are centered near zero, so evaluations shift them first. Alignment
    absorbs the shift, leaving l1/rmse unchanged.
    """
    m = _check_grids(gt, gt, mask)
    lo = float(gt.values[m].min())
    return DepthField(gt.values + (floor - lo))


def write_metrics_json(report: MetricReport, path: str | Path) -> None:
    Path(path).write_text(report.to_json() + "\n")


def write_metrics_csv(report: MetricReport, path: str | Path) -> None:
    Path(path).write_text(MetricReport.csv_header() + "\n" + report.to_csv_row() + "\n")
