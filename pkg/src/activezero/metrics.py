"""Disparity and depth error metrics with include/exclude-uncertain protocols."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyReductionError
from .imagecore import EPS_DISP, StereoRig, as_disparity, check_same_shape, disparity_to_depth

MODES = ("include", "exclude")
BAD1_THRESHOLD = 1.0
DEPTH_OUTLIER_MM = 4.0
REPORT_KEYS = ("mode", "zero_fill", "n_pixels", "epe", "bad1", "abs_depth_err", "frac_gt_4mm", "masks")


@dataclass
class MetricsReport:
    mode: str
    zero_fill: bool
    n_pixels: int
    epe: float
    bad1: float
    abs_depth_err: float
    frac_gt_4mm: float
    masks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "zero_fill": self.zero_fill,
            "n_pixels": self.n_pixels,
            "epe": self.epe,
            "bad1": self.bad1,
            "abs_depth_err": self.abs_depth_err,
            "frac_gt_4mm": self.frac_gt_4mm,
            "masks": {str(k): (v.to_dict() if v is not None else None) for k, v in self.masks.items()},
        }


def depth_error_map(pred, gt, rig: StereoRig):
    """``|f*b/pred - f*b/gt|`` in millimeters, invalid where either disparity is unusable."""
    zp, vp = disparity_to_depth(pred, rig)
    zg, vg = disparity_to_depth(gt, rig)
    valid = vp & vg
    return np.where(valid, np.abs(zp - zg) * 1000.0, 0.0), valid


def _object_masks(object_masks, shape):
    if object_masks is None:
        return {}
    if isinstance(object_masks, dict):
        return {k: np.asarray(m, dtype=bool) for k, m in object_masks.items()}
    labels = np.asarray(object_masks)
    check_same_shape(labels, np.zeros(shape))
    if labels.dtype == bool:
        return {1: labels}
    return {int(k): labels == k for k in np.unique(labels) if k != 0}


def _reduce(pred_disp, gt_disp, sel, rig, mode, zero_fill):
    if not sel.any():
        raise EmptyReductionError("evaluation pixel set is empty")
    p = pred_disp[sel]
    g = gt_disp[sel]
    err = np.abs(p - g)
    zg = rig.fb / g
    # predictions at or below the depth guard count as a zero-depth output
    zp = np.where(p > EPS_DISP, rig.fb / np.maximum(p, EPS_DISP), 0.0)
    derr = np.abs(zp - zg) * 1000.0
    return MetricsReport(
        mode=mode,
        zero_fill=zero_fill,
        n_pixels=int(sel.sum()),
        epe=float(err.mean()),
        bad1=float(np.mean(err > BAD1_THRESHOLD)),
        abs_depth_err=float(derr.mean()),
        frac_gt_4mm=float(np.mean(derr > DEPTH_OUTLIER_MM)),
    )


def evaluate(pred, uncertain, gt, rig: StereoRig, object_masks=None, mode: str = "exclude",
             zero_fill: bool = False) -> MetricsReport:
    """Metrics over ground-truth-valid pixels.

    ``exclude`` drops pixels flagged in ``uncertain``; ``include`` keeps them
    with their predicted value, or with 0 when ``zero_fill`` is set (the way a
    sensor reports no-depth). Pixels where the prediction is invalid are
    scored as disparity 0 in both modes.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    pred = as_disparity(pred)
    gt = as_disparity(gt)
    check_same_shape(pred.disp, gt.disp)
    unc = np.zeros(gt.shape, dtype=bool) if uncertain is None else np.asarray(uncertain, dtype=bool)
    check_same_shape(unc, gt.disp)

    pd = np.where(pred.valid, pred.disp, 0.0)
    if zero_fill:
        pd = np.where(unc, 0.0, pd)
    base = gt.valid & (gt.disp > EPS_DISP)
    sel = base & ~unc if mode == "exclude" else base
    report = _reduce(pd, gt.disp, sel, rig, mode, zero_fill)
    for key, m in _object_masks(object_masks, gt.shape).items():
        check_same_shape(m, gt.disp)
        s = sel & m
        report.masks[key] = _reduce(pd, gt.disp, s, rig, mode, zero_fill) if s.any() else None
    return report
