"""Reprojection and disparity losses, the mixed-domain objective, epipolar cost profiles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyReductionError
from .imagecore import (
    as_disparity,
    box_sum,
    check_same_shape,
    local_contrast_normalize,
    sample_row,
    warp_right_to_left,
)
from .pattern import ExtractionParams, extract_2step, extract_binary_pattern

VARIANTS = ("raw", "lcn", "2step", "temporal")
PATCH_SIDES = (7, 11, 15, 21)
PROFILE_STEP = 0.25


@dataclass(frozen=True)
class PatchParams:
    p: int = 5

    def __post_init__(self):
        if self.p < 0:
            raise ValueError(f"patch half-width must be >= 0, got {self.p}")

    @property
    def side(self) -> int:
        return 2 * self.p + 1

    @property
    def area(self) -> int:
        return self.side * self.side

    @classmethod
    def from_side(cls, side: int) -> "PatchParams":
        if side < 1 or side % 2 != 1:
            raise ValueError(f"patch side must be odd, got {side}")
        return cls(side // 2)


@dataclass(frozen=True)
class MixedLossWeights:
    lambda_r: float = 2.0
    lambda_s: float = 0.01

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_s < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class CostProfile:
    pixel: tuple
    hypotheses: np.ndarray
    costs: np.ndarray
    variant: str = ""

    @property
    def argmin(self) -> float:
        return float(self.hypotheses[int(np.argmin(self.costs))])


def patch_cost(sq, sample_ok, pp: PatchParams):
    """Mean of ``sq`` over each patch; patches leaving the image or touching a
    bad sample are masked out. Returns ``(cost_map, mask)``."""
    sq = np.where(sample_ok, sq, 0.0)
    h, w = sq.shape
    cost = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    s, p = pp.side, pp.p
    if s > h or s > w:
        return cost, mask
    inner = (slice(p, h - p), slice(p, w - p))
    bad = box_sum((~sample_ok).astype(np.float64), s, mode=None)
    cost[inner] = box_sum(sq, s, mode=None) / pp.area
    mask[inner] = bad < 0.5
    cost[~mask] = 0.0
    return cost, mask


def reproj_cost_map(left_sig, right_sig, disp, pp: PatchParams = PatchParams()):
    """Patch-wise squared difference between the left signal and the warped right signal.

    Returns ``(cost_map, mean_cost, mask)``.
    """
    left = np.asarray(left_sig, dtype=np.float64)
    d = as_disparity(disp)
    check_same_shape(left, right_sig, d.disp)
    warped, ok = warp_right_to_left(right_sig, d)
    cost, mask = patch_cost((left - warped) ** 2, ok, pp)
    if not mask.any():
        raise EmptyReductionError("no pixel has a fully valid reprojection patch")
    return cost, float(cost[mask].mean()), mask


def smooth_l1(x):
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x):
    return np.clip(x, -1.0, 1.0)


def smooth_l1_disparity(pred, gt, mask=None) -> float:
    pred = as_disparity(pred)
    gt = as_disparity(gt)
    check_same_shape(pred.disp, gt.disp)
    sel = pred.valid & gt.valid
    if mask is not None:
        check_same_shape(mask, gt.disp)
        sel &= np.asarray(mask, dtype=bool)
    if not sel.any():
        raise EmptyReductionError("smooth-L1 over an empty pixel set")
    return float(smooth_l1(pred.disp[sel] - gt.disp[sel]).mean())


def mixed_loss(real_reproj: float, sim_disp: float, sim_reproj: float,
               weights: MixedLossWeights = MixedLossWeights()) -> float:
    return weights.lambda_r * real_reproj + weights.lambda_s * (sim_disp + sim_reproj)


def epipolar_cost_profile(left_sig, right_sig, pixel, d_range, pp: PatchParams = PatchParams(),
                          step: float = PROFILE_STEP, variant: str = "") -> CostProfile:
    """Patch cost at one pixel for constant-disparity hypotheses ``lo, lo+step, ..., hi``.

    Patch pixels outside the image are dropped; hypotheses whose warp leaves
    the image for any remaining patch pixel are skipped.
    """
    left = np.asarray(left_sig, dtype=np.float64)
    right = np.asarray(right_sig, dtype=np.float64)
    check_same_shape(left, right)
    h, w = left.shape
    u, v = (int(pixel[0]), int(pixel[1]))
    if not (0 <= u < w and 0 <= v < h):
        raise ValueError(f"pixel {pixel} outside image {w}x{h}")
    lo, hi = float(d_range[0]), float(d_range[1])
    if lo < 0 or hi >= w or hi < lo:
        raise ValueError(f"disparity range {d_range} must lie in [0, {w})")
    v0, v1 = max(v - pp.p, 0), min(v + pp.p, h - 1) + 1
    u0, u1 = max(u - pp.p, 0), min(u + pp.p, w - 1) + 1
    lpatch = left[v0:v1, u0:u1]
    rrows = right[v0:v1]
    cols = np.arange(u0, u1, dtype=np.float64)[None, :]
    hyps = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
    keep, costs = [], []
    for d in hyps:
        vals, _, inside = sample_row(rrows, np.broadcast_to(cols - d, lpatch.shape))
        if not inside.all():
            continue
        keep.append(d)
        costs.append(float(np.sum((lpatch - vals) ** 2)) / pp.area)
    return CostProfile((u, v), np.array(keep), np.array(costs), variant)


def variant_signals(left_frames, right_frames, powers, variant: str,
                    extraction: ExtractionParams | None = None, lcn_window: int = 9):
    """Matching signals for one of the four pattern variants.

    raw and lcn use the highest-power frame; 2step differences the lowest and
    highest power frames; temporal fits the whole sequence.
    """
    extraction = extraction or ExtractionParams()
    if variant == "raw":
        return (np.asarray(left_frames[-1], dtype=np.float64), np.asarray(right_frames[-1], dtype=np.float64))
    if variant == "lcn":
        return (local_contrast_normalize(left_frames[-1], lcn_window).astype(np.float64),
                local_contrast_normalize(right_frames[-1], lcn_window).astype(np.float64))
    if variant == "2step":
        return tuple(extract_2step(f[0], f[-1], extraction.window, extraction.threshold).astype(np.float64)
                     for f in (left_frames, right_frames))
    if variant == "temporal":
        return tuple(extract_binary_pattern((f, powers), extraction).astype(np.float64)
                     for f in (left_frames, right_frames))
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")

