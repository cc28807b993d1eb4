"""Classical matching: patch cost volume, winner-take-all, continuous refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import PatchParams, patch_cost
from .errors import DivergenceError
from .imagecore import DisparityMap, as_disparity, box_sum, check_same_shape, sample_row

DEFAULT_MAX_DISP = 192
COST_THRESHOLD = 0.5
LR_THRESHOLD = 1.0


@dataclass
class CostVolume:
    """``costs[d, v, u]`` for integer hypotheses ``d = 0 .. d_max-1``."""

    costs: np.ndarray
    valid: np.ndarray

    @property
    def d_max(self) -> int:
        return self.costs.shape[0]

    @property
    def shape(self):
        return self.costs.shape[1:]


def build_cost_volume(left_sig, right_sig, d_max: int = DEFAULT_MAX_DISP, pp: PatchParams = PatchParams()) -> CostVolume:
    """Mean squared difference between the left patch at u and the right patch at u - d.

    Rows and the right image edge use reflect padding. Entries whose right
    patch would start left of column 0 (``u - d - p < 0``) are invalid.
    """
    left = np.asarray(left_sig, dtype=np.float64)
    right = np.asarray(right_sig, dtype=np.float64)
    check_same_shape(left, right)
    h, w = left.shape
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    if d_max > w:
        raise ValueError(f"d_max {d_max} exceeds image width {w}")
    p, s = pp.p, pp.side
    if s > h or s > w:
        raise ValueError(f"patch side {s} larger than image {left.shape}")
    lp = np.pad(left, p, mode="reflect")
    rp = np.pad(right, p, mode="reflect")
    costs = np.zeros((d_max, h, w))
    valid = np.zeros((d_max, h, w), dtype=bool)
    cols = np.arange(w)
    for d in range(d_max):
        if d >= w:
            break
        sq = (lp[:, d:] - rp[:, : rp.shape[1] - d]) ** 2
        costs[d, :, d:] = box_sum(sq, s, mode=None) / pp.area
        valid[d] = (cols - d - p >= 0)[None, :]
    costs[~valid] = 0.0
    return CostVolume(costs, valid)


def _subpixel(c, best, ok):
    """Parabola vertex through (d-1, d, d+1), clamped to +-0.5."""
    d_max, h, w = c.shape
    rows, cols = np.indices((h, w))
    has = ok & (best > 0) & (best < d_max - 1)
    bm = np.clip(best - 1, 0, d_max - 1)
    bp = np.clip(best + 1, 0, d_max - 1)
    c0 = c[best, rows, cols]
    cm = c[bm, rows, cols]
    cp = c[bp, rows, cols]
    has &= np.isfinite(cm) & np.isfinite(cp)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = cm - 2 * c0 + cp
        off = np.where(has & (denom > 0), (cm - cp) / (2 * denom), 0.0)
    # a zero-cost hypothesis is an exact match; any vertex elsewhere would be negative
    off = np.where(c0 <= 1e-12, 0.0, off)
    return np.clip(off, -0.5, 0.5)


def _right_view_argmin(cv: CostVolume):
    """Integer WTA for the right view using the same patch pairs: C_R(u, d) = C_L(u + d, d)."""
    d_max, h, w = cv.costs.shape
    cr = np.full((d_max, h, w), np.inf)
    for d in range(d_max):
        if d >= w:
            break
        c = np.where(cv.valid[d, :, d:], cv.costs[d, :, d:], np.inf)
        cr[d, :, : w - d] = c
    ok = np.isfinite(cr).any(axis=0)
    return np.argmin(cr, axis=0), ok


def wta_disparity(cv: CostVolume, cost_threshold: float = COST_THRESHOLD, lr_threshold: float = LR_THRESHOLD):
    """Winner-take-all with parabola refinement.

    Returns ``(DisparityMap, uncertain)``. A pixel is uncertain when its best
    cost exceeds ``cost_threshold``, when the left-right check disagrees by
    more than ``lr_threshold`` px, when its cost column is flat, or when the
    argmin sits on the first or last valid hypothesis. Pixels with no valid
    hypothesis are invalid (and uncertain).
    """
    c = np.where(cv.valid, cv.costs, np.inf)
    ok = cv.valid.any(axis=0)
    best = np.argmin(c, axis=0)
    rows, cols = np.indices(best.shape)
    best_cost = c[best, rows, cols]
    disp = best + _subpixel(c, best, ok)

    last_valid = cv.d_max - 1 - np.argmax(cv.valid[::-1], axis=0)
    first_valid = np.argmax(cv.valid, axis=0)
    worst = np.where(cv.valid, cv.costs, -np.inf).max(axis=0)
    uncertain = ~ok
    uncertain |= best_cost > cost_threshold
    uncertain |= (best == first_valid) | (best == last_valid)
    uncertain |= worst - best_cost <= 1e-12

    best_r, ok_r = _right_view_argmin(cv)
    ur = np.clip(np.rint(cols - disp).astype(np.intp), 0, best.shape[1] - 1)
    dr = best_r[rows, ur]
    lr_bad = ~ok_r[rows, ur] | (np.abs(disp - dr) > lr_threshold)
    uncertain |= lr_bad
    return DisparityMap(np.where(ok, disp, 0.0), ok), uncertain


# --- continuous refinement ------------------------------------------------------

def _energy_terms(d: DisparityMap, left, right, pp: PatchParams, lambda_smooth: float, region,
                  reproj_weight: float):
    """Reprojection (mean) and smoothness (sum) terms with their gradients, kept apart."""
    u = np.arange(left.shape[1], dtype=np.float64)[None, :]
    vals, slope, inside = sample_row(right, u - d.disp)
    sample_ok = inside & d.valid
    r = np.where(sample_ok, left - vals, 0.0)
    cost, mask = patch_cost(r * r, sample_ok, pp)
    n = int(mask.sum())
    e_rep, g_rep = 0.0, np.zeros_like(d.disp)
    if reproj_weight and n:
        e_rep = reproj_weight * float(cost[mask].mean())
        cover = box_sum(mask.astype(np.float64), pp.side, mode="constant")
        g_rep = reproj_weight * cover / (n * pp.area) * 2.0 * r * slope * sample_ok

    e_sm, g_sm = 0.0, np.zeros_like(d.disp)
    if lambda_smooth:
        dd = d.disp
        for axis in (0, 1):
            diff = np.diff(dd, axis=axis)
            pair = np.logical_and(
                np.take(region, np.arange(1, dd.shape[axis]), axis=axis),
                np.take(region, np.arange(0, dd.shape[axis] - 1), axis=axis),
            )
            diff = np.where(pair, diff, 0.0)
            e_sm += lambda_smooth * float(np.sum(diff * diff))
            g = 2.0 * lambda_smooth * diff
            pad_hi = [(0, 0), (0, 0)]
            pad_lo = [(0, 0), (0, 0)]
            pad_hi[axis] = (1, 0)
            pad_lo[axis] = (0, 1)
            g_sm += np.pad(g, pad_hi) - np.pad(g, pad_lo)
    return e_rep, np.where(region, g_rep, 0.0), e_sm, np.where(region, g_sm, 0.0), n


def _prepare(disp, left_sig, right_sig, region):
    d = as_disparity(disp)
    left = np.asarray(left_sig, dtype=np.float64)
    right = np.asarray(right_sig, dtype=np.float64)
    check_same_shape(left, right, d.disp)
    region = d.valid if region is None else np.asarray(region, dtype=bool) & d.valid
    return d, left, right, region


def refine_energy(disp, left_sig, right_sig, pp: PatchParams, lambda_smooth: float,
                  region=None, reproj_weight: float = 1.0):
    """Energy ``w * mean patch cost + lambda * sum |grad d|^2`` and its gradient in d.

    The patch validity mask is treated as fixed at the evaluation point.
    ``region`` restricts the smoothness pairs (default: the disparity's valid set).
    Returns ``(energy, grad, n_patches)``.
    """
    d, left, right, region = _prepare(disp, left_sig, right_sig, region)
    e_rep, g_rep, e_sm, g_sm, n = _energy_terms(d, left, right, pp, lambda_smooth, region, reproj_weight)
    return e_rep + e_sm, g_rep + g_sm, n


def refine_disparity(init, left_sig, right_sig, pp: PatchParams = PatchParams(), lambda_smooth: float = 0.0,
                     iters: int = 100, step: float = 0.5, reproj_weight: float = 1.0) -> DisparityMap:
    """Gradient descent on :func:`refine_energy` over the valid pixels of ``init``.

    ``step`` multiplies the gradient of the pixel-summed energy: the mean
    reprojection term is scaled by its patch count, the smoothness term is
    already a sum. The step is therefore per pixel and independent of image size.
    """
    d0, left, right, region = _prepare(init, left_sig, right_sig, None)
    disp = d0.disp.copy()
    w = disp.shape[1]
    for it in range(iters):
        _, g_rep, _, g_sm, n = _energy_terms(DisparityMap(disp, region), left, right, pp, lambda_smooth,
                                             region, reproj_weight)
        grad = max(n, 1) * g_rep + g_sm
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite refinement gradient at iteration {it}")
        disp = disp - step * grad
        disp = np.where(region, np.clip(disp, 0.0, w - 1), 0.0)
    return DisparityMap(disp, region)
