"""Brute-force reference implementations used by the tests.

Each oracle is a direct loop over pixels written independently of the
vectorized code under test.
"""
import math

import numpy as np


def reflect_index(i, n):
    """numpy 'reflect' padding (edge sample not repeated)."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    return i if i < n else period - i


def window_mean(img, side):
    h, w = img.shape
    r = side // 2
    out = np.zeros((h, w))
    for v in range(h):
        for u in range(w):
            s = 0.0
            for dv in range(-r, r + 1):
                for du in range(-r, r + 1):
                    s += img[reflect_index(v + dv, h), reflect_index(u + du, w)]
            out[v, u] = s / (side * side)
    return out


def lcn_response(img, side, eta):
    h, w = img.shape
    r = side // 2
    out = np.zeros((h, w))
    for v in range(h):
        for u in range(w):
            vals = [img[reflect_index(v + dv, h), reflect_index(u + du, w)]
                    for dv in range(-r, r + 1) for du in range(-r, r + 1)]
            mu = sum(vals) / len(vals)
            var = sum((x - mu) ** 2 for x in vals) / len(vals)
            out[v, u] = (img[v, u] - mu) / (math.sqrt(var) + eta)
    return out


def shift_warp(right, disp):
    """Integer-disparity warp by direct lookup."""
    h, w = right.shape
    out = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    for v in range(h):
        for u in range(w):
            x = u - int(disp[v, u])
            if 0 <= x < w:
                out[v, u] = right[v, x]
                mask[v, u] = True
    return out, mask


def patch_cost(sq, ok, p):
    """Per-pixel patch mean of ``sq``; invalid when the patch leaves the image or touches ``~ok``."""
    h, w = sq.shape
    side = 2 * p + 1
    cost = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    for v in range(p, h - p):
        for u in range(p, w - p):
            good = True
            s = 0.0
            for dv in range(-p, p + 1):
                for du in range(-p, p + 1):
                    if not ok[v + dv, u + du]:
                        good = False
                    s += sq[v + dv, u + du] if ok[v + dv, u + du] else 0.0
            if good:
                cost[v, u] = s / (side * side)
                mask[v, u] = True
    return cost, mask


def cost_volume(left, right, d_max, p):
    """Triple loop over (d, v, u) with reflect padding for out-of-image patch samples."""
    h, w = left.shape
    side = 2 * p + 1
    costs = np.zeros((d_max, h, w))
    valid = np.zeros((d_max, h, w), dtype=bool)
    for d in range(d_max):
        for v in range(h):
            for u in range(w):
                if u - d - p < 0:
                    continue
                s = 0.0
                for dv in range(-p, p + 1):
                    for du in range(-p, p + 1):
                        vv = reflect_index(v + dv, h)
                        a = left[vv, reflect_index(u + du, w)]
                        b = right[vv, reflect_index(u - d + du, w)]
                        s += (a - b) ** 2
                costs[d, v, u] = s / (side * side)
                valid[d, v, u] = True
    return costs, valid


def metrics(pred, pred_valid, unc, gt, gt_valid, fb, mode, zero_fill, eps=0.1):
    """Loop version of the evaluation reductions."""
    errs, derrs = [], []
    h, w = gt.shape
    for v in range(h):
        for u in range(w):
            if not gt_valid[v, u] or gt[v, u] <= eps:
                continue
            if mode == "exclude" and unc[v, u]:
                continue
            p = pred[v, u] if pred_valid[v, u] else 0.0
            if zero_fill and unc[v, u]:
                p = 0.0
            errs.append(abs(p - gt[v, u]))
            zg = fb / gt[v, u]
            zp = fb / p if p > eps else 0.0
            derrs.append(abs(zp - zg) * 1000.0)
    n = len(errs)
    return {
        "n_pixels": n,
        "epe": sum(errs) / n,
        "bad1": sum(1 for e in errs if e > 1.0) / n,
        "abs_depth_err": sum(derrs) / n,
        "frac_gt_4mm": sum(1 for e in derrs if e > 4.0) / n,
    }


def ols_slope(frames, powers):
    """Per-pixel least-squares slope from the textbook formula."""
    n, h, w = frames.shape
    out = np.zeros((h, w))
    em = sum(powers) / n
    for v in range(h):
        for u in range(w):
            xm = sum(frames[i, v, u] for i in range(n)) / n
            num = sum((powers[i] - em) * (frames[i, v, u] - xm) for i in range(n))
            den = sum((powers[i] - em) ** 2 for i in range(n))
            out[v, u] = num / den
    return out
