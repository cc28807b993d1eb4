import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from activezero.cost import PatchParams, variant_signals
from activezero.errors import DivergenceError
from activezero.imagecore import DisparityMap, StereoRig, sample_row
from activezero.matcher import (
    DEFAULT_MAX_DISP,
    CostVolume,
    _subpixel,
    build_cost_volume,
    refine_disparity,
    refine_energy,
    wta_disparity,
)
from activezero.simulator import Emitter, Primitive, Scene, render_temporal_pair

from . import oracles


def shifted_pair(s, shape=(20, 60), seed=0):
    rng = np.random.default_rng(seed)
    h, w = shape
    base = rng.random((h, w + s))
    return base[:, :w], base[:, s:]  # left(u) = right(u - s)


def smooth_texture(shape, seed, sigma=1.5):
    t = gaussian_filter(np.random.default_rng(seed).random(shape), sigma)
    return (t - t.min()) / np.ptp(t)


# --- cost volume -----------------------------------------------------------------------

def test_default_max_disp():
    assert DEFAULT_MAX_DISP == 192


def test_cost_volume_oracle_16x16():
    rng = np.random.default_rng(0)
    left, right = rng.random((2, 16, 16))
    cv = build_cost_volume(left, right, 6, PatchParams(1))
    ref, ref_valid = oracles.cost_volume(left, right, 6, 1)
    assert np.array_equal(cv.valid, ref_valid)
    np.testing.assert_allclose(cv.costs[cv.valid], ref[ref_valid], atol=1e-12)


def test_cost_volume_integer_shift_zero():
    s = 4
    left, right = shifted_pair(s)
    cv = build_cost_volume(left, right, 10, PatchParams(2))
    # interior: rows away from reflect padding, columns whose right patch stays inside
    inner = cv.costs[s, 2:-2, s + 2: -2]
    assert np.abs(inner).max() < 1e-12


def test_cost_volume_errors():
    z = np.zeros((8, 8))
    with pytest.raises(ValueError):
        build_cost_volume(z, z, 9)
    with pytest.raises(ValueError):
        build_cost_volume(z, z, 0)
    with pytest.raises(ValueError):
        build_cost_volume(z, z, 4, PatchParams(5))
    with pytest.raises(ValueError):
        build_cost_volume(z, np.zeros((8, 9)), 4)


# --- winner-take-all ---------------------------------------------------------------------------

def test_wta_integer_shift():
    s = 5
    left, right = shifted_pair(s, (24, 80), seed=1)
    p = PatchParams(2)
    disp, unc = wta_disparity(build_cost_volume(left, right, 16, p))
    interior = (slice(p.p, -p.p), slice(s + p.p + 16, -p.p))
    assert np.all(disp.disp[interior] == s)
    assert not unc[interior].any()


def test_wta_subpixel_shift():
    h, w = 30, 120
    tex = smooth_texture((h, w + 10), 2)
    right = tex[:, 5:5 + w]
    # left(u) = right(u - 2.5) via linear interpolation of the texture
    u = np.arange(w)[None, :] + 5 - 2.5
    left = sample_row(tex, np.broadcast_to(u, (h, w)))[0]
    p = PatchParams(3)
    disp, _ = wta_disparity(build_cost_volume(left, right, 8, p))
    interior = disp.disp[p.p:-p.p, 8 + p.p:-p.p]
    assert np.mean(np.abs(interior - 2.5) <= 0.25) >= 0.95


def test_wta_textureless_all_uncertain():
    z = np.zeros((16, 40))
    disp, unc = wta_disparity(build_cost_volume(z, z, 8, PatchParams(2)))
    assert unc.all()


def test_wta_all_invalid_column_is_invalid():
    rng = np.random.default_rng(3)
    left, right = rng.random((2, 12, 30))
    p = PatchParams(2)
    disp, unc = wta_disparity(build_cost_volume(left, right, 8, p))
    assert not disp.valid[:, : p.p].any()
    assert unc[:, : p.p].all()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_subpixel_offset_bounded(seed):
    rng = np.random.default_rng(seed)
    c = rng.random((7, 4, 5))
    best = np.argmin(c, axis=0)
    off = _subpixel(c, best, np.ones((4, 5), dtype=bool))
    assert np.all(np.abs(off) <= 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_wta_argmin_invariant_to_monotone_relabel(seed):
    rng = np.random.default_rng(seed)
    costs = rng.random((6, 5, 7))
    valid = np.ones_like(costs, dtype=bool)
    a, _ = wta_disparity(CostVolume(costs, valid))
    b, _ = wta_disparity(CostVolume(np.exp(3 * costs) + 0.5, valid))
    assert np.array_equal(np.rint(a.disp - _subpixel_part(costs)), np.rint(b.disp - _subpixel_part(np.exp(3 * costs) + 0.5)))


def _subpixel_part(costs):
    best = np.argmin(costs, axis=0)
    return _subpixel(costs, best, np.ones(best.shape, dtype=bool))


# --- refinement ------------------------------------------------------------------------------------

def plane_patterns(d):
    rig = StereoRig()
    half = 5.0
    wall = Primitive("box", (0.0, 0.0, rig.fb / d + half), size=(half, half, half))
    out = render_temporal_pair(Scene([wall], table_depth=None), rig, Emitter(), 0.0, 0)
    return out.gt_pattern.astype(np.float64), out.gt_pattern_right.astype(np.float64)


def test_refine_fixed_point_on_integer_plane():
    kl, kr = plane_patterns(40)
    sl = (slice(100, 160), slice(200, 300))
    # same crop for both views: left u maps to right u - 40 inside the crop for u >= 40
    kl, kr = kl[sl], kr[sl]
    init = DisparityMap.constant(kl.shape, 40.0)
    out = refine_disparity(init, kl, kr, PatchParams(5), 0.0, iters=50)
    inner = out.disp[:, 45:]
    assert np.abs(inner - 40.0).max() < 1e-3


def test_refine_converges_from_gt_plus_one():
    # a slanted simulated plane; 1 px dots are blurred so GT + 1 lies inside the basin
    rig = StereoRig()
    half = 5.0
    wall = Primitive("box", (0.0, 0.0, 1.0 + half), size=(half, half, half), rotation=(0.0, 0.3, 0.0))
    out = render_temporal_pair(Scene([wall], table_depth=None), rig, Emitter(), 0.0, 0)
    gt = out.gt_disparity
    kl, kr = variant_signals(out.left.frames, out.right.frames, out.left.powers, "temporal")
    left, right = gaussian_filter(kl, 1.0), gaussian_filter(kr, 1.0)
    init = DisparityMap(gt.disp + 1.0, gt.valid)
    pp = PatchParams(5)
    res = refine_disparity(init, left, right, pp, lambda_smooth=0.01, iters=200, step=2.0)
    sel = gt.valid.copy()
    sel[:, :120] = False
    sel[:8] = sel[-8:] = False
    sel[:, -8:] = False
    assert np.mean(np.abs(res.disp - gt.disp)[sel]) < 0.3
    # brute-force check: the refined field has lower reprojection energy than the start
    e0 = refine_energy(init, left, right, pp, 0.0)[0]
    e1 = refine_energy(res, left, right, pp, 0.0)[0]
    assert e1 < e0
    assert refine_energy(gt, left, right, pp, 0.0)[0] < e0


def test_refine_smoothness_only_constant_fixed_point():
    rng = np.random.default_rng(4)
    left, right = rng.random((2, 12, 20))
    init = DisparityMap.constant((12, 20), 3.7)
    _, grad, _ = refine_energy(init, left, right, PatchParams(1), lambda_smooth=1.0, reproj_weight=0.0)
    assert np.all(grad == 0)
    out = refine_disparity(init, left, right, PatchParams(1), lambda_smooth=1.0, iters=10, reproj_weight=0.0)
    assert np.array_equal(out.disp, init.disp)


def fd_check_refine(seed, n=20, eps=1e-6, lam=0.05):
    rng = np.random.default_rng(seed)
    h, w = 14, 40
    right = smooth_texture((h, w), seed, 1.0)
    left = smooth_texture((h, w), seed + 1, 1.0)
    d = DisparityMap.dense(rng.uniform(2.1, 6.9, (h, w)))
    pp = PatchParams(2)
    e0, grad, _ = refine_energy(d, left, right, pp, lam)
    errs = []
    # skip coordinates sitting within eps of an interpolation cell boundary
    cand = [(v, u) for v, u in zip(rng.integers(0, h, 200), rng.integers(8, w, 200))
            if abs((u - d.disp[v, u]) % 1 - 0.5) < 0.45]
    for v, u in cand[:n]:
        dp, dm = d.disp.copy(), d.disp.copy()
        dp[v, u] += eps
        dm[v, u] -= eps
        ep = refine_energy(DisparityMap(dp, d.valid), left, right, pp, lam)[0]
        em = refine_energy(DisparityMap(dm, d.valid), left, right, pp, lam)[0]
        fd = (ep - em) / (2 * eps)
        errs.append(abs(fd - grad[v, u]) / max(abs(fd), abs(grad[v, u]), 1e-8))
    return np.array(errs)


def test_refine_gradient_matches_finite_differences():
    errs = fd_check_refine(0)
    assert errs.size >= 20
    assert errs.max() < 1e-3


def test_refine_divergence_detected():
    left = np.full((12, 20), np.nan)
    right = np.ones((12, 20))
    with pytest.raises(DivergenceError):
        refine_disparity(DisparityMap.constant((12, 20), 2.0), left, right, PatchParams(1), iters=2)

