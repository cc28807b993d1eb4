"""Benchmark fixtures and the ablation grid.

Scene presets, the textured fixture used for epipolar cost profiles, the
integer-shift benches used for training smoke tests and convergence
comparisons, and :func:`run_grid`, which trains the micro matcher once per
(variant, lambda_s, patch) cell.
"""
from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter

from .cost import VARIANTS, MixedLossWeights, PatchParams, epipolar_cost_profile, variant_signals
from .imagecore import DisparityMap, StereoRig
from .matcher import build_cost_volume, wta_disparity
from .metrics import evaluate
from .micro import MicroParams, TrainPair, predict, train_micro
from .simulator import Emitter, SceneParams, Texture, covisible_mask, generate_random_scene, render_temporal_pair

BENCH_SCENES = 12
BENCH_NOISE = 0.005
ABLATION_D_MAX = 64

PRESETS = {
    # dim filtered ambient, mixed materials
    "default": SceneParams(),
    # bright environment light on glossy, fully textured objects
    "textured": SceneParams(ambient=0.8, textured_fraction=1.0, specular_fraction=0.8),
    # epipolar-profile fixture: brighter still, fine stripes on a farther table, no clear objects
    "bright": SceneParams(ambient=1.0, textured_fraction=1.0, specular_fraction=0.6, transparent_fraction=0.0,
                        table_depth_range=(1.5, 1.8), table_texture=Texture("stripes", 0.9, 0.1, 0.01)),
}


# seed offsets keep the benchmark, real-train and sim-train scenes disjoint
SEED_BASE = {"bench": 0, "real": 1000, "sim": 2000, "bright": 3000}

GRID_COLUMNS = ("cell", "variant", "lambda_r", "lambda_s", "patch", "iters", "status",
                "epe", "bad1", "abs_depth_err", "frac_gt_4mm", "n_pixels", "final_loss")


def preset(name: str) -> SceneParams:
    if name not in PRESETS:
        raise ValueError(f"unknown scene preset {name!r}; expected one of {sorted(PRESETS)}")
    return PRESETS[name]


@lru_cache(maxsize=64)
def render_scene(seed: int, preset_name: str = "textured", noise: float = BENCH_NOISE, rig: StereoRig = StereoRig()):
    scene = generate_random_scene(seed, preset(preset_name), rig)
    return scene, render_temporal_pair(scene, rig, Emitter(), noise, seed)


def benchmark_seeds(n: int = BENCH_SCENES):
    return [SEED_BASE["bench"] + i for i in range(n)]


def eval_mask(out, rig: StereoRig) -> np.ndarray:
    """Co-visible pixels on surfaces that return the projected pattern."""
    return covisible_mask(out, rig) & ~out.left_components.transparent


# --- textured fixture for epipolar profiles --------------------------------------

def bright_scene(seed: int, rig: StereoRig = StereoRig(), noise: float = BENCH_NOISE):
    """Bright environment light, fine striped table, textured glossy primitives."""
    s = SEED_BASE["bright"] + seed
    scene = generate_random_scene(s, PRESETS["bright"], rig)
    return scene, render_temporal_pair(scene, rig, Emitter(), noise, s)


def select_probes(out, rig: StereoRig, count: int, rng, pp: PatchParams = PatchParams(),
                  u_min: int = 100, tries: int = 4000):
    """Random non-occluded probe pixels whose patch lies on a single surface."""
    gt = out.gt_disparity
    cov = covisible_mask(out, rig)
    h, w = gt.shape
    p = pp.p
    probes = []
    for _ in range(tries):
        u = int(rng.integers(max(u_min, p), w - p - 10))
        v = int(rng.integers(p + 1, h - p - 1))
        if not cov[v, u]:
            continue
        inst = out.instance[v - p:v + p + 1, u - p:u + p + 1]
        if not (inst == inst[0, 0]).all():
            continue
        probes.append((u, v, float(gt.disp[v, u])))
        if len(probes) >= count:
            break
    return probes


def profile_probes(n_scenes: int = 10, per_scene: int = 8, half_range: float = 30.0, seed: int = 0,
                   variants=VARIANTS, rig: StereoRig = StereoRig()):
    """Epipolar-profile argmin error per probe and variant on the textured fixture.

    Returns ``{variant: array of |argmin - gt|}`` over the same probes.
    """
    rng = np.random.default_rng([seed, 0xF14])
    errs = {v: [] for v in variants}
    for s in range(n_scenes):
        _, out = bright_scene(s, rig)
        sig = {v: variant_signals(out.left.frames, out.right.frames, out.left.powers, v) for v in variants}
        for u, v, d in select_probes(out, rig, per_scene, rng):
            lo, hi = max(0.0, d - half_range), min(rig.width - 1.0, d + half_range)
            for var in variants:
                prof = epipolar_cost_profile(*sig[var], (u, v), (lo, hi), variant=var)
                errs[var].append(abs(prof.argmin - d))
    return {v: np.array(e) for v, e in errs.items()}


# --- integer-shift benches ---------------------------------------------------------

SHIFT_DOMAINS = {
    # ambient scale, pattern gain, dot density
    "sim": (0.1, 0.5, 0.15),
    "real": (0.6, 0.25, 0.10),
}


def shift_pair(seed: int, domain: str = "sim", shape=(32, 96), d_max: int = 16, with_gt: bool = True,
               noise: float = 0.01) -> TrainPair:
    """Piecewise-constant integer-disparity pair: a background plane and one nearer rectangle.

    Matcher inputs are ambient texture plus a random dot pattern plus noise;
    the loss signals are the noise-free dot patterns.
    """
    amb, gain, density = SHIFT_DOMAINS[domain]
    rng = np.random.default_rng([int(seed), 0x5F1])
    h, w = shape
    wide = w + d_max
    dots = (rng.random((h, wide)) < density).astype(np.float64)
    tex = gaussian_filter(rng.random((h, wide)), 2.0)
    tex = (tex - tex.min()) / (np.ptp(tex) + 1e-12)
    disp = np.full((h, w), int(rng.integers(3, d_max // 2)))
    rh, rw = h // 2 - 2, w // 3
    u0, v0 = int(rng.integers(w // 5, w - rw)), int(rng.integers(2, h - rh - 1))
    disp[v0:v0 + rh, u0:u0 + rw] = int(rng.integers(d_max // 2, d_max - 3))
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :] + d_max
    kl, kr = dots[rows, cols - disp], dots[:, d_max:]
    tl, tr = tex[rows, cols - disp], tex[:, d_max:]
    il = np.clip(amb * tl + gain * kl + noise * rng.standard_normal((h, w)), 0, 1)
    ir = np.clip(amb * tr + gain * kr + noise * rng.standard_normal((h, w)), 0, 1)
    gt = DisparityMap(disp.astype(np.float64), np.ones((h, w), dtype=bool)) if with_gt else None
    return TrainPair(il, ir, kl, kr, gt)


@dataclass
class ShiftBench:
    sim: list
    real: list
    val: list
    d_max: int


def shift_bench(seed: int = 0, n_sim: int = 16, n_real: int = 16, n_val: int = 4, d_max: int = 16) -> ShiftBench:
    base = 10_000 * int(seed)
    return ShiftBench(
        sim=[shift_pair(base + i, "sim", d_max=d_max) for i in range(n_sim)],
        real=[shift_pair(base + 1000 + i, "real", d_max=d_max, with_gt=False) for i in range(n_real)],
        val=[shift_pair(base + 2000 + i, "real", d_max=d_max) for i in range(n_val)],
        d_max=d_max,
    )


COLD_START_SCALE = 0.02


def convergence_run(lambda_s: float, seed: int, iters: int = 40, lr: float = 0.25, lambda_r: float = 2.0,
                    bench: ShiftBench | None = None, init_scale: float = COLD_START_SCALE):
    """Train from a near-zero initialization on the shift bench; returns the trace."""
    bench = bench or shift_bench()
    p0 = MicroParams.init(16, 11, 1.0, seed=seed, scale=init_scale)
    _, trace = train_micro(p0, bench.sim, bench.real, MixedLossWeights(lambda_r, lambda_s), iters=iters, lr=lr,
                           seed=seed, d_max=bench.d_max, val_set=bench.val)
    return trace


# --- classical variant benchmark -------------------------------------------------

def classical_variant_epe(seeds=None, variants=VARIANTS, d_max: int = 192, preset_name: str = "textured",
                          rig: StereoRig = StereoRig()):
    """WTA matcher on each variant's signals; EPE and Bad1 over :func:`eval_mask` pixels."""
    seeds = benchmark_seeds() if seeds is None else seeds
    out_rows = {v: [] for v in variants}
    for s in seeds:
        _, out = render_scene(s, preset_name, BENCH_NOISE, rig)
        mask = eval_mask(out, rig)
        for v in variants:
            l, r = variant_signals(out.left.frames, out.right.frames, out.left.powers, v)
            disp, unc = wta_disparity(build_cost_volume(l, r, d_max))
            e = np.abs(disp.disp - out.gt_disparity.disp)[mask]
            out_rows[v].append(e)
    res = {}
    for v, es in out_rows.items():
        e = np.concatenate(es)
        res[v] = {"epe": float(e.mean()), "bad1": float(np.mean(e > 1.0)), "n_pixels": int(e.size)}
    return res


# --- micro-matcher ablation grid ---------------------------------------------------

@dataclass
class GridConfig:
    variants: tuple = VARIANTS
    lambda_s: tuple = (0.01,)
    patches: tuple = (11,)
    lambda_r: float = 2.0
    iters: int = 150
    lr: float = 0.25
    seed: int = 0
    n_bench: int = BENCH_SCENES
    n_real: int = 6
    n_sim: int = 6
    crops_per_scene: int = 2
    crop: tuple = (64, 224)
    d_max: int = ABLATION_D_MAX
    k: int = 16
    tau: float = 1.0

    def cells(self):
        return [(v, ls, p) for v in self.variants for ls in self.lambda_s for p in self.patches]


def scene_crops(out, rig: StereoRig, variant: str, count: int, rng, crop=(64, 224), with_gt: bool = True,
                mask=None):
    """Random crops: max-power IR frames as matcher input, ``variant`` signals for the loss.

    Ground truth is restricted to ``mask`` (default :func:`eval_mask`).
    """
    left = np.asarray(out.left.frames[-1], dtype=np.float64)
    right = np.asarray(out.right.frames[-1], dtype=np.float64)
    ls, rs = variant_signals(out.left.frames, out.right.frames, out.left.powers, variant)
    mask = eval_mask(out, rig) if mask is None else np.asarray(mask, dtype=bool)
    gt = out.gt_disparity
    ch, cw = crop
    pairs = []
    for _ in range(count):
        v0 = int(rng.integers(0, rig.height - ch + 1))
        u0 = int(rng.integers(0, rig.width - cw + 1))
        sl = (slice(v0, v0 + ch), slice(u0, u0 + cw))
        g = DisparityMap(gt.disp[sl], gt.valid[sl] & mask[sl]) if with_gt else None
        pairs.append(TrainPair(left[sl], right[sl], ls[sl], rs[sl], g))
    return pairs


def micro_benchmark(params: MicroParams, seeds, d_max: int, rig: StereoRig = StereoRig()):
    """WTA micro-matcher metrics on full benchmark frames over eval-mask pixels right of ``d_max``."""
    preds, gts, masks = [], [], []
    for s in seeds:
        _, out = render_scene(s, "textured", BENCH_NOISE, rig)
        disp, _ = predict(params, out.left.frames[-1], out.right.frames[-1], d_max)
        m = eval_mask(out, rig)
        m[:, :d_max] = False
        preds.append(disp.disp)
        gts.append(out.gt_disparity.disp)
        masks.append(m)
    pred = DisparityMap(np.concatenate(preds, axis=1), np.ones((rig.height, rig.width * len(seeds)), dtype=bool))
    gt = DisparityMap(np.concatenate(gts, axis=1), np.concatenate(masks, axis=1))
    return evaluate(pred, None, gt, rig, mode="include")


def run_cell(cfg: GridConfig, variant: str, lambda_s: float, patch: int, rig: StereoRig = StereoRig()):
    rng = np.random.default_rng([cfg.seed, 0xAB1])
    real, sim = [], []
    for i in range(cfg.n_real):
        s = SEED_BASE["real"] + i
        _, out = render_scene(s, "textured", BENCH_NOISE, rig)
        real += scene_crops(out, rig, variant, cfg.crops_per_scene, rng, cfg.crop, with_gt=False)
    for i in range(cfg.n_sim):
        s = SEED_BASE["sim"] + i
        _, out = render_scene(s, "default", BENCH_NOISE, rig)
        sim += scene_crops(out, rig, "temporal", cfg.crops_per_scene, rng, cfg.crop)
    p0 = MicroParams.init(cfg.k, patch, cfg.tau, seed=cfg.seed)
    params, trace = train_micro(p0, sim, real, MixedLossWeights(cfg.lambda_r, lambda_s), iters=cfg.iters,
                                lr=cfg.lr, seed=cfg.seed, d_max=cfg.d_max)
    report = micro_benchmark(params, benchmark_seeds(cfg.n_bench), cfg.d_max, rig)
    return params, trace, report


def _cell_name(variant, lambda_s, patch):
    return f"{variant}_ls{lambda_s:g}_p{patch}"


def grid_row(cfg: GridConfig, cell, rig: StereoRig = StereoRig()):
    """Train and score one ``(variant, lambda_s, patch)`` cell.

    Returns ``(row, trace_csv)``; on failure the row's status holds the error
    and ``trace_csv`` is None.
    """
    variant, ls, patch = cell
    row = {c: "" for c in GRID_COLUMNS}
    row.update(cell=_cell_name(variant, ls, patch), variant=variant, lambda_r=cfg.lambda_r, lambda_s=ls,
               patch=patch, iters=cfg.iters)
    try:
        _, trace, rep = run_cell(cfg, variant, ls, patch, rig)
    except Exception as exc:  # per-cell failures are data, not fatal
        row.update(status=f"error: {type(exc).__name__}: {exc}")
        return row, None
    row.update(status="ok", epe=rep.epe, bad1=rep.bad1, abs_depth_err=rep.abs_depth_err,
               frac_gt_4mm=rep.frac_gt_4mm, n_pixels=rep.n_pixels, final_loss=trace.rows[-1]["loss"])
    return row, trace.to_csv()


def run_grid(cfg: GridConfig, out_dir=None, log=None, workers: int = 1):
    """Train and score every cell. A failing cell is recorded and the grid continues.

    Writes ``grid.csv`` and ``traces/<cell>.csv`` when ``out_dir`` is given.
    Returns the list of row dicts (columns :data:`GRID_COLUMNS`).
    """
    cells = cfg.cells()
    if workers > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(grid_row, [cfg] * len(cells), cells))
    else:
        results = []
        for cell in cells:
            t0 = time.perf_counter()
            results.append(grid_row(cfg, cell))
            if log:
                row = results[-1][0]
                log(f"{row['cell']}: {row['status']} epe={row['epe']} ({time.perf_counter() - t0:.0f}s)")
    rows = [r for r, _ in results]
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)
        for row, trace_csv in results:
            if trace_csv is not None:
                with open(os.path.join(out_dir, "traces", row["cell"] + ".csv"), "w", newline="") as f:
                    f.write(trace_csv)
        with open(os.path.join(out_dir, "grid.csv"), "w", newline="") as f:
            f.write(grid_csv(rows))
    return rows


def grid_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=GRID_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in GRID_COLUMNS})
    return buf.getvalue()
