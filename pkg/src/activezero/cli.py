"""Command-line frontend.

Every subcommand reads its parameters from an optional ``--config`` JSON
document (see :class:`RunConfig`), overridden by flags. Outputs are staged in
a temporary directory and moved into place only when the whole command
succeeded, so a failure leaves no partial results. Errors are reported as one
JSON object on stderr with a nonzero exit code.
"""
from __future__ import annotations

import argparse
import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import io as aio
from .bench import GridConfig, eval_mask, grid_csv, grid_row, preset, scene_crops
from .config import RunConfig
from .cost import VARIANTS, MixedLossWeights, PatchParams, epipolar_cost_profile, variant_signals
from .imagecore import DisparityMap, StereoRig, local_contrast_normalize
from .matcher import build_cost_volume, refine_disparity, wta_disparity
from .metrics import depth_error_map, evaluate
from .micro import MicroParams, train_micro
from .pattern import ExtractionParams, extract_2step, extract_binary_pattern
from .simulator import Emitter, TemporalSequence, generate_random_scene, render_temporal_pair, scene_from_json

EXIT_ERROR = 1
ERROR_MAP_MAX_PX = 4.0

# stage tags for splitting the top-level seed
_STAGES = {"simulate": 1, "train": 2, "ablate": 3}


def stage_seed(seed: int, stage: str, index: int = 0) -> int:
    return int(np.random.default_rng([int(seed), _STAGES[stage], int(index)]).integers(0, 2**31 - 1))


class CliError(Exception):
    pass


class Staging:
    """Collect outputs under a temp dir, then move them to their final paths on commit."""

    def __init__(self):
        self.tmp = Path(tempfile.mkdtemp(prefix="activezero-"))
        self.moves = []

    def path(self, final) -> Path:
        final = Path(final)
        staged = self.tmp / f"{len(self.moves):04d}_{final.name}"
        self.moves.append((staged, final))
        return staged

    def commit(self):
        for staged, final in self.moves:
            if not staged.exists():
                raise CliError(f"output was not produced: {final}")
        for staged, final in self.moves:
            final.parent.mkdir(parents=True, exist_ok=True)
            if final.is_dir():
                shutil.rmtree(final)
            shutil.move(str(staged), str(final))
        self.discard()

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


# --- scene directories ----------------------------------------------------------

def frame_name(camera: str, i: int) -> str:
    return f"{camera}_{i:03d}.pgm"


def write_scene_dir(path: Path, scene, out, rig: StereoRig, emitter: Emitter, meta_extra: dict):
    path.mkdir(parents=True, exist_ok=True)
    for cam, seq in (("left", out.left), ("right", out.right)):
        for i, f in enumerate(seq.frames):
            aio.write_pgm(path / frame_name(cam, i), f)
    aio.write_disparity(path / "gt_disp.pfm", out.gt_disparity)
    aio.write_pgm(path / "gt_pattern.pgm", out.gt_pattern)
    aio.write_pgm(path / "gt_pattern_right.pgm", out.gt_pattern_right)
    aio.write_mask(path / "mask.pgm", out.gt_disparity.valid & eval_mask(out, rig))
    aio.write_label_pgm(path / "instance.pgm", out.instance)
    (path / "scene.json").write_text(scene.to_json())
    meta = {"powers": list(out.left.powers), "rig": rig.to_dict(), "emitter": emitter.to_dict()}
    meta.update(meta_extra)
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


class SceneDir:
    """Frames, powers, rig, and (when present) ground truth read from a scene directory."""

    def __init__(self, path):
        self.path = Path(path)
        meta_path = self.path / "meta.json"
        if not meta_path.is_file():
            raise CliError(f"missing {meta_path} (expected a scene directory written by 'simulate')")
        self.meta = json.loads(meta_path.read_text())
        self.powers = tuple(float(p) for p in self.meta["powers"])
        self.rig = StereoRig.from_dict(self.meta["rig"])
        self.left = [self._read(frame_name("left", i)) for i in range(len(self.powers))]
        self.right = [self._read(frame_name("right", i)) for i in range(len(self.powers))]

    def _read(self, name):
        p = self.path / name
        if not p.is_file():
            raise CliError(f"missing {p}")
        return aio.read_pgm(p)

    @property
    def gt(self) -> DisparityMap:
        p = self.path / "gt_disp.pfm"
        if not p.is_file():
            raise CliError(f"missing {p}")
        return aio.read_disparity(p)

    def labels(self):
        p = self.path / "instance.pgm"
        return aio.read_label_pgm(p) if p.is_file() else None

    def signals(self, variant: str, cfg: RunConfig):
        ext = ExtractionParams(cfg.window, cfg.threshold)
        return variant_signals(self.left, self.right, self.powers, variant, ext)

    def eval_mask(self):
        """Benchmark evaluation pixels from ``mask.pgm``; all GT-valid pixels when absent."""
        p = self.path / "mask.pgm"
        return aio.read_mask(p) if p.is_file() else None

    def sequences(self):
        return (TemporalSequence(self.left, self.powers, "left"), TemporalSequence(self.right, self.powers, "right"))


def scene_dirs(root) -> list:
    root = Path(root)
    if (root / "meta.json").is_file():
        return [root]
    subs = sorted(p for p in root.iterdir() if (p / "meta.json").is_file()) if root.is_dir() else []
    if not subs:
        raise CliError(f"no scene directories (with meta.json) found under {root}")
    return subs


# --- subcommands ----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args, stage: Staging):
    out_root = Path(args.out or "scenes")
    rig = StereoRig(width=cfg.width, height=cfg.height)
    emitter = Emitter()
    params = preset(cfg.preset)
    written = []
    for i in range(cfg.count):
        s = stage_seed(cfg.seed, "simulate", i)
        if args.scene:
            scene = scene_from_json(Path(args.scene).read_text())
        else:
            scene = generate_random_scene(s, params, rig)
        out = render_temporal_pair(scene, rig, emitter, cfg.noise, s)
        name = f"scene_{i:03d}"
        write_scene_dir(stage.path(out_root / name), scene, out, rig, emitter,
                        {"seed": cfg.seed, "scene_seed": s, "noise": cfg.noise, "preset": cfg.preset})
        written.append(name)
    return {"scenes": written, "out": str(out_root)}


def cmd_extract(cfg: RunConfig, args, stage: Staging):
    sd = SceneDir(args.scene)
    out_root = Path(args.out or args.scene)
    res = {}
    for cam, frames in (("left", sd.left), ("right", sd.right)):
        if cfg.two_step:
            k = extract_2step(frames[0], frames[-1], cfg.window, cfg.threshold)
        else:
            k = extract_binary_pattern((frames, sd.powers), ExtractionParams(cfg.window, cfg.threshold))
        aio.write_mask(stage.path(out_root / f"pattern_{cam}.pgm"), k > 0.5)
        res[cam] = float(k.mean())
    return {"dot_fraction": res, "two_step": cfg.two_step}


def _match_inputs(cfg: RunConfig, args):
    """Matching signals from a scene directory, or from two single images.

    Single images are used as given (raw, or already-extracted patterns for
    2step/temporal) except that ``lcn`` normalizes them first.
    """
    if args.scene:
        return SceneDir(args.scene).signals(cfg.variant, cfg)
    if not (args.left and args.right):
        raise CliError("match needs --scene DIR or both --left and --right")
    left, right = aio.read_pgm(args.left), aio.read_pgm(args.right)
    if cfg.variant == "lcn":
        left, right = local_contrast_normalize(left), local_contrast_normalize(right)
    return np.asarray(left, np.float64), np.asarray(right, np.float64)


def _run_matcher(cfg: RunConfig, left, right):
    pp = PatchParams.from_side(cfg.patch)
    d_max = min(cfg.d_max, left.shape[1])
    disp, unc = wta_disparity(build_cost_volume(left, right, d_max, pp))
    if cfg.refine:
        # refine only the confident pixels; the rest keep their WTA value
        init = DisparityMap(disp.disp, disp.valid & ~unc)
        ref = refine_disparity(init, left, right, pp, cfg.lambda_smooth, cfg.refine, cfg.refine_step)
        disp = DisparityMap(np.where(init.valid, ref.disp, disp.disp), disp.valid)
    return disp, unc


def cmd_match(cfg: RunConfig, args, stage: Staging):
    left, right = _match_inputs(cfg, args)
    disp, unc = _run_matcher(cfg, left, right)
    out = Path(args.out or "disp.pfm")
    unc_path = Path(args.uncertainty) if args.uncertainty else out.with_name(out.stem + "_uncertainty.pgm")
    aio.write_disparity(stage.path(out), disp)
    aio.write_mask(stage.path(unc_path), unc)
    return {"disparity": str(out), "uncertainty": str(unc_path), "uncertain_fraction": float(unc.mean())}


def _parse_pixel(text):
    try:
        u, v = (int(x) for x in text.split(","))
    except ValueError:
        raise CliError(f"--pixel expects 'u,v', got {text!r}") from None
    return u, v


def _parse_range(text):
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise CliError(f"--range expects 'lo:hi', got {text!r}") from None
    return lo, hi


def cmd_profile(cfg: RunConfig, args, stage: Staging):
    sd = SceneDir(args.scene)
    pixel = _parse_pixel(args.pixel)
    lo, hi = _parse_range(args.range)
    variants = VARIANTS if args.variant in (None, "all") else (args.variant,)
    pp = PatchParams.from_side(cfg.patch)
    lines = ["variant,hypothesis,cost"]
    for v in variants:
        prof = epipolar_cost_profile(*sd.signals(v, cfg), pixel, (lo, hi), pp, args.step, v)
        lines += [f"{v},{h!r},{c!r}" for h, c in zip(prof.hypotheses.tolist(), prof.costs.tolist())]
    out = Path(args.out or "profile.csv")
    stage.path(out).write_text("\n".join(lines) + "\n")
    return {"profile": str(out), "variants": list(variants)}


def _training_pairs(root, cfg: RunConfig, variant: str, with_gt: bool, rng):
    from types import SimpleNamespace

    pairs = []
    for d in scene_dirs(root):
        sd = SceneDir(d)
        left, right = sd.sequences()
        gt = sd.gt if with_gt else DisparityMap.constant((sd.rig.height, sd.rig.width), 0.0)
        mask = sd.eval_mask()
        out = SimpleNamespace(left=left, right=right, gt_disparity=gt)
        crop = (min(64, sd.rig.height), min(224, sd.rig.width))
        pairs += scene_crops(out, sd.rig, variant, cfg.crops_per_scene, rng, crop, with_gt,
                             mask=gt.valid if mask is None else mask)
    return pairs


def cmd_train(cfg: RunConfig, args, stage: Staging):
    if not args.sim:
        raise CliError("train needs --sim DIR")
    rng = np.random.default_rng([cfg.seed, _STAGES["train"]])
    sim = _training_pairs(args.sim, cfg, "temporal", True, rng)
    real = _training_pairs(args.real, cfg, cfg.variant, False, rng) if args.real else []
    p0 = MicroParams.init(cfg.k, cfg.patch, cfg.tau, seed=stage_seed(cfg.seed, "train"))
    params, trace = train_micro(p0, sim, real, MixedLossWeights(cfg.lambda_r, cfg.lambda_s), iters=cfg.iters,
                                lr=cfg.lr, seed=cfg.seed, d_max=cfg.train_d_max)
    out = Path(args.out or ".")
    trace_path = Path(args.trace) if args.trace else out / "trace.csv"
    params_path = Path(args.params) if args.params else out / "params.bin"
    stage.path(trace_path).write_text(trace.to_csv())
    stage.path(params_path).write_bytes(params.to_bytes())
    return {"trace": str(trace_path), "params": str(params_path), "final_loss": trace.rows[-1]["loss"]}


def _load_rig(path) -> StereoRig:
    d = json.loads(Path(path).read_text())
    return StereoRig.from_dict(d["rig"] if "rig" in d else d)


def cmd_eval(cfg: RunConfig, args, stage: Staging):
    for flag in ("pred", "gt", "rig"):
        if not getattr(args, flag):
            raise CliError(f"eval needs --{flag}")
    pred = aio.read_disparity(args.pred)
    gt = aio.read_disparity(args.gt)
    rig = _load_rig(args.rig)
    unc = aio.read_mask(args.uncertainty) if args.uncertainty else None
    masks = aio.read_label_pgm(args.masks) if args.masks else None
    rep = evaluate(pred, unc, gt, rig, masks, cfg.mode, cfg.zero_fill)
    report = rep.to_dict()
    out = Path(args.out or "report.json")
    stage.path(out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.error_map or args.error_pgm:
        err = np.where(pred.valid & gt.valid, np.abs(pred.disp - gt.disp), 0.0)
        if args.error_map:
            aio.write_pfm(stage.path(args.error_map), err.astype(np.float32))
        if args.error_pgm:
            aio.write_pgm(stage.path(args.error_pgm), np.clip(err / ERROR_MAP_MAX_PX, 0, 1), maxval=255)
    if args.depth_error_map:
        dz, ok = depth_error_map(pred, gt, rig)
        aio.write_pfm(stage.path(args.depth_error_map), np.where(ok, dz, np.inf).astype(np.float32))
    return report


def cmd_ablate(cfg: RunConfig, args, stage: Staging):
    grid = GridConfig(variants=cfg.variants, lambda_s=cfg.lambda_s_sweep, patches=cfg.patches,
                      lambda_r=cfg.lambda_r, iters=cfg.iters, lr=cfg.lr, seed=cfg.seed, n_bench=cfg.bench_scenes,
                      k=cfg.k, tau=cfg.tau, d_max=cfg.train_d_max)
    cells = grid.cells()
    if cfg.threads > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(grid_row, [grid] * len(cells), cells))
    else:
        results = [grid_row(grid, c) for c in cells]
    out = Path(args.out or "ablation")
    rows = []
    for row, trace_csv in results:
        rows.append(row)
        if trace_csv is not None:
            stage.path(out / "traces" / f"{row['cell']}.csv").write_text(trace_csv)
    stage.path(out / "grid.csv").write_text(grid_csv(rows))
    return {"grid": str(out / "grid.csv"), "cells": len(rows),
            "failed": sum(1 for r in rows if r.get("status") != "ok")}


def cmd_pipeline(cfg: RunConfig, args, stage: Staging):
    if not args.scene:
        raise CliError("pipeline needs --scene DIR")
    sd = SceneDir(args.scene)
    left, right = sd.signals(cfg.variant, cfg)
    disp, unc = _run_matcher(cfg, left, right)
    gt = sd.gt
    mask = sd.eval_mask()
    if mask is not None:
        gt = DisparityMap(gt.disp, gt.valid & mask)
    rep = evaluate(disp, unc, gt, sd.rig, sd.labels(), cfg.mode, cfg.zero_fill).to_dict()
    rep["variant"] = cfg.variant
    out = Path(args.out or "pipeline")
    aio.write_disparity(stage.path(out / "disp.pfm"), disp)
    aio.write_mask(stage.path(out / "uncertainty.pgm"), unc)
    stage.path(out / "report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return rep


COMMANDS = {
    "simulate": cmd_simulate,
    "extract": cmd_extract,
    "match": cmd_match,
    "profile": cmd_profile,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "pipeline": cmd_pipeline,
}

# flag dest -> RunConfig field
_OVERRIDES = {
    "seed": "seed", "threads": "threads", "count": "count", "preset": "preset", "noise": "noise",
    "width": "width", "height": "height", "window": "window", "thresh": "threshold", "two_step": "two_step",
    "variant": "variant", "patch": "patch", "max_disp": "d_max", "refine": "refine", "refine_step": "refine_step",
    "lambda_smooth": "lambda_smooth", "lambda_r": "lambda_r", "lambda_s": "lambda_s", "iters": "iters", "lr": "lr",
    "mode": "mode", "zero_fill": "zero_fill", "train_max_disp": "train_d_max", "bench": "bench_scenes",
    "variants": "variants", "lambda_s_sweep": "lambda_s_sweep", "patches": "patches",
}


def _csv_list(kind):
    def parse(text):
        try:
            return tuple(kind(x) for x in text.split(",") if x)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (file or directory, per subcommand)")
    common.add_argument("--threads", type=int)

    ap = argparse.ArgumentParser(prog="activezero", description="Active-stereo simulation, pattern extraction, "
                                 "matching, training and evaluation.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render random scenes to scene directories")
    p.add_argument("--count", type=int)
    p.add_argument("--preset")
    p.add_argument("--noise", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--scene", help="render this scene JSON instead of random scenes")

    p = sub.add_parser("extract", parents=[common], help="binary pattern extraction")
    p.add_argument("--scene", required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--thresh", type=float)
    p.add_argument("--two-step", dest="two_step", action="store_true", default=None)

    def matcher_flags(p):
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--max-disp", dest="max_disp", type=int)
        p.add_argument("--patch", type=int)
        p.add_argument("--refine", type=int)
        p.add_argument("--refine-step", dest="refine_step", type=float)
        p.add_argument("--lambda-smooth", dest="lambda_smooth", type=float)
        p.add_argument("--window", type=int)
        p.add_argument("--thresh", type=float)

    p = sub.add_parser("match", parents=[common], help="cost-volume matching")
    p.add_argument("--scene")
    p.add_argument("--left")
    p.add_argument("--right")
    p.add_argument("--uncertainty")
    matcher_flags(p)

    p = sub.add_parser("profile", parents=[common], help="epipolar cost profile CSV")
    p.add_argument("--scene", required=True)
    p.add_argument("--pixel", required=True)
    p.add_argument("--range", required=True)
    p.add_argument("--step", type=float, default=0.25)
    p.add_argument("--variant", choices=VARIANTS + ("all",))
    p.add_argument("--patch", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--thresh", type=float)

    p = sub.add_parser("train", parents=[common], help="train the micro matcher")
    p.add_argument("--sim")
    p.add_argument("--real")
    p.add_argument("--lambda-s", dest="lambda_s", type=float)
    p.add_argument("--lambda-r", dest="lambda_r", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--patch", type=int)
    p.add_argument("--max-disp", dest="train_max_disp", type=int)
    p.add_argument("--trace")
    p.add_argument("--params")

    p = sub.add_parser("eval", parents=[common], help="metrics report")
    p.add_argument("--pred")
    p.add_argument("--uncertainty")
    p.add_argument("--gt")
    p.add_argument("--rig")
    p.add_argument("--masks")
    p.add_argument("--mode", choices=("include", "exclude"))
    p.add_argument("--zero-fill", dest="zero_fill", action="store_true", default=None)
    p.add_argument("--error-map", dest="error_map")
    p.add_argument("--error-pgm", dest="error_pgm")
    p.add_argument("--depth-error-map", dest="depth_error_map")

    p = sub.add_parser("ablate", parents=[common], help="micro-matcher ablation grid")
    p.add_argument("--variants", type=_csv_list(str))
    p.add_argument("--lambda-s", dest="lambda_s_sweep", type=_csv_list(float))
    p.add_argument("--patches", type=_csv_list(int))
    p.add_argument("--lambda-r", dest="lambda_r", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--bench", type=int, help="number of benchmark scenes")
    p.add_argument("--max-disp", dest="train_max_disp", type=int)

    p = sub.add_parser("pipeline", parents=[common], help="extract, match, refine, evaluate one scene")
    p.add_argument("--scene")
    p.add_argument("--mode", choices=("include", "exclude"))
    p.add_argument("--zero-fill", dest="zero_fill", action="store_true", default=None)
    matcher_flags(p)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for dest, field_name in _OVERRIDES.items():
        v = getattr(args, dest, None)
        if v is not None:
            overrides[field_name] = list(v) if isinstance(v, tuple) else v
    return cfg.replace(**overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    stage = None
    try:
        cfg = resolve_config(args)
        stage = Staging()
        result = COMMANDS[args.command](cfg, args, stage)
        stage.commit()
    except Exception as exc:
        if stage is not None:
            stage.discard()
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
