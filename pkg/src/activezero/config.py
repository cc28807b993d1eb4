"""Run configuration shared by all subcommands: a flat JSON document, overridable by flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .cost import PATCH_SIDES, VARIANTS
from .bench import PRESETS
from .metrics import MODES


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    # simulate
    count: int = 1
    preset: str = "default"
    noise: float = 0.005
    width: int = 480
    height: int = 270
    # pattern extraction
    window: int = 11
    threshold: float = 0.01
    two_step: bool = False
    # matching
    variant: str = "temporal"
    patch: int = 11
    d_max: int = 192
    refine: int = 0
    refine_step: float = 0.5
    lambda_smooth: float = 0.0
    # training
    lambda_r: float = 2.0
    lambda_s: float = 0.01
    iters: int = 150
    lr: float = 0.25
    k: int = 16
    tau: float = 1.0
    train_d_max: int = 64
    crops_per_scene: int = 2
    # evaluation
    mode: str = "exclude"
    zero_fill: bool = False
    # ablation grid
    variants: tuple = VARIANTS
    lambda_s_sweep: tuple = (0.01,)
    patches: tuple = (11,)
    bench_scenes: int = 12

    def __post_init__(self):
        for name in ("variants", "lambda_s_sweep", "patches"):
            v = getattr(self, name)
            if isinstance(v, (list, tuple)):
                setattr(self, name, tuple(v))
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ValueError(f"invalid config: {msg}")

        for name in ("seed", "threads", "count", "width", "height", "window", "patch", "d_max", "refine",
                     "iters", "k", "train_d_max", "crops_per_scene", "bench_scenes"):
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), f"{name} must be an integer")
        for name in ("two_step", "zero_fill"):
            need(isinstance(getattr(self, name), bool), f"{name} must be a boolean")
        need(self.seed >= 0, "seed must be >= 0")
        need(self.threads >= 1, "threads must be >= 1")
        need(self.count >= 1, "count must be >= 1")
        need(self.noise >= 0, "noise must be >= 0")
        need(self.width >= 16 and self.height >= 16, "image size must be at least 16x16")
        need(self.window >= 3 and self.window % 2 == 1, "window must be odd and >= 3")
        need(self.threshold >= 0, "threshold must be >= 0")
        need(self.variant in VARIANTS, f"variant must be one of {VARIANTS}")
        need(self.patch >= 1 and self.patch % 2 == 1, "patch must be odd and >= 1")
        need(self.d_max >= 1, "d_max must be >= 1")
        need(self.refine >= 0, "refine must be >= 0")
        need(self.refine_step > 0, "refine_step must be > 0")
        need(self.lambda_smooth >= 0, "lambda_smooth must be >= 0")
        need(self.lambda_r >= 0 and self.lambda_s >= 0, "loss weights must be >= 0")
        need(self.iters >= 1, "iters must be >= 1")
        need(self.lr > 0, "lr must be > 0")
        need(self.k >= 1, "k must be >= 1")
        need(self.tau > 0, "tau must be > 0")
        need(self.train_d_max >= 1, "train_d_max must be >= 1")
        need(self.crops_per_scene >= 1, "crops_per_scene must be >= 1")
        need(self.mode in MODES, f"mode must be one of {MODES}")
        need(len(self.variants) > 0 and all(v in VARIANTS for v in self.variants),
             f"variants must be a non-empty subset of {VARIANTS}")
        need(len(self.lambda_s_sweep) > 0 and all(x >= 0 for x in self.lambda_s_sweep),
             "lambda_s_sweep must be non-empty and >= 0")
        need(len(self.patches) > 0 and all(p in PATCH_SIDES for p in self.patches),
             f"patches must be a non-empty subset of {PATCH_SIDES}")
        need(self.bench_scenes >= 1, "bench_scenes must be >= 1")
        need(self.preset in PRESETS, f"preset must be one of {sorted(PRESETS)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        # JSON has no int/float distinction for whole numbers
        for f in fields(cls):
            if f.name in d and f.type == "float" and isinstance(d[f.name], int) and not isinstance(d[f.name], bool):
                d[f.name] = float(d[f.name])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        d = json.loads(text)
        if not isinstance(d, dict):
            raise ValueError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_json(f.read())

    def replace(self, **overrides) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)
