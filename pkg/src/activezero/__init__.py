"""Active-stereo toolkit: IR simulation, temporal binary pattern extraction,
pattern-aware stereo matching, and disparity/depth metrics."""

from .errors import DivergenceError, EmptyReductionError
from .imagecore import DisparityMap, StereoRig, disparity_to_depth, local_contrast_normalize
from .pattern import ExtractionParams, extract_2step, extract_binary_pattern
from .cost import MixedLossWeights, PatchParams, epipolar_cost_profile, variant_signals
from .matcher import build_cost_volume, refine_disparity, wta_disparity
from .metrics import MetricsReport, evaluate
from .simulator import Emitter, Scene, SceneParams, generate_random_scene, render_temporal_pair

__version__ = "0.1.0"

__all__ = [
    "DivergenceError", "EmptyReductionError",
    "DisparityMap", "StereoRig", "disparity_to_depth", "local_contrast_normalize",
    "ExtractionParams", "extract_2step", "extract_binary_pattern",
    "MixedLossWeights", "PatchParams", "epipolar_cost_profile", "variant_signals",
    "build_cost_volume", "refine_disparity", "wta_disparity",
    "MetricsReport", "evaluate",
    "Emitter", "Scene", "SceneParams", "generate_random_scene", "render_temporal_pair",
]
