"""Binary projector-pattern extraction from a power-stepped IR sequence.

Each pixel's intensity is regressed against emitter power. The fitted swing
``|x_hat(e_n) - x_hat(e_0)|`` is compared with its local window mean plus a
noise threshold; pixels that stand out are pattern dots. Ambient light and
surface texture only enter the intercept, so they drop out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import box_mean, check_same_shape
from .simulator import TemporalSequence

DEFAULT_WINDOW = 11
DEFAULT_THRESHOLD = 0.01


@dataclass(frozen=True)
class ExtractionParams:
    """``n`` selects n+1 evenly spaced frames (first and last always kept); None uses all."""

    window: int = DEFAULT_WINDOW
    threshold: float = DEFAULT_THRESHOLD
    n: int | None = None

    def __post_init__(self):
        if self.window < 3 or self.window % 2 != 1:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.n is not None and self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass
class LinearFit:
    slope: np.ndarray
    intercept: np.ndarray
    residual_rms: np.ndarray

    def predict(self, power):
        return self.slope * power + self.intercept


def _as_frames(seq):
    if isinstance(seq, TemporalSequence):
        return seq.stack, np.asarray(seq.powers, dtype=np.float64)
    frames, powers = seq
    return np.stack([np.asarray(f, dtype=np.float64) for f in frames]), np.asarray(powers, dtype=np.float64)


def select_frames(seq, n):
    """Keep n+1 frames spaced evenly over the schedule (always first and last)."""
    frames, powers = _as_frames(seq)
    if n is None or n + 1 == len(powers):
        return frames, powers
    if n + 1 > len(powers):
        raise ValueError(f"sequence has {len(powers)} frames, cannot select n={n}")
    idx = np.unique(np.rint(np.linspace(0, len(powers) - 1, n + 1)).astype(int))
    return frames[idx], powers[idx]


def fit_linear(seq) -> LinearFit:
    """Per-pixel least-squares line of intensity against emitter power."""
    frames, powers = _as_frames(seq)
    if len(powers) < 2:
        raise ValueError("need at least two frames to fit")
    if np.any(np.diff(powers) <= 0):
        raise ValueError("powers must be strictly increasing")
    e = powers - powers.mean()
    see = float(e @ e)
    mean = frames.mean(axis=0)
    slope = np.tensordot(e, frames - mean, axes=1) / see
    intercept = mean - slope * powers.mean()
    resid = frames - (slope[None] * powers[:, None, None] + intercept[None])
    return LinearFit(slope, intercept, np.sqrt(np.mean(resid * resid, axis=0)))


def delta_map(fit: LinearFit, powers, window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Window mean of the fitted swing |x_hat(e_n) - x_hat(e_0)|."""
    powers = np.asarray(powers, dtype=np.float64)
    swing = np.abs(fit.slope) * (powers[-1] - powers[0])
    return box_mean(swing, window)


def _binarize(swing, window, threshold):
    delta = box_mean(swing, window)
    return (swing > delta + threshold).astype(np.float32)


def extract_binary_pattern(seq, params: ExtractionParams | None = None) -> np.ndarray:
    """K(u, v) in {0, 1} as float32."""
    params = params or ExtractionParams()
    frames, powers = select_frames(seq, params.n)
    fit = fit_linear((frames, powers))
    swing = np.abs(fit.slope) * (powers[-1] - powers[0])
    return _binarize(swing, params.window, params.threshold)


def extract_2step(frame_lo, frame_hi, window: int = DEFAULT_WINDOW, threshold: float = DEFAULT_THRESHOLD):
    """Two-frame variant: the raw frame difference replaces the fitted swing."""
    check_same_shape(frame_lo, frame_hi)
    ExtractionParams(window, threshold)
    swing = np.abs(np.asarray(frame_hi, dtype=np.float64) - np.asarray(frame_lo, dtype=np.float64))
    return _binarize(swing, window, threshold)
