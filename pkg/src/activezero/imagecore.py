"""Image containers, row-wise warping, disparity/depth conversion, LCN, augmentation.

Images are plain 2-D numpy arrays indexed ``[v, u]`` (row, column). Stored
intensities are float32 in [0, 1]; arithmetic is done in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

EPS_DISP = 0.1
LCN_ETA = 1e-3
LCN_WINDOW = 9
BLUR_KERNEL = 9


@dataclass(frozen=True)
class StereoRig:
    """Rectified stereo pair with an emitter on the baseline.

    Distances are meters, focal length and image size pixels. The left camera
    sits at the origin looking down +z with y pointing down the image; the
    right camera is at ``(baseline, 0, 0)``.
    """

    focal_length: float = 560.0
    baseline: float = 0.055
    width: int = 480
    height: int = 270
    emitter_offset: float = 0.0275

    def __post_init__(self):
        if not self.focal_length > 0:
            raise ValueError(f"focal_length must be > 0, got {self.focal_length}")
        if not self.baseline > 0:
            raise ValueError(f"baseline must be > 0, got {self.baseline}")
        if not 0 < self.emitter_offset < self.baseline:
            raise ValueError("emitter_offset must lie strictly between the cameras")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")

    @property
    def cx(self) -> float:
        return (self.width - 1) / 2.0

    @property
    def cy(self) -> float:
        return (self.height - 1) / 2.0

    @property
    def fb(self) -> float:
        return self.focal_length * self.baseline

    def to_dict(self) -> dict:
        return {
            "focal_length": float(self.focal_length),
            "baseline": float(self.baseline),
            "width": int(self.width),
            "height": int(self.height),
            "emitter_offset": float(self.emitter_offset),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StereoRig":
        unknown = set(d) - {"focal_length", "baseline", "width", "height", "emitter_offset"}
        if unknown:
            raise ValueError(f"unknown rig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class DisparityMap:
    """Per-pixel disparity (pixels) plus a validity channel.

    Invalid pixels hold 0.0 in ``disp`` and must be ignored by reductions.
    """

    disp: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        disp = np.asarray(self.disp, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if disp.ndim != 2 or disp.shape != valid.shape:
            raise ValueError(f"disp {disp.shape} and valid {valid.shape} must be equal 2-D shapes")
        valid = valid & np.isfinite(disp)
        disp = np.where(valid, disp, 0.0)
        object.__setattr__(self, "disp", disp)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.disp.shape

    @classmethod
    def dense(cls, disp) -> "DisparityMap":
        disp = np.asarray(disp, dtype=np.float64)
        return cls(disp, np.isfinite(disp))

    @classmethod
    def constant(cls, shape, value: float) -> "DisparityMap":
        return cls(np.full(shape, float(value)), np.ones(shape, dtype=bool))


def as_disparity(disp) -> DisparityMap:
    if isinstance(disp, DisparityMap):
        return disp
    return DisparityMap.dense(disp)


def check_same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def box_sum(img, side: int, mode: str = "reflect") -> np.ndarray:
    """Sum over the ``side x side`` window centered at every pixel.

    ``mode`` is passed to ``np.pad``; ``None`` means no padding and returns
    only the fully-interior windows.
    """
    a = np.asarray(img, dtype=np.float64)
    if side % 2 != 1 or side < 1:
        raise ValueError(f"window side must be odd and positive, got {side}")
    if mode is not None:
        if side > a.shape[0] or side > a.shape[1]:
            raise ValueError(f"window {side} larger than image {a.shape}")
        a = np.pad(a, side // 2, mode=mode)
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=c[1:, 1:])
    return c[side:, side:] - c[:-side, side:] - c[side:, :-side] + c[:-side, :-side]


def box_mean(img, side: int, mode: str = "reflect") -> np.ndarray:
    return box_sum(img, side, mode) / float(side * side)


def sample_row(img, x):
    """Linear interpolation of ``img`` along rows at column coordinates ``x``.

    Returns ``(values, slope, inside)``. ``slope`` is d(value)/dx using the
    left cell at exact integer coordinates. Samples outside ``[0, W-1]`` are
    flagged in ``inside`` and carry clamped values.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    x = np.asarray(x, dtype=np.float64)
    inside = (x >= 0) & (x <= w - 1) & np.isfinite(x)
    xc = np.clip(np.nan_to_num(x, nan=0.0), 0, w - 1)
    rows = np.broadcast_to(np.arange(h)[:, None], x.shape)
    if w == 1:
        return img[rows, np.zeros_like(xc, dtype=np.intp)], np.zeros_like(xc), inside
    x0 = np.minimum(np.floor(xc).astype(np.intp), w - 2)
    frac = xc - x0
    v0 = img[rows, x0]
    v1 = img[rows, x0 + 1]
    values = v0 + frac * (v1 - v0)
    # derivative cell: left cell at integer coordinates, except at column 0
    xd = np.clip(np.ceil(xc).astype(np.intp) - 1, 0, w - 2)
    slope = img[rows, xd + 1] - img[rows, xd]
    return values, slope, inside


def warp_right_to_left(right, disp):
    """Resample the right image into the left view: ``out(u,v) = right(u - d(u,v), v)``.

    Linear interpolation along the row only. Returns ``(image, mask)``; mask is
    False where the sample leaves the image or the disparity is invalid.
    """
    d = as_disparity(disp)
    right = np.asarray(right, dtype=np.float64)
    check_same_shape(right, d.disp)
    if np.any(d.disp[d.valid] < 0):
        raise ValueError("disparities must be non-negative")
    u = np.arange(right.shape[1], dtype=np.float64)[None, :]
    values, _, inside = sample_row(right, u - d.disp)
    mask = inside & d.valid
    return np.where(mask, values, 0.0), mask


def disparity_to_depth(disp, rig: StereoRig, eps: float = EPS_DISP):
    """Depth in meters ``z = f*b/d``. Returns ``(depth, valid)``; d <= eps is invalid."""
    d = as_disparity(disp)
    valid = d.valid & (d.disp > eps)
    depth = np.zeros_like(d.disp)
    depth[valid] = rig.fb / d.disp[valid]
    return depth, valid


def depth_to_disparity(depth, rig: StereoRig, valid=None) -> DisparityMap:
    z = np.asarray(depth, dtype=np.float64)
    ok = np.isfinite(z) & (z > 0)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    disp = np.zeros_like(z)
    disp[ok] = rig.fb / z[ok]
    return DisparityMap(disp, ok)


def lcn_response(img, window: int = LCN_WINDOW, eta: float = LCN_ETA) -> np.ndarray:
    """Local contrast normalization before the final per-image rescale."""
    if window % 2 != 1 or window < 3:
        raise ValueError(f"LCN window must be odd and >= 3, got {window}")
    x = np.asarray(img, dtype=np.float64)
    mu = box_mean(x, window)
    var = box_mean(x * x, window) - mu * mu
    sigma = np.sqrt(np.maximum(var, 0.0))
    return (x - mu) / (sigma + eta)


RESCALE_FLAT = 1e-9


def rescale_unit(x) -> np.ndarray:
    """Affine map onto [0, 1]; a range below ``RESCALE_FLAT`` (box-filter roundoff) maps to 0."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= RESCALE_FLAT:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def local_contrast_normalize(img, window: int = LCN_WINDOW, eta: float = LCN_ETA) -> np.ndarray:
    return rescale_unit(lcn_response(img, window, eta)).astype(np.float32)


def gaussian_kernel(sigma: float, size: int = BLUR_KERNEL) -> np.ndarray:
    r = np.arange(size) - size // 2
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def augment_params(seed) -> dict:
    rng = np.random.default_rng(seed)
    return {
        "brightness": float(rng.uniform(0.4, 1.4)),
        "contrast": float(rng.uniform(0.8, 1.2)),
        "sigma": float(rng.uniform(0.1, 2.0)),
    }


def apply_photometric(img, brightness: float, contrast: float, sigma: float, clamp: bool = True):
    x = np.asarray(img, dtype=np.float64) * brightness
    m = x.mean()
    x = (x - m) * contrast + m
    k = gaussian_kernel(sigma)
    x = ndimage.convolve1d(x, k, axis=0, mode="mirror")
    x = ndimage.convolve1d(x, k, axis=1, mode="mirror")
    if clamp:
        x = np.clip(x, 0.0, 1.0)
    return x


def augment(img, seed) -> np.ndarray:
    """Random brightness/contrast scaling and 9x9 Gaussian blur, clamped to [0, 1]."""
    p = augment_params(seed)
    return apply_photometric(img, **p).astype(np.float32)
