"""PGM (P5) and PFM (Pf) readers and writers.

IR frames and patterns go to 16-bit PGM, masks to 8-bit PGM (0 invalid,
255 valid), disparity and depth to little-endian single-channel PFM with
``inf`` marking invalid pixels.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .imagecore import DisparityMap


def _read_header_tokens(f, count):
    tokens = []
    while len(tokens) < count:
        line = f.readline()
        if not line:
            raise ValueError("truncated header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    return tokens


def write_pgm(path, img, maxval: int = 65535):
    """Write a [0, 1] float image (or integer samples when ``img`` is integral) as P5."""
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    if np.issubdtype(a.dtype, np.floating):
        q = np.rint(np.clip(a, 0.0, 1.0) * maxval)
    else:
        q = np.clip(a, 0, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(q.astype(dtype).tobytes())


def read_pgm_raw(path):
    """Return ``(samples, maxval)`` with integer samples."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
        w, h, maxval = (int(t) for t in _read_header_tokens(f, 3))
        dtype = ">u2" if maxval > 255 else "u1"
        data = np.frombuffer(f.read(w * h * np.dtype(dtype).itemsize), dtype=dtype)
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} samples, got {data.size}")
    return data.reshape(h, w).astype(np.int64), maxval


def read_pgm(path) -> np.ndarray:
    samples, maxval = read_pgm_raw(path)
    return (samples / float(maxval)).astype(np.float32)


def write_mask(path, mask):
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), maxval=255)


def read_mask(path) -> np.ndarray:
    samples, _ = read_pgm_raw(path)
    return samples > 0


def write_label_pgm(path, labels):
    """Instance/object label image, 16-bit, 0 = background."""
    write_pgm(path, np.asarray(labels, dtype=np.int64), maxval=65535)


def read_label_pgm(path) -> np.ndarray:
    samples, _ = read_pgm_raw(path)
    return samples


def write_pfm(path, data, scale: float = -1.0):
    a = np.asarray(data, dtype="<f4")
    if a.ndim != 2:
        raise ValueError("only single-channel PFM is supported")
    if scale >= 0:
        raise ValueError("scale must be negative (little-endian)")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n%s\n" % (w, h, repr(float(scale)).encode()))
        f.write(np.flipud(a).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic == b"PF":
            raise ValueError(f"{path}: 3-channel PFM not supported")
        if magic != b"Pf":
            raise ValueError(f"{path}: not a PFM file")
        dims = f.readline().decode("ascii")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise ValueError(f"{path}: malformed PFM size line")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().decode("ascii").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * 4), dtype=dtype)
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} floats, got {data.size}")
    return np.flipud(data.reshape(h, w)).astype(np.float32)


def write_disparity(path, disp: DisparityMap):
    write_pfm(path, np.where(disp.valid, disp.disp, np.inf))


def read_disparity(path) -> DisparityMap:
    return DisparityMap.dense(read_pfm(path))


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
