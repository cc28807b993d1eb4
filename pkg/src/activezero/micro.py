"""A small trainable patch-descriptor matcher and its mixed-domain training loop.

Each pixel's (2p+1)^2 patch is mapped to ``tanh(W x + b)``; matching cost is
the squared descriptor distance and the disparity is the soft-argmin of the
costs at temperature ``tau``. Gradients are written out by hand (reverse
mode) through soft-argmin, the descriptor map, and the reprojection warp.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .cost import MixedLossWeights, PatchParams, patch_cost, smooth_l1, smooth_l1_grad
from .errors import DivergenceError, EmptyReductionError
from .imagecore import DisparityMap, apply_photometric, augment_params, box_sum, check_same_shape, sample_row
from .matcher import CostVolume, wta_disparity

PARAMS_MAGIC = b"AZMM"
DIVERGENCE_LIMIT = 1e6
TRACE_COLUMNS = ("iter", "lr", "loss", "real_reproj", "sim_disp", "sim_reproj", "val_epe")


@dataclass
class MicroParams:
    weights: np.ndarray  # (k, side*side)
    bias: np.ndarray  # (k,)
    tau: float = 1.0
    patch: int = 11

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.shape != (self.bias.shape[0], self.patch * self.patch):
            raise ValueError(f"weights {self.weights.shape} do not match k={self.bias.shape[0]}, patch={self.patch}")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("parameters must be finite")

    @property
    def k(self) -> int:
        return self.bias.shape[0]

    @classmethod
    def init(cls, k: int = 16, patch: int = 11, tau: float = 1.0, seed: int = 0, scale: float | None = None):
        rng = np.random.default_rng([int(seed), 0x417])
        n = patch * patch
        scale = 1.0 / math.sqrt(n) if scale is None else scale
        return cls(scale * rng.standard_normal((k, n)), np.zeros(k), tau, patch)

    @classmethod
    def identity(cls, patch: int = 11, tau: float = 1.0):
        n = patch * patch
        return cls(np.eye(n), np.zeros(n), tau, patch)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def with_flat(self, theta) -> "MicroParams":
        theta = np.asarray(theta, dtype=np.float64)
        nw = self.weights.size
        return MicroParams(theta[:nw].reshape(self.weights.shape), theta[nw:], self.tau, self.patch)

    def to_bytes(self) -> bytes:
        head = PARAMS_MAGIC + struct.pack("<IId", self.k, self.patch, self.tau)
        return head + self.flat().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MicroParams":
        if blob[:4] != PARAMS_MAGIC:
            raise ValueError("not a micro-matcher parameter blob")
        k, patch, tau = struct.unpack("<IId", blob[4:20])
        theta = np.frombuffer(blob[20:], dtype="<f8")
        if theta.size != k * patch * patch + k:
            raise ValueError("parameter blob has the wrong length")
        return cls(theta[: k * patch * patch].reshape(k, patch * patch), theta[k * patch * patch:], tau, patch)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "MicroParams":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def patch_matrix(img, side: int) -> np.ndarray:
    """(H*W, side*side) flattened reflect-padded patches."""
    p = side // 2
    a = np.pad(np.asarray(img, dtype=np.float64), p, mode="reflect")
    return sliding_window_view(a, (side, side)).reshape(-1, side * side)


@dataclass
class _Forward:
    params: MicroParams
    shape: tuple
    patches: tuple
    feats: tuple  # (H, W, k) left, right
    costs: np.ndarray  # (D, H, W), inf where invalid
    valid: np.ndarray
    prob: np.ndarray
    disp: np.ndarray


def standardize_pair(left, right):
    """Joint zero-mean, unit-variance scaling of a stereo pair (the matcher's input normalization)."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    check_same_shape(left, right)
    both = np.concatenate([left.ravel(), right.ravel()])
    mu, sd = both.mean(), both.std()
    sd = sd if sd > 1e-8 else 1.0
    return (left - mu) / sd, (right - mu) / sd


_ROW_CHUNK = 16


def _band(w: int, d_max: int):
    """Column index ``u`` (w, 1) and shift ``d`` (1, d_max) grids."""
    return np.arange(w)[:, None], np.arange(d_max)[None, :]


def _forward(params: MicroParams, left, right, d_max: int) -> _Forward:
    left, right = standardize_pair(left, right)
    h, w = left.shape
    if d_max < 1 or d_max > w:
        raise ValueError(f"d_max must be in [1, {w}], got {d_max}")
    pl = patch_matrix(left, params.patch)
    pr = patch_matrix(right, params.patch)
    fl = np.tanh(pl @ params.weights.T + params.bias).reshape(h, w, params.k)
    fr = np.tanh(pr @ params.weights.T + params.bias).reshape(h, w, params.k)
    u, dd = _band(w, d_max)
    valid = np.broadcast_to((u - dd >= 0).T[:, None, :], (d_max, h, w)).copy()
    nl = np.einsum("ijk,ijk->ij", fl, fl)
    nr = np.einsum("ijk,ijk->ij", fr, fr)
    cross = np.empty((d_max, h, w))
    up = np.clip(u - dd, 0, w - 1)
    for r0 in range(0, h, _ROW_CHUNK):
        r1 = min(r0 + _ROW_CHUNK, h)
        # per row, all pairwise descriptor products; the shift-d band is cross[u, u - d]
        m = np.matmul(fl[r0:r1], fr[r0:r1].transpose(0, 2, 1))
        cross[:, r0:r1] = m[:, u, up].transpose(2, 0, 1)
    nr_shift = nr[:, up].transpose(2, 0, 1)
    costs = np.where(valid, np.maximum(nl[None] + nr_shift - 2.0 * cross, 0.0), np.inf)
    z = -costs / params.tau
    z -= z.max(axis=0, keepdims=True)
    e = np.where(valid, np.exp(z), 0.0)
    prob = e / e.sum(axis=0, keepdims=True)
    disp = np.tensordot(np.arange(d_max, dtype=np.float64), prob, axes=1)
    return _Forward(params, (h, w), (pl, pr), (fl, fr), costs, valid, prob, disp)


def micro_forward(params: MicroParams, left_sig, right_sig, d_max: int):
    """Soft-argmin disparity and the descriptor cost volume."""
    fw = _forward(params, left_sig, right_sig, d_max)
    cv = CostVolume(np.where(fw.valid, fw.costs, 0.0), fw.valid)
    return DisparityMap(fw.disp, np.ones(fw.shape, dtype=bool)), cv


def _backward(fw: _Forward, g_disp) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the flat parameter vector given dL/d(disp)."""
    params = fw.params
    d_max = fw.costs.shape[0]
    h, w = fw.shape
    fl, fr = fw.feats
    hyp = np.arange(d_max, dtype=np.float64)[:, None, None]
    # d(disp)/d(cost_d) = -p_d (d - disp) / tau
    g_cost = g_disp[None] * (-fw.prob * (hyp - fw.disp[None]) / params.tau)
    # cost_d = |fl(u)|^2 + |fr(u-d)|^2 - 2 fl(u).fr(u-d)
    sum_l = g_cost.sum(axis=0)
    u, dd = _band(w, d_max)
    ok = u - dd >= 0
    ui, di = np.broadcast_to(u, ok.shape)[ok], np.broadcast_to(dd, ok.shape)[ok]
    cross_l = np.empty_like(fl)
    cross_r = np.empty_like(fr)
    sum_r = np.empty((h, w))
    for r0 in range(0, h, _ROW_CHUNK):
        r1 = min(r0 + _ROW_CHUNK, h)
        # banded g[v, u, u'] = g_cost[u - u', v, u]
        band = np.zeros((r1 - r0, w, w))
        band[:, ui, ui - di] = g_cost[di, r0:r1, ui].T
        cross_l[r0:r1] = np.matmul(band, fr[r0:r1])
        cross_r[r0:r1] = np.matmul(band.transpose(0, 2, 1), fl[r0:r1])
        sum_r[r0:r1] = band.sum(axis=1)
    g_fl = 2.0 * (fl * sum_l[..., None] - cross_l)
    g_fr = 2.0 * (fr * sum_r[..., None] - cross_r)
    pl, pr = fw.patches
    gpl = (g_fl * (1.0 - fl * fl)).reshape(-1, params.k)
    gpr = (g_fr * (1.0 - fr * fr)).reshape(-1, params.k)
    g_w = gpl.T @ pl + gpr.T @ pr
    g_b = gpl.sum(axis=0) + gpr.sum(axis=0)
    return np.concatenate([g_w.ravel(), g_b])


@dataclass
class TrainPair:
    """One stereo crop. ``left``/``right`` feed the matcher; ``left_sig``/``right_sig``
    drive the reprojection loss. ``gt`` is set for simulation pairs only."""

    left: np.ndarray
    right: np.ndarray
    left_sig: np.ndarray
    right_sig: np.ndarray
    gt: DisparityMap | None = None


def loss_region(shape, d_max: int) -> np.ndarray:
    """Pixels whose full hypothesis range stays inside the image."""
    region = np.zeros(shape, dtype=bool)
    region[:, d_max - 1:] = True
    return region


def _reproj_term(pair: TrainPair, disp, region, pp: PatchParams):
    """Mean patch reprojection cost over valid region centers and its gradient in disp."""
    left = np.asarray(pair.left_sig, dtype=np.float64)
    u = np.arange(left.shape[1], dtype=np.float64)[None, :]
    vals, slope, inside = sample_row(pair.right_sig, u - disp)
    r = np.where(inside, left - vals, 0.0)
    cost, mask = patch_cost(r * r, inside, pp)
    mask &= region
    n = int(mask.sum())
    if n == 0:
        raise EmptyReductionError("reprojection loss has no valid patch in the loss region")
    cover = box_sum(mask.astype(np.float64), pp.side, mode="constant")
    grad = cover / (n * pp.area) * 2.0 * r * slope * inside
    return float(cost[mask].mean()), grad


def _disp_term(pair: TrainPair, disp, region):
    sel = region & pair.gt.valid
    n = int(sel.sum())
    if n == 0:
        raise EmptyReductionError("disparity loss has no ground-truth pixel in the loss region")
    x = np.where(sel, disp - pair.gt.disp, 0.0)
    return float(smooth_l1(x[sel]).mean()), np.where(sel, smooth_l1_grad(x), 0.0) / n


def micro_grad(params: MicroParams, batch: dict, weights: MixedLossWeights = MixedLossWeights(),
               d_max: int = 32, loss_patch: PatchParams = PatchParams()):
    """Mixed-domain loss and its gradient for a batch ``{"real": [...], "sim": [...]}``.

    Per-domain terms are averaged over the pairs of that domain. Returns
    ``(grad_flat, loss, terms)``.
    """
    real = batch.get("real", []) or []
    sim = batch.get("sim", []) or []
    grad = np.zeros(params.flat().size)
    terms = {"real_reproj": 0.0, "sim_disp": 0.0, "sim_reproj": 0.0}

    for pair in real:
        if weights.lambda_r == 0:
            continue
        fw = _forward(params, pair.left, pair.right, d_max)
        region = loss_region(fw.shape, d_max)
        val, g = _reproj_term(pair, fw.disp, region, loss_patch)
        terms["real_reproj"] += val / len(real)
        grad += _backward(fw, weights.lambda_r * g / len(real))

    for pair in sim:
        if weights.lambda_s == 0:
            continue
        if pair.gt is None:
            raise ValueError("simulation pairs need ground-truth disparity")
        fw = _forward(params, pair.left, pair.right, d_max)
        region = loss_region(fw.shape, d_max)
        dval, dg = _disp_term(pair, fw.disp, region)
        rval, rg = _reproj_term(pair, fw.disp, region, loss_patch)
        terms["sim_disp"] += dval / len(sim)
        terms["sim_reproj"] += rval / len(sim)
        grad += _backward(fw, weights.lambda_s * (dg + rg) / len(sim))

    loss = weights.lambda_r * terms["real_reproj"] + weights.lambda_s * (terms["sim_disp"] + terms["sim_reproj"])
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite mixed loss or gradient")
    return grad, loss, terms


def micro_loss(params: MicroParams, batch: dict, weights: MixedLossWeights = MixedLossWeights(),
               d_max: int = 32, loss_patch: PatchParams = PatchParams()) -> float:
    """Forward-only mixed loss, used for finite-difference checks."""
    real = batch.get("real", []) or []
    sim = batch.get("sim", []) or []
    total = 0.0
    if weights.lambda_r:
        for pair in real:
            fw = _forward(params, pair.left, pair.right, d_max)
            total += weights.lambda_r * _reproj_term(pair, fw.disp, loss_region(fw.shape, d_max), loss_patch)[0] / len(real)
    if weights.lambda_s:
        for pair in sim:
            fw = _forward(params, pair.left, pair.right, d_max)
            region = loss_region(fw.shape, d_max)
            s = _disp_term(pair, fw.disp, region)[0] + _reproj_term(pair, fw.disp, region, loss_patch)[0]
            total += weights.lambda_s * s / len(sim)
    return total


def predict(params: MicroParams, left, right, d_max: int):
    """Inference: WTA + parabola on the descriptor cost volume."""
    _, cv = micro_forward(params, left, right, d_max)
    return wta_disparity(cv, cost_threshold=np.inf)


def validation_epe(params: MicroParams, pairs, d_max: int, mode: str = "soft") -> float:
    """Mean |disparity - GT| over loss-region, GT-valid pixels of all pairs.

    ``mode="soft"`` scores the soft-argmin output being trained; ``"wta"``
    scores the inference-time WTA + parabola disparity.
    """
    if mode not in ("soft", "wta"):
        raise ValueError(f"mode must be 'soft' or 'wta', got {mode!r}")
    errs = []
    for pair in pairs:
        if mode == "soft":
            disp = micro_forward(params, pair.left, pair.right, d_max)[0]
        else:
            disp = predict(params, pair.left, pair.right, d_max)[0]
        sel = loss_region(disp.shape, d_max) & pair.gt.valid & disp.valid
        errs.append(np.abs(disp.disp - pair.gt.disp)[sel])
    e = np.concatenate(errs) if errs else np.array([])
    if e.size == 0:
        raise EmptyReductionError("validation set has no usable pixel")
    return float(e.mean())


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append({c: row.get(c, float("nan")) for c in TRACE_COLUMNS})

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def iterations_to(self, column: str, threshold: float):
        """First iteration whose value is below ``threshold`` (None if never)."""
        vals = self.column(column)
        hits = np.flatnonzero(vals < threshold)
        return int(self.rows[hits[0]]["iter"]) if hits.size else None

    def to_csv(self) -> str:
        lines = [",".join(TRACE_COLUMNS)]
        for r in self.rows:
            lines.append(",".join(str(int(r[c])) if c == "iter" else repr(float(r[c])) for c in TRACE_COLUMNS))
        return "\n".join(lines) + "\n"


def _augment_pair(pair: TrainPair, seed) -> TrainPair:
    p = augment_params(seed)
    return TrainPair(apply_photometric(pair.left, **p), apply_photometric(pair.right, **p),
                     pair.left_sig, pair.right_sig, pair.gt)


def train_micro(params0: MicroParams, sim_set, real_set, weights: MixedLossWeights = MixedLossWeights(),
                iters: int = 200, lr: float = 0.05, seed: int = 0, d_max: int = 32, batch_size: int = 2,
                val_set=None, augment: bool = True, loss_patch: PatchParams = PatchParams(),
                val_mode: str = "soft"):
    """Plain gradient descent, step halved every ``ceil(iters/4)`` iterations.

    Each iteration draws ``batch_size`` pairs per domain (seeded), applies the
    photometric augmentation to the matcher inputs (same draw for both views
    of a pair), and records one trace row.
    """
    if not sim_set:
        raise ValueError("sim_set must be non-empty")
    rng = np.random.default_rng([int(seed), 0x7A1])
    theta = params0.flat().copy()
    params = params0
    trace = TrainTrace()
    decay = max(1, math.ceil(iters / 4))
    for it in range(iters):
        step = lr * 0.5 ** (it // decay)
        batch = {}
        for name, pool in (("sim", sim_set), ("real", real_set or [])):
            if not pool:
                batch[name] = []
                continue
            idx = rng.choice(len(pool), size=min(batch_size, len(pool)), replace=False)
            seeds = rng.integers(0, 2**31, size=len(idx))
            batch[name] = [_augment_pair(pool[i], int(s)) if augment else pool[i] for i, s in zip(idx, seeds)]
        try:
            grad, loss, terms = micro_grad(params, batch, weights, d_max, loss_patch)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), trace) from None
        if loss > DIVERGENCE_LIMIT:
            raise DivergenceError(f"loss {loss:.3g} exceeded {DIVERGENCE_LIMIT:g} at iteration {it}", trace)
        theta = theta - step * grad
        params = params.with_flat(theta)
        val = validation_epe(params, val_set, d_max, val_mode) if val_set else float("nan")
        trace.append(iter=it, lr=step, loss=loss, val_epe=val, **terms)
    return params, trace
