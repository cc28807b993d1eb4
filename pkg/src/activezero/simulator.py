"""Shape-primitive scenes and active-IR stereo rendering.

Every camera pixel casts one primary ray. A frame is assembled as

    x(u, v) = I(u, v) + alpha(u, v) * e * K(u, v) + noise

where ``I`` is the dim ambient rendering, ``K`` the emitter dot field seen at
the hit point (zero when the emitter is occluded), ``alpha`` the per-pixel IR
return and ``e`` the emitter power. Geometry is computed once per camera and
reused across the power schedule.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.spatial.transform import Rotation

from .imagecore import DisparityMap, StereoRig

KINDS = ("sphere", "box", "capsule")
TEXTURES = ("constant", "checker", "stripes", "noise")
SPECULAR_EXPONENT = 32.0
DEFAULT_POWERS = tuple(np.round(np.linspace(0.0, 1.0, 7), 10))
DEFAULT_AMBIENT = 0.1
DEFAULT_NOISE = 0.005
ENV_LIGHT = np.array([-0.3, -1.0, -0.5]) / np.linalg.norm([-0.3, -1.0, -0.5])
TRANSPARENT_REFLECTANCE = 0.02
_TMIN = 1e-7

LEFT, RIGHT = "left", "right"


@dataclass
class Material:
    diffuse_weight: float = 0.9
    specular_weight: float = 0.0
    ir_reflectance: float = 0.8

    def __post_init__(self):
        for name in ("diffuse_weight", "specular_weight", "ir_reflectance"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.diffuse_weight + self.specular_weight > 1.0 + 1e-12:
            raise ValueError("diffuse_weight + specular_weight must be <= 1")

    @property
    def transparent(self) -> bool:
        return self.ir_reflectance <= TRANSPARENT_REFLECTANCE


@dataclass
class Texture:
    """Procedural solid texture evaluated in the primitive's local frame."""

    kind: str = "constant"
    albedo: float = 0.8
    albedo2: float = 0.3
    scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TEXTURES:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("texture scale must be > 0")

    def evaluate(self, p):
        if self.kind == "constant":
            return np.full(p.shape[0], self.albedo)
        q = p / self.scale
        if self.kind == "checker":
            c = np.floor(q).astype(np.int64).sum(axis=1) % 2
            mix = c.astype(np.float64)
        elif self.kind == "stripes":
            mix = 0.5 + 0.5 * np.sin(2 * np.pi * q[:, 0])
        else:
            mix = _value_noise(q, self.seed)
        return self.albedo + (self.albedo2 - self.albedo) * mix


@dataclass
class Primitive:
    """``size``: sphere (r, r, r); box half-extents; capsule (radius, half-length, radius)."""

    kind: str
    position: tuple
    rotation: tuple = (0.0, 0.0, 0.0)  # rotation vector, radians
    size: tuple = (0.05, 0.05, 0.05)
    texture: Texture = field(default_factory=Texture)
    material: Material = field(default_factory=Material)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        self.position = tuple(float(x) for x in self.position)
        self.rotation = tuple(float(x) for x in self.rotation)
        self.size = tuple(float(x) for x in self.size)
        if len(self.size) != 3 or min(self.size) <= 0:
            raise ValueError(f"size components must be > 0, got {self.size}")
        if isinstance(self.texture, dict):
            self.texture = Texture(**self.texture)
        if isinstance(self.material, dict):
            self.material = Material(**self.material)

    @property
    def matrix(self) -> np.ndarray:
        return Rotation.from_rotvec(self.rotation).as_matrix()


@dataclass
class Scene:
    primitives: list = field(default_factory=list)
    table_depth: float | None = 1.0
    table_tilt: float = 0.35
    table_texture: Texture = field(default_factory=lambda: Texture("noise", 0.7, 0.4, 0.05, 0))
    table_material: Material = field(default_factory=Material)
    ambient: float = DEFAULT_AMBIENT
    seed: int = 0

    def __post_init__(self):
        self.primitives = [p if isinstance(p, Primitive) else Primitive(**p) for p in self.primitives]
        if isinstance(self.table_texture, dict):
            self.table_texture = Texture(**self.table_texture)
        if isinstance(self.table_material, dict):
            self.table_material = Material(**self.table_material)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(**d)

    def table_plane(self):
        """Point and camera-facing unit normal of the table, or None."""
        if self.table_depth is None:
            return None
        t = self.table_tilt
        n = np.array([0.0, -np.sin(t), -np.cos(t)])
        return np.array([0.0, 0.0, self.table_depth]), n

    def table_depth_at(self, x, y):
        """Depth of the table along the ray through camera-frame direction (x, y, 1)."""
        p0, n = self.table_plane()
        d = np.stack([x, y, np.ones_like(x)], axis=-1)
        return (p0 @ n) / (d @ n)


@dataclass
class Emitter:
    """Dot projector placed on the baseline, sharing the camera intrinsics."""

    powers: tuple = DEFAULT_POWERS
    density: float = 0.15
    dot_radius: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.powers = tuple(float(p) for p in self.powers)
        if len(self.powers) < 1 or min(self.powers) < 0:
            raise ValueError("powers must be non-negative")
        if any(b <= a for a, b in zip(self.powers, self.powers[1:])):
            raise ValueError("powers must be strictly increasing")
        if not 0 < self.density < 1:
            raise ValueError("dot density must be in (0, 1)")
        if self.dot_radius <= 0:
            raise ValueError("dot_radius must be > 0")

    @property
    def cell(self) -> float:
        return float(np.sqrt(np.pi * self.dot_radius**2 / self.density))

    def pattern_at(self, pu, pv):
        """Binary dot field on the emitter image plane (continuous pixel coords)."""
        s = self.cell
        r = self.dot_radius
        i = np.floor(pu / s).astype(np.int64)
        j = np.floor(pv / s).astype(np.int64)
        lo = min(r / s, 0.5)
        jx = lo + (1 - 2 * lo) * _hash01(i, j, self.seed, 1)
        jy = lo + (1 - 2 * lo) * _hash01(i, j, self.seed, 2)
        dx = pu - (i + jx) * s
        dy = pv - (j + jy) * s
        return dx * dx + dy * dy <= r * r

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SceneParams:
    count_range: tuple = (5, 15)
    size_range: tuple = (0.03, 0.09)
    table_depth_range: tuple = (0.9, 1.2)
    table_tilt_range: tuple = (0.2, 0.5)
    float_range: tuple = (0.0, 0.35)
    transparent_fraction: float = 0.1
    specular_fraction: float = 0.2
    textured_fraction: float = 0.5
    ir_reflectance_range: tuple = (0.5, 1.0)
    albedo_range: tuple = (0.25, 1.0)
    ambient: float = DEFAULT_AMBIENT
    margin: float = 0.1
    # fixed table texture; None draws one at random
    table_texture: Texture | None = None

    def __post_init__(self):
        for name in ("count_range", "size_range", "table_depth_range", "table_tilt_range",
                     "float_range", "ir_reflectance_range", "albedo_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} > max {hi}")
        if self.count_range[0] < 0 or self.size_range[0] <= 0:
            raise ValueError("count and size ranges must be positive")
        for name in ("transparent_fraction", "specular_fraction", "textured_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")


# --- hashing and procedural noise -------------------------------------------

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _mix64(x):
    x = x ^ (x >> np.uint64(30))
    x = x * _M2
    x = x ^ (x >> np.uint64(27))
    x = x * _M3
    return x ^ (x >> np.uint64(31))


def _hash01(*keys):
    """Deterministic hash of integer arrays/scalars to floats in [0, 1)."""
    with np.errstate(over="ignore"):
        h = np.uint64(0x243F6A8885A308D3)
        for k in keys:
            k = np.asarray(k).astype(np.int64).astype(np.uint64)
            h = _mix64(h ^ (k + _M1 + (h << np.uint64(6)) + (h >> np.uint64(2))))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


def _value_noise(q, seed):
    base = np.floor(q).astype(np.int64)
    f = q - base
    f = f * f * (3 - 2 * f)
    out = np.zeros(q.shape[0])
    for corner in range(8):
        o = np.array([(corner >> k) & 1 for k in range(3)])
        w = np.prod(np.where(o, f, 1 - f), axis=1)
        c = base + o
        out += w * _hash01(c[:, 0], c[:, 1], c[:, 2], seed)
    return out


# --- ray/primitive intersection ---------------------------------------------

def _nearest_root(a, b, c, tmin):
    """Smallest root > tmin of a t^2 + b t + c = 0, inf where none."""
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (a > 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
    t = np.where(t0 > tmin, t0, np.where(t1 > tmin, t1, np.inf))
    return np.where(ok, t, np.inf), np.where(ok, t0, np.inf), np.where(ok, t1, np.inf)


def _to_local(prim, origins, dirs):
    r = prim.matrix
    c = np.asarray(prim.position)
    return (origins - c) @ r, dirs @ r


def intersect_sphere(center, radius, origins, dirs, tmin=_TMIN):
    oc = origins - center
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2 * np.einsum("ij,ij->i", dirs, oc)
    c = np.einsum("ij,ij->i", oc, oc) - radius * radius
    return _nearest_root(a, b, c, tmin)[0]


def intersect_box(half, origins, dirs, tmin=_TMIN):
    """Slab test against an axis-aligned box centered at the origin (local frame)."""
    half = np.asarray(half)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (-half - origins) * inv
        t2 = (half - origins) * inv
    # rays parallel to a slab: inside -> unbounded, outside -> miss
    par = dirs == 0
    inside = np.abs(origins) <= half
    t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
    tnear = np.minimum(t1, t2).max(axis=1)
    tfar = np.maximum(t1, t2).min(axis=1)
    hit = (tnear <= tfar) & (tfar > tmin)
    t = np.where(tnear > tmin, tnear, tfar)
    return np.where(hit, t, np.inf)


def intersect_capsule(radius, half_len, origins, dirs, tmin=_TMIN):
    """Capsule along the local y axis, segment y in [-half_len, half_len]."""
    ox, oy, oz = origins.T
    dx, dy, dz = dirs.T
    a = dx * dx + dz * dz
    b = 2 * (ox * dx + oz * dz)
    c = ox * ox + oz * oz - radius * radius
    _, t0, t1 = _nearest_root(a, b, c, tmin)
    best = np.full(origins.shape[0], np.inf)
    for t in (t0, t1):
        y = oy + np.where(np.isfinite(t), t, 0.0) * dy
        ok = np.isfinite(t) & (t > tmin) & (np.abs(y) <= half_len)
        best = np.where(ok, np.minimum(best, t), best)
    for yc in (-half_len, half_len):
        ts = intersect_sphere(np.array([0.0, yc, 0.0]), radius, origins, dirs, tmin)
        best = np.minimum(best, ts)
    return best


def intersect_plane(point, normal, origins, dirs, tmin=_TMIN):
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((point - origins) @ normal) / denom
    return np.where(np.isfinite(t) & (t > tmin), t, np.inf)


def intersect_primitive(prim, origins, dirs, tmin=_TMIN):
    lo, ld = _to_local(prim, origins, dirs)
    if prim.kind == "sphere":
        return intersect_sphere(np.zeros(3), prim.size[0], lo, ld, tmin)
    if prim.kind == "box":
        return intersect_box(prim.size, lo, ld, tmin)
    return intersect_capsule(prim.size[0], prim.size[1], lo, ld, tmin)


def primitive_normal(prim, points):
    r = prim.matrix
    p = (points - np.asarray(prim.position)) @ r
    if prim.kind == "sphere":
        n = p
    elif prim.kind == "box":
        rel = np.abs(p) / np.asarray(prim.size)
        axis = np.argmax(rel, axis=1)
        n = np.zeros_like(p)
        idx = np.arange(p.shape[0])
        n[idx, axis] = np.sign(p[idx, axis])
    else:
        q = np.zeros_like(p)
        q[:, 1] = np.clip(p[:, 1], -prim.size[1], prim.size[1])
        n = p - q
    n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    return n @ r.T


def cast(scene: Scene, origins, dirs, tmin=_TMIN, tmax=None):
    """Nearest hit over all scene surfaces.

    Returns ``(t, ids)`` where ids is -1 for a miss, 0 for the table and
    ``i + 1`` for primitive ``i``.
    """
    n = origins.shape[0]
    t_best = np.full(n, np.inf)
    ids = np.full(n, -1, dtype=np.int64)
    plane = scene.table_plane()
    if plane is not None:
        t = intersect_plane(plane[0], plane[1], origins, dirs, tmin)
        closer = t < t_best
        t_best[closer] = t[closer]
        ids[closer] = 0
    for i, prim in enumerate(scene.primitives):
        t = intersect_primitive(prim, origins, dirs, tmin)
        closer = t < t_best
        t_best[closer] = t[closer]
        ids[closer] = i + 1
    if tmax is not None:
        miss = t_best >= tmax
        ids[miss] = -1
        t_best[miss] = np.inf
    return t_best, ids


def occluded(scene: Scene, origins, dirs, dist):
    """True where any surface lies strictly between origin and ``dist`` along dir."""
    hit = np.zeros(origins.shape[0], dtype=bool)
    plane = scene.table_plane()
    if plane is not None:
        hit |= intersect_plane(plane[0], plane[1], origins, dirs) < dist
    for prim in scene.primitives:
        todo = ~hit
        if not todo.any():
            break
        t = intersect_primitive(prim, origins[todo], dirs[todo])
        hit[todo] = t < dist[todo]
    return hit


# --- camera model -------------------------------------------------------------

def camera_center(rig: StereoRig, camera: str) -> np.ndarray:
    if camera == LEFT:
        return np.zeros(3)
    if camera == RIGHT:
        return np.array([rig.baseline, 0.0, 0.0])
    raise ValueError(f"camera must be 'left' or 'right', got {camera!r}")


def emitter_center(rig: StereoRig) -> np.ndarray:
    return np.array([rig.emitter_offset, 0.0, 0.0])


def pixel_rays(rig: StereoRig):
    """Unnormalized ray directions with unit z, so the ray parameter equals depth."""
    v, u = np.mgrid[0:rig.height, 0:rig.width].astype(np.float64)
    d = np.stack([(u - rig.cx) / rig.focal_length, (v - rig.cy) / rig.focal_length, np.ones_like(u)], axis=-1)
    return d.reshape(-1, 3)


@dataclass
class GroundTruth:
    disparity: DisparityMap
    depth: np.ndarray
    instance: np.ndarray  # 0 no hit, 1 table, i + 2 primitive i
    normals: np.ndarray  # (H, W, 3)
    points: np.ndarray  # (H, W, 3)


@dataclass
class CameraComponents:
    """Power-independent per-pixel terms for one camera."""

    ambient: np.ndarray  # I(u, v)
    alpha: np.ndarray
    pattern: np.ndarray  # K(u, v) in {0, 1}
    hit: np.ndarray
    depth: np.ndarray
    instance: np.ndarray
    normals: np.ndarray
    points: np.ndarray
    transparent: np.ndarray
    specular_weight: np.ndarray


def _surface_table(scene: Scene):
    mats = [scene.table_material] + [p.material for p in scene.primitives]
    return mats


def _albedo(scene: Scene, ids, points):
    out = np.zeros(ids.shape[0])
    m = ids == 0
    if m.any():
        out[m] = scene.table_texture.evaluate(points[m])
    for i, prim in enumerate(scene.primitives):
        m = ids == i + 1
        if m.any():
            local = (points[m] - np.asarray(prim.position)) @ prim.matrix
            out[m] = prim.texture.evaluate(local)
    return out


def _normals(scene: Scene, ids, points):
    out = np.zeros_like(points)
    m = ids == 0
    if m.any():
        out[m] = scene.table_plane()[1]
    for i, prim in enumerate(scene.primitives):
        m = ids == i + 1
        if m.any():
            out[m] = primitive_normal(prim, points[m])
    return out


def camera_components(scene: Scene, rig: StereoRig, camera: str, emitter: Emitter) -> CameraComponents:
    h, w = rig.height, rig.width
    center = camera_center(rig, camera)
    dirs = pixel_rays(rig)
    origins = np.broadcast_to(center, dirs.shape)
    t, ids = cast(scene, origins, dirs)
    hit = ids >= 0
    npx = dirs.shape[0]

    ambient = np.zeros(npx)
    alpha = np.zeros(npx)
    pattern = np.zeros(npx)
    normals = np.zeros((npx, 3))
    points = np.zeros((npx, 3))
    transparent = np.zeros(npx, dtype=bool)
    spec_w = np.zeros(npx)

    if hit.any():
        hi = np.flatnonzero(hit)
        p = origins[hi] + t[hi, None] * dirs[hi]
        sid = ids[hi]
        n = _normals(scene, sid, p)
        view = center - p
        view /= np.linalg.norm(view, axis=1, keepdims=True)
        # flip normals that face away from the camera (viewing a back face)
        flip = np.einsum("ij,ij->i", n, view) < 0
        n[flip] *= -1

        mats = _surface_table(scene)
        dw = np.array([m.diffuse_weight for m in mats])[sid]
        sw = np.array([m.specular_weight for m in mats])[sid]
        refl = np.array([m.ir_reflectance for m in mats])[sid]
        transp = np.array([m.transparent for m in mats])[sid]
        albedo = _albedo(scene, sid, p)

        h_env = ENV_LIGHT[None, :] * -1 + view
        h_env /= np.linalg.norm(h_env, axis=1, keepdims=True)
        l_env = -ENV_LIGHT
        ndl_env = np.maximum(n @ l_env, 0.0)
        spec_env = np.where(ndl_env > 0, np.maximum(np.einsum("ij,ij->i", n, h_env), 0.0) ** SPECULAR_EXPONENT, 0.0)
        shading = 0.35 + 0.65 * (dw * ndl_env + sw * spec_env)
        ambient[hi] = scene.ambient * albedo * shading

        e_pos = emitter_center(rig)
        to_e = e_pos - p
        r = np.linalg.norm(to_e, axis=1)
        l_e = to_e / r[:, None]
        ndl = np.einsum("ij,ij->i", n, l_e)
        h_e = l_e + view
        h_e /= np.linalg.norm(h_e, axis=1, keepdims=True)
        spec = np.where(ndl > 0, np.maximum(np.einsum("ij,ij->i", n, h_e), 0.0) ** SPECULAR_EXPONENT, 0.0)
        a = refl * (dw * albedo * np.maximum(ndl, 0.0) + sw * spec) / (1.0 + r * r)

        lit = ndl > 0
        if lit.any():
            li = np.flatnonzero(lit)
            origin_s = p[li] + 1e-6 * n[li]
            dist = np.linalg.norm(e_pos - origin_s, axis=1)
            dir_s = (e_pos - origin_s) / dist[:, None]
            shadow = occluded(scene, origin_s, dir_s, dist * (1 - 1e-9))
            lit[li[shadow]] = False
        # project into the emitter image plane (same intrinsics as the cameras)
        pu = rig.focal_length * (p[:, 0] - e_pos[0]) / p[:, 2] + rig.cx
        pv = rig.focal_length * p[:, 1] / p[:, 2] + rig.cy
        dots = emitter.pattern_at(pu, pv) & (p[:, 2] > 0)
        k = (dots & lit).astype(np.float64)

        alpha[hi] = np.where(lit, a, 0.0)
        pattern[hi] = k
        normals[hi] = n
        points[hi] = p
        transparent[hi] = transp
        spec_w[hi] = sw

    depth = np.where(hit, t, np.inf)
    shape = (h, w)
    return CameraComponents(
        ambient=ambient.reshape(shape),
        alpha=alpha.reshape(shape),
        pattern=pattern.reshape(shape),
        hit=hit.reshape(shape),
        depth=depth.reshape(shape),
        instance=np.where(hit, ids + 1, 0).reshape(shape),
        normals=normals.reshape(h, w, 3),
        points=points.reshape(h, w, 3),
        transparent=transparent.reshape(shape),
        specular_weight=spec_w.reshape(shape),
    )


def render_ground_truth(scene: Scene, rig: StereoRig) -> GroundTruth:
    """Left-view disparity ``f*b/z`` at the nearest hit; misses are invalid."""
    dirs = pixel_rays(rig)
    t, ids = cast(scene, np.zeros_like(dirs), dirs)
    hit = ids >= 0
    p = np.where(hit[:, None], dirs * np.where(hit, t, 0.0)[:, None], 0.0)
    n = np.zeros_like(p)
    if hit.any():
        n[hit] = _normals(scene, ids[hit], p[hit])
    shape = (rig.height, rig.width)
    depth = np.where(hit, t, np.inf).reshape(shape)
    disp = np.zeros(shape)
    disp[hit.reshape(shape)] = rig.fb / depth[hit.reshape(shape)]
    return GroundTruth(
        disparity=DisparityMap(disp, hit.reshape(shape)),
        depth=depth,
        instance=np.where(hit, ids + 1, 0).reshape(shape),
        normals=n.reshape(rig.height, rig.width, 3),
        points=p.reshape(rig.height, rig.width, 3),
    )


_CAMERA_ID = {LEFT: 0, RIGHT: 1}


def frame_noise(shape, sigma: float, seed: int, frame: int, camera: str):
    if sigma <= 0:
        return np.zeros(shape)
    rng = np.random.default_rng([int(seed), int(frame), _CAMERA_ID[camera]])
    return sigma * rng.standard_normal(shape)


def compose_frame(comp: CameraComponents, power: float, noise):
    x = comp.ambient + comp.alpha * power * comp.pattern + noise
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def render_ir_frame(scene: Scene, rig: StereoRig, camera: str, emitter: Emitter, power: float,
                    noise_sigma: float = DEFAULT_NOISE, seed: int = 0, frame: int = 0,
                    components: CameraComponents | None = None) -> np.ndarray:
    if power < 0:
        raise ValueError("power must be >= 0")
    comp = components if components is not None else camera_components(scene, rig, camera, emitter)
    noise = frame_noise(comp.ambient.shape, noise_sigma, seed, frame, camera)
    return compose_frame(comp, power, noise)


@dataclass
class TemporalSequence:
    frames: list
    powers: tuple
    camera: str = LEFT

    def __post_init__(self):
        self.powers = tuple(float(p) for p in self.powers)
        if len(self.frames) != len(self.powers):
            raise ValueError("frame count must equal power count")
        if len({np.shape(f) for f in self.frames}) > 1:
            raise ValueError("all frames must share dimensions")

    @property
    def stack(self) -> np.ndarray:
        return np.stack([np.asarray(f, dtype=np.float64) for f in self.frames])

    def __len__(self):
        return len(self.frames)


@dataclass
class RenderOutput:
    left: TemporalSequence
    right: TemporalSequence
    gt_disparity: DisparityMap
    gt_pattern: np.ndarray
    gt_pattern_right: np.ndarray
    instance: np.ndarray
    left_components: CameraComponents
    right_components: CameraComponents


def render_temporal_pair(scene: Scene, rig: StereoRig, emitter: Emitter,
                         noise_sigma: float = DEFAULT_NOISE, seed: int = 0) -> RenderOutput:
    comps = {c: camera_components(scene, rig, c, emitter) for c in (LEFT, RIGHT)}
    seqs = {}
    for cam, comp in comps.items():
        frames = [compose_frame(comp, e, frame_noise(comp.ambient.shape, noise_sigma, seed, i, cam))
                  for i, e in enumerate(emitter.powers)]
        seqs[cam] = TemporalSequence(frames, emitter.powers, cam)
    left = comps[LEFT]
    disp = np.zeros(left.depth.shape)
    disp[left.hit] = rig.fb / left.depth[left.hit]
    return RenderOutput(
        left=seqs[LEFT],
        right=seqs[RIGHT],
        gt_disparity=DisparityMap(disp, left.hit),
        gt_pattern=left.pattern.astype(np.float32),
        gt_pattern_right=comps[RIGHT].pattern.astype(np.float32),
        instance=left.instance,
        left_components=left,
        right_components=comps[RIGHT],
    )


# --- random scene generation --------------------------------------------------

def _random_texture(rng, params: SceneParams, textured: bool) -> Texture:
    a = float(rng.uniform(*params.albedo_range))
    if not textured:
        return Texture("constant", a)
    kind = str(rng.choice(["checker", "stripes", "noise"]))
    return Texture(kind, a, float(rng.uniform(*params.albedo_range)),
                   float(rng.uniform(0.008, 0.03)), int(rng.integers(0, 2**31)))


def _random_material(rng, params: SceneParams) -> Material:
    refl = float(rng.uniform(*params.ir_reflectance_range))
    if rng.random() < params.transparent_fraction:
        return Material(0.9, 0.1, float(rng.uniform(0.0, TRANSPARENT_REFLECTANCE)))
    if rng.random() < params.specular_fraction:
        sw = float(rng.uniform(0.3, 0.7))
        return Material(1.0 - sw, sw, refl)
    sw = float(rng.uniform(0.0, 0.1))
    return Material(float(rng.uniform(0.8, 1.0 - sw)), sw, refl)


def generate_random_scene(seed: int, params: SceneParams | None = None, rig: StereoRig | None = None) -> Scene:
    """Random primitives between the camera and a tilted table.

    Primitives may interpenetrate each other and the table and may float above it.
    """
    params = params or SceneParams()
    rig = rig or StereoRig()
    rng = np.random.default_rng([int(seed), 0x5CE7E])
    table_depth = float(rng.uniform(*params.table_depth_range))
    tilt = float(rng.uniform(*params.table_tilt_range))
    table_texture = _random_texture(rng, params, True)
    scene = Scene(
        table_depth=table_depth,
        table_tilt=tilt,
        table_texture=params.table_texture or table_texture,
        table_material=Material(0.95, 0.0, float(rng.uniform(*params.ir_reflectance_range))),
        ambient=params.ambient,
        seed=int(seed),
    )
    lo, hi = params.count_range
    count = int(rng.integers(lo, hi + 1))
    m = params.margin
    for _ in range(count):
        kind = str(rng.choice(KINDS))
        s = float(rng.uniform(*params.size_range))
        if kind == "sphere":
            size = (s, s, s)
        elif kind == "box":
            size = tuple(float(x) for x in s * rng.uniform(0.5, 1.5, 3))
        else:
            size = (0.6 * s, float(s * rng.uniform(0.5, 1.5)), 0.6 * s)
        u = rng.uniform(m, 1 - m) * (rig.width - 1)
        v = rng.uniform(m, 1 - m) * (rig.height - 1)
        x = (u - rig.cx) / rig.focal_length
        y = (v - rig.cy) / rig.focal_length
        z_table = float(scene.table_depth_at(np.array(x), np.array(y)))
        z = z_table - float(rng.uniform(*params.float_range))
        rot = Rotation.random(random_state=int(rng.integers(0, 2**31))).as_rotvec()
        texture = _random_texture(rng, params, rng.random() < params.textured_fraction)
        material = _random_material(rng, params)
        if material.transparent:
            # a clear surface returns almost no IR from any source, ambient included
            texture = Texture("constant", material.ir_reflectance)
        scene.primitives.append(Primitive(
            kind=kind,
            position=(x * z, y * z, z),
            rotation=tuple(rot),
            size=size,
            texture=texture,
            material=material,
        ))
    return scene


def scene_from_json(text: str) -> Scene:
    return Scene.from_dict(json.loads(text))


def covisible_mask(out: RenderOutput, rig: StereoRig, rel_tol: float = 5e-3) -> np.ndarray:
    """Left pixels whose surface point is also the nearest hit seen by the right camera."""
    left, right = out.left_components, out.right_components
    d = out.gt_disparity
    ur = np.rint(np.arange(rig.width)[None, :] - d.disp).astype(np.intp)
    inside = d.valid & (ur >= 0) & (ur < rig.width)
    rows = np.broadcast_to(np.arange(rig.height)[:, None], ur.shape)
    zr = right.depth[rows, np.clip(ur, 0, rig.width - 1)]
    zl = left.depth
    with np.errstate(invalid="ignore"):
        same = np.abs(zr - zl) <= rel_tol * np.where(np.isfinite(zl), zl, 0.0)
    return inside & same
