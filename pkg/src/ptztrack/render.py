"""Grayscale frame synthesis by per-pixel ray casting.

Rays go through pixel centers using the exact inverse of the pinhole
projection, so rendered objects land precisely inside their projected
bounding boxes. Primitives are the ground plane, four boundary walls, and
oriented boxes (vehicles, humans, tree trunks and canopies). Everything is
procedural and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import CameraRig, PtzState, camera_basis, focal_lengths
from .scene import TREE_CANOPY_DIMS, TREE_TRUNK_DIMS, FIELD_SIZE, WorldState

WALL_HEIGHT = 10.0
DEFAULT_SKY = 0.78

# Grayscale value per catalog color; injective so colors stay separable.
COLOR_INTENSITY = {
    "blue": 0.30,
    "red": 0.50,
    "grey": 0.65,
    "green": 0.42,
    "white": 0.90,
    "black": 0.10,
}
TRUNK_INTENSITY = 0.22
CANOPY_INTENSITY = 0.42

# Face shading by local axis of the entry face: sides (width axis),
# front/back (length axis), top/bottom. Gives the object an orientation cue.
FACE_SHADE = (0.85, 0.70, 1.00)

# Hit-id codes for the id buffer (object hits carry the object id >= 0).
ID_NONE = -1
ID_GROUND = -2
ID_WALL = -3


@dataclass
class Frame:
    """Single-channel image; intensities are reals in [0, 1] internally and
    one byte per pixel externally."""

    width: int
    height: int
    pixels: np.ndarray  # (height, width) float array in [0, 1]

    def to_bytes(self) -> bytes:
        q = np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)
        return q.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, width: int, height: int) -> "Frame":
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
        return cls(width, height, arr.astype(np.float64) / 255.0)

    def quantized(self) -> "Frame":
        """Snap intensities to the byte grid, so the in-process view equals
        what any external consumer of the byte encoding sees."""
        return Frame.from_bytes(self.to_bytes(), self.width, self.height)


@dataclass(frozen=True)
class RenderConfig:
    background_id: int = 0
    walls_visible: bool = False
    sky_intensity: float = DEFAULT_SKY
    shading: tuple[float, float, float] = FACE_SHADE


@dataclass(frozen=True)
class AugmentationConfig:
    """Concrete augmentation values for one application (not ranges)."""

    salt_pepper_prob: float = 0.0
    brightness_delta: float = 0.0
    contrast_scale: float = 1.0
    shadow_enabled: bool = False


# ---------------------------------------------------------------------------
# Procedural background patterns

def _hash01(ix, iy, salt: int):
    """Deterministic lattice hash -> [0, 1), vectorized."""
    h = (ix.astype(np.uint32) * np.uint32(73856093)
         ^ iy.astype(np.uint32) * np.uint32(19349663)
         ^ np.uint32(salt * 83492791))
    h ^= h >> np.uint32(13)
    h *= np.uint32(0x5BD1E995)
    h ^= h >> np.uint32(15)
    return (h & np.uint32(0xFFFFFF)).astype(np.float64) / float(0x1000000)


def _value_noise(x, y, scale: float, salt: int):
    xs = x / scale
    ys = y / scale
    ix = np.floor(xs).astype(np.int64)
    iy = np.floor(ys).astype(np.int64)
    fx = xs - ix
    fy = ys - iy
    # smoothstep weights
    wx = fx * fx * (3.0 - 2.0 * fx)
    wy = fy * fy * (3.0 - 2.0 * fy)
    v00 = _hash01(ix, iy, salt)
    v10 = _hash01(ix + 1, iy, salt)
    v01 = _hash01(ix, iy + 1, salt)
    v11 = _hash01(ix + 1, iy + 1, salt)
    return (v00 * (1 - wx) * (1 - wy) + v10 * wx * (1 - wy)
            + v01 * (1 - wx) * wy + v11 * wx * wy)


def _checker(x, y, pitch, lo, hi):
    c = (np.floor(x / pitch).astype(np.int64) + np.floor(y / pitch).astype(np.int64)) & 1
    return np.where(c == 0, lo, hi)


def _stripes(x, y, angle_deg, pitch, lo, hi):
    a = math.radians(angle_deg)
    s = x * math.cos(a) + y * math.sin(a)
    c = np.floor(s / pitch).astype(np.int64) & 1
    return np.where(c == 0, lo, hi)


def _gradient(x, y, angle_deg, lo, hi):
    a = math.radians(angle_deg)
    s = (x * math.cos(a) + y * math.sin(a)) / FIELD_SIZE
    return lo + (hi - lo) * np.clip(0.5 + s / 2.0, 0.0, 1.0)


def background_intensity(bg_id: int, x, y):
    """Ground intensity at world (x, y) for one of the 25 pattern ids."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    kind, params = BACKGROUNDS[bg_id]
    if kind == "plain":
        return np.full(x.shape, params[0])
    if kind == "checker":
        return _checker(x, y, *params)
    if kind == "stripes":
        return _stripes(x, y, *params)
    if kind == "noise":
        scale, lo, hi, salt = params
        return lo + (hi - lo) * _value_noise(x, y, scale, salt)
    if kind == "gradient":
        return _gradient(x, y, *params)
    if kind == "rings":
        pitch, lo, hi = params
        r = np.hypot(x - FIELD_SIZE / 2, y - FIELD_SIZE / 2)
        c = np.floor(r / pitch).astype(np.int64) & 1
        return np.where(c == 0, lo, hi)
    raise ValueError(f"unknown pattern kind {kind}")


# id 0 is the plain "fixed background"; the rest cover checkers, stripes,
# noise fields, gradients and rings at assorted scales and contrasts.
BACKGROUNDS = [
    ("plain", (0.55,)),
    ("checker", (2.0, 0.35, 0.60)),
    ("checker", (4.0, 0.45, 0.70)),
    ("checker", (8.0, 0.30, 0.50)),
    ("checker", (1.0, 0.50, 0.62)),
    ("stripes", (0.0, 3.0, 0.38, 0.58)),
    ("stripes", (90.0, 3.0, 0.42, 0.62)),
    ("stripes", (45.0, 4.0, 0.35, 0.55)),
    ("stripes", (135.0, 2.0, 0.48, 0.66)),
    ("noise", (3.0, 0.30, 0.70, 1)),
    ("noise", (6.0, 0.35, 0.65, 2)),
    ("noise", (12.0, 0.25, 0.60, 3)),
    ("noise", (1.5, 0.40, 0.72, 4)),
    ("noise", (8.0, 0.45, 0.80, 5)),
    ("gradient", (0.0, 0.30, 0.70)),
    ("gradient", (90.0, 0.35, 0.75)),
    ("gradient", (45.0, 0.25, 0.65)),
    ("rings", (3.0, 0.38, 0.58)),
    ("rings", (6.0, 0.30, 0.52)),
    ("checker", (5.0, 0.55, 0.75)),
    ("stripes", (20.0, 5.0, 0.30, 0.52)),
    ("noise", (4.0, 0.20, 0.55, 6)),
    ("gradient", (180.0, 0.40, 0.78)),
    ("stripes", (70.0, 1.5, 0.44, 0.60)),
    ("noise", (2.0, 0.33, 0.66, 7)),
]
assert len(BACKGROUNDS) == 25


# ---------------------------------------------------------------------------
# Scene assembly

@dataclass(frozen=True)
class _Box:
    """Oriented box primitive: footprint half-extents in its local frame
    (x = width axis, y = length axis), z span, heading, shade intensity."""

    center: tuple[float, float]
    heading: float
    half_w: float
    half_l: float
    z0: float
    z1: float
    intensity: float
    object_id: int


def scene_boxes(world: WorldState) -> list[_Box]:
    boxes = []
    for spec, st in world.objects:
        if spec.kind == "tree":
            tl, tw, th = TREE_TRUNK_DIMS
            cl, cw, ch = TREE_CANOPY_DIMS
            boxes.append(_Box(st.position, st.heading, tw / 2, tl / 2,
                              0.0, th, TRUNK_INTENSITY, spec.id))
            boxes.append(_Box(st.position, st.heading, cw / 2, cl / 2,
                              th, th + ch, CANOPY_INTENSITY, spec.id))
        else:
            length, width, height = spec.dims
            boxes.append(_Box(st.position, st.heading, width / 2, length / 2,
                              0.0, height, COLOR_INTENSITY[spec.color_id], spec.id))
    return boxes


_GRID_CACHE: dict = {}


def _camera_grid(w: int, h: int, fov: int) -> np.ndarray:
    """Per-pixel (xc/zc, yc/zc, 1) camera-space directions, cached per
    (size, fov) since the zoom level comes from a small discrete set."""
    key = (w, h, fov)
    grid = _GRID_CACHE.get(key)
    if grid is None:
        fx, fy = focal_lengths(PtzState(fov=fov), w, h)
        us = (np.arange(w) + 0.5 - w / 2.0) / fx
        vs = (h / 2.0 - (np.arange(h) + 0.5)) / fy
        grid = np.empty((h, w, 3))
        grid[:, :, 0] = us[None, :]
        grid[:, :, 1] = vs[:, None]
        grid[:, :, 2] = 1.0
        grid.setflags(write=False)
        _GRID_CACHE[key] = grid
    return grid


def ray_directions(rig: CameraRig, ptz: PtzState) -> np.ndarray:
    """Directions through every pixel center, (h, w, 3), scaled so the
    forward component is exactly 1 (ray parameter t equals camera depth)."""
    w, h = rig.image_width, rig.image_height
    right, up, forward = camera_basis(ptz)
    basis = np.stack([right, up, forward])
    return _camera_grid(w, h, ptz.fov) @ basis


def _box_corners(box: _Box) -> np.ndarray:
    h = math.radians(box.heading)
    ax = np.array([math.sin(h), math.cos(h)])   # local y (length axis)
    ay = np.array([math.cos(h), -math.sin(h)])  # local x (width axis)
    corners = np.empty((8, 3))
    i = 0
    for sx in (-box.half_w, box.half_w):
        for sy in (-box.half_l, box.half_l):
            dx, dy = sx * ay + sy * ax
            for z in (box.z0, box.z1):
                corners[i] = (box.center[0] + dx, box.center[1] + dy, z)
                i += 1
    return corners


def _screen_rect(box: _Box, origin, basis, fx, fy, w, h):
    """Conservative pixel rectangle covering the box's projection, or None
    when fully off-screen; falls back to the full frame if any corner sits
    behind the image plane."""
    d = _box_corners(box) - origin
    cam = d @ basis.T
    if np.any(cam[:, 2] <= 1e-6):
        return (0, h, 0, w)
    u = w / 2.0 + fx * cam[:, 0] / cam[:, 2]
    v = h / 2.0 - fy * cam[:, 1] / cam[:, 2]
    x0 = max(0, int(math.floor(u.min() - 1.0)))
    x1 = min(w, int(math.ceil(u.max() + 1.0)))
    y0 = max(0, int(math.floor(v.min() - 1.0)))
    y1 = min(h, int(math.ceil(v.max() + 1.0)))
    if x0 >= x1 or y0 >= y1:
        return None
    return (y0, y1, x0, x1)


def _intersect_box(origin, dirs, box: _Box):
    """Slab test in the box's local frame. Returns (t, face_axis) with
    t = +inf where the ray misses."""
    h = math.radians(box.heading)
    ax = (math.sin(h), math.cos(h))   # local y (length axis)
    ay = (math.cos(h), -math.sin(h))  # local x (width axis)
    rel = (origin[0] - box.center[0], origin[1] - box.center[1])
    ox = rel[0] * ay[0] + rel[1] * ay[1]
    oy = rel[0] * ax[0] + rel[1] * ax[1]
    oz = origin[2]
    dx = dirs[..., 0] * ay[0] + dirs[..., 1] * ay[1]
    dy = dirs[..., 0] * ax[0] + dirs[..., 1] * ax[1]
    dz = dirs[..., 2]

    t_enter = np.full(dx.shape, -np.inf)
    t_exit = np.full(dx.shape, np.inf)
    face = np.zeros(dx.shape, dtype=np.int8)
    bounds = ((-box.half_w, box.half_w, ox, dx, 0),
              (-box.half_l, box.half_l, oy, dy, 1),
              (box.z0, box.z1, oz, dz, 2))
    for lo, hi, o, d, axis in bounds:
        d = np.where(np.abs(d) < 1e-12, 1e-12, d)
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        take = tmin > t_enter
        face = np.where(take, axis, face)
        t_enter = np.where(take, tmin, t_enter)
        t_exit = np.minimum(t_exit, tmax)
    hit = (t_enter <= t_exit) & (t_enter > 1e-6)
    return np.where(hit, t_enter, np.inf), face


def render(world: WorldState, rig: CameraRig, ptz: PtzState,
           cfg: RenderConfig, return_ids: bool = False):
    """Ray-cast one frame; nearest positive-depth hit per pixel wins.

    With return_ids, also returns the per-pixel hit-id buffer (object id,
    ID_GROUND, ID_WALL, or ID_NONE for sky).
    """
    w, h = rig.image_width, rig.image_height
    origin = np.asarray(rig.position, dtype=np.float64)
    dirs = ray_directions(rig, ptz)

    best_t = np.full((h, w), np.inf)
    color = np.full((h, w), cfg.sky_intensity)
    ids = np.full((h, w), ID_NONE, dtype=np.int32)

    # ground plane z = 0; horizontal rays (dz ~ 0) stay sky
    dz = dirs[:, :, 2]
    ghit = dz < -1e-12
    if np.any(ghit):
        t_g = -origin[2] / dz[ghit]
        gx = origin[0] + t_g * dirs[:, :, 0][ghit]
        gy = origin[1] + t_g * dirs[:, :, 1][ghit]
        best_t[ghit] = t_g
        color[ghit] = background_intensity(cfg.background_id, gx, gy)
        ids[ghit] = ID_GROUND

    if cfg.walls_visible:
        # planes x=0, x=70 (s along y) and y=0, y=70 (s along x)
        walls = ((0, 0.0), (0, FIELD_SIZE), (1, 0.0), (1, FIELD_SIZE))
        for axis, value in walls:
            d = np.where(np.abs(dirs[:, :, axis]) < 1e-12, 1e-12,
                         dirs[:, :, axis])
            t = (value - origin[axis]) / d
            pz = origin[2] + t * dirs[:, :, 2]
            s = origin[1 - axis] + t * dirs[:, :, 1 - axis]
            take = ((t > 1e-6) & (pz >= 0.0) & (pz <= WALL_HEIGHT)
                    & (s >= 0.0) & (s <= FIELD_SIZE) & (t < best_t))
            if np.any(take):
                shade = 0.15 + 0.8 * background_intensity(
                    cfg.background_id, s[take], pz[take] * 4.0)
                best_t[take] = t[take]
                color[take] = shade
                ids[take] = ID_WALL

    right, up, forward = camera_basis(ptz)
    basis = np.stack([right, up, forward])
    fx, fy = focal_lengths(ptz, w, h)
    shading = np.asarray(cfg.shading)
    for box in scene_boxes(world):
        rect = _screen_rect(box, origin, basis, fx, fy, w, h)
        if rect is None:
            continue
        y0, y1, x0, x1 = rect
        sub = (slice(y0, y1), slice(x0, x1))
        t, face = _intersect_box(origin, dirs[sub], box)
        take = t < best_t[sub]
        if np.any(take):
            best_t[sub][take] = t[take]
            color[sub][take] = box.intensity * shading[face[take]]
            ids[sub][take] = box.object_id

    frame = Frame(w, h, np.clip(color, 0.0, 1.0))
    if return_ids:
        return frame, ids
    return frame


def render_config_for(world: WorldState, sky: float = DEFAULT_SKY) -> RenderConfig:
    """Render settings implied by the world: variable-background scenes show
    textured boundary walls, fixed-background scenes hide them."""
    return RenderConfig(background_id=world.background_id,
                        walls_visible=world.scenario.background_mode == "variable",
                        sky_intensity=sky)


# ---------------------------------------------------------------------------
# Augmentations and resampling

def apply_augmentations(frame: Frame, cfg: AugmentationConfig,
                        rng: np.random.Generator) -> Frame:
    """Contrast, brightness, an optional shadow quadrilateral, then
    salt-pepper noise; a neutral config returns the frame unchanged."""
    p = frame.pixels
    if cfg.contrast_scale != 1.0:
        p = (p - 0.5) * cfg.contrast_scale + 0.5
    if cfg.brightness_delta != 0.0:
        p = p + cfg.brightness_delta
    if cfg.shadow_enabled:
        p = _darken_quad(p, rng)
    if cfg.salt_pepper_prob > 0.0:
        u = rng.random(p.shape)
        p = np.where(u < cfg.salt_pepper_prob / 2.0, 0.0, p)
        p = np.where((u >= cfg.salt_pepper_prob / 2.0)
                     & (u < cfg.salt_pepper_prob), 1.0, p)
    if p is frame.pixels:
        return frame
    return Frame(frame.width, frame.height, np.clip(p, 0.0, 1.0))


def _darken_quad(pixels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Multiply one random rotated rectangle by 0.6 (a cast shadow)."""
    h, w = pixels.shape
    cx = rng.uniform(0.2, 0.8) * w
    cy = rng.uniform(0.2, 0.8) * h
    hx = rng.uniform(0.1, 0.35) * w
    hy = rng.uniform(0.1, 0.35) * h
    ang = rng.uniform(0.0, math.pi)
    ys, xs = np.mgrid[0:h, 0:w]
    rx = (xs + 0.5 - cx) * math.cos(ang) + (ys + 0.5 - cy) * math.sin(ang)
    ry = -(xs + 0.5 - cx) * math.sin(ang) + (ys + 0.5 - cy) * math.cos(ang)
    mask = (np.abs(rx) <= hx) & (np.abs(ry) <= hy)
    return np.where(mask, pixels * 0.6, pixels)


def sample_augmentations(rng: np.random.Generator) -> AugmentationConfig:
    """Draw one concrete augmentation setting from the documented ranges."""
    return AugmentationConfig(
        salt_pepper_prob=float(rng.uniform(0.0, 0.04)),
        brightness_delta=float(rng.uniform(-0.3, 0.3)),
        contrast_scale=float(rng.uniform(0.7, 1.3)),
        shadow_enabled=bool(rng.random() < 0.5),
    )


def downsample(frame: Frame, out_w: int, out_h: int) -> Frame:
    """Box-filter mean over blocks; frame dims must be integer multiples."""
    if frame.width % out_w or frame.height % out_h:
        raise ValueError(
            f"cannot downsample {frame.width}x{frame.height} to {out_w}x{out_h}")
    bw = frame.width // out_w
    bh = frame.height // out_h
    p = frame.pixels.reshape(out_h, bh, out_w, bw).mean(axis=(1, 3))
    return Frame(out_w, out_h, p)
