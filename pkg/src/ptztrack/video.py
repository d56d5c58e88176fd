"""Virtual pan-tilt-zoom over recorded frame sequences: camera actions move
and resize a square crop window, which is resampled into the standard
policy observation."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, replace

import numpy as np

from .camera import PtzAction
from .envs import Observation
from .ioutil import read_pnm, write_csv, write_pgm
from .render import Frame

MIN_CROP = 16.0
LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class VideoPtzConfig:
    fov_full: float = 90.0  # assumed horizontal field of view of the full frame
    frame_w: int = 0
    frame_h: int = 0
    obs_size: int = 120

    def __post_init__(self):
        if not 0 < self.fov_full < 180:
            raise ValueError("fov_full must be in (0, 180)")


@dataclass(frozen=True)
class CropWindow:
    """Square sub-window in full-frame pixel coordinates."""

    cx: float
    cy: float
    w: float

    @property
    def h(self) -> float:
        return self.w


def clamp_crop(crop: CropWindow, cfg: VideoPtzConfig) -> CropWindow:
    w = min(max(crop.w, MIN_CROP), float(min(cfg.frame_w, cfg.frame_h)))
    cx = min(max(crop.cx, w / 2.0), cfg.frame_w - w / 2.0)
    cy = min(max(crop.cy, w / 2.0), cfg.frame_h - w / 2.0)
    return CropWindow(cx, cy, w)


def apply_action_to_crop(crop: CropWindow, action: PtzAction,
                         cfg: VideoPtzConfig) -> CropWindow:
    """Linear degrees-to-pixels mapping via the assumed full-frame field of
    view; tilting down moves the window down the frame. The result is
    clamped inside the frame and above the minimum size."""
    px_per_deg_x = cfg.frame_w / cfg.fov_full
    px_per_deg_y = cfg.frame_h / cfg.fov_full
    cx = crop.cx + action.pan_delta * px_per_deg_x
    cy = crop.cy - action.tilt_delta * px_per_deg_y
    w = crop.w + action.fov_delta * px_per_deg_x
    return clamp_crop(CropWindow(cx, cy, w), cfg)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """(h, w) stays as-is; (h, w, 3) converts by the standard luma weights."""
    arr = image.astype(np.float64) / 255.0
    if arr.ndim == 2:
        return arr
    return LUMA[0] * arr[:, :, 0] + LUMA[1] * arr[:, :, 1] + LUMA[2] * arr[:, :, 2]


def bilinear_resize(src: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resampling; identity when sizes match."""
    h, w = src.shape
    if (w, h) == (out_w, out_h):
        return src.copy()
    sx = w / out_w
    sy = h / out_h
    xs = (np.arange(out_w) + 0.5) * sx - 0.5
    ys = (np.arange(out_h) + 0.5) * sy - 0.5
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def extract_observation(image: np.ndarray, crop: CropWindow,
                        cfg: VideoPtzConfig) -> Observation:
    """Crop, grayscale, and resize one frame into a policy observation."""
    gray = to_grayscale(image)
    h, w = gray.shape
    half = crop.w / 2.0
    x0 = int(round(crop.cx - half))
    y0 = int(round(crop.cy - half))
    side = max(int(round(crop.w)), 1)
    x0 = min(max(x0, 0), w - side)
    y0 = min(max(y0, 0), h - side)
    window = gray[y0:y0 + side, x0:x0 + side]
    resized = bilinear_resize(window, cfg.obs_size, cfg.obs_size)
    frame = Frame(cfg.obs_size, cfg.obs_size, np.clip(resized, 0.0, 1.0))
    return Observation(image=frame.quantized(), ci=None)


_FRAME_RE = re.compile(r"frame_(\d+)\.(pgm|ppm)$")


def list_frames(directory: str) -> list[str]:
    """Numbered frame files (frame_000001.pgm / .ppm) in index order."""
    found = []
    for name in os.listdir(directory):
        m = _FRAME_RE.match(name)
        if m:
            found.append((int(m.group(1)), name))
    found.sort()
    return [os.path.join(directory, name) for _, name in found]


def run_video_episode(frames_dir: str, init_crop: CropWindow, controller,
                      cfg: VideoPtzConfig, out_csv: str | None = None,
                      out_frames_dir: str | None = None):
    """Drive the crop window with a controller across a frame sequence.

    Returns the list of (frame_index, crop, action) entries; optionally
    writes the crop trace CSV and the observation frames."""
    paths = list_frames(frames_dir)
    if not paths:
        raise FileNotFoundError(f"no frame_*.pgm/ppm files in {frames_dir}")
    first = read_pnm(paths[0])
    h, w = first.shape[:2]
    cfg = replace(cfg, frame_w=w, frame_h=h)
    crop = clamp_crop(init_crop, cfg)
    controller.reset(0)

    trace = []
    for index, path in enumerate(paths):
        image = first if index == 0 else read_pnm(path)
        obs = extract_observation(image, crop, cfg)
        action = controller.act(obs)
        trace.append((index, crop, action))
        if out_frames_dir is not None:
            os.makedirs(out_frames_dir, exist_ok=True)
            pix = np.clip(np.rint(obs.image.pixels * 255.0), 0, 255)
            write_pgm(os.path.join(out_frames_dir, f"frame_{index:06d}.pgm"),
                      pix.astype(np.uint8))
        crop = apply_action_to_crop(crop, action, cfg)

    if out_csv is not None:
        rows = [[i, c.cx, c.cy, c.w, c.h, a.pan_delta, a.tilt_delta,
                 a.fov_delta] for i, c, a in trace]
        write_csv(out_csv, ["frame_index", "cx", "cy", "w", "h", "pan_delta",
                            "tilt_delta", "fov_delta"], rows)
    return trace
