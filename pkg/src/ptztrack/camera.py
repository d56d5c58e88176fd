"""Pan-tilt-zoom camera model: state with limits, discrete action deltas,
pinhole projection, and exact bounding boxes from projected box corners."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PAN_LIMITS = (-90, 90)
TILT_LIMITS = (-60, 10)
FOV_LIMITS = (5, 90)

PAN_DELTAS = (-2, 0, 2)
TILT_DELTAS = (-2, 0, 2)
FOV_DELTAS = (-1, 0, 1)

# Initial wide view: camera at the south mid-boundary sees the whole field.
INITIAL_PAN = 0
INITIAL_TILT = -13
INITIAL_FOV = 90

BEHIND_EPS = 1e-6


@dataclass(frozen=True)
class PtzState:
    """Camera orientation and zoom, all in integer degrees.

    pan 0 faces +y into the field, positive rotates the view toward +x.
    tilt 0 is horizontal, negative looks down. fov is the horizontal
    field of view; zooming in means decreasing fov.
    """

    pan: int = INITIAL_PAN
    tilt: int = INITIAL_TILT
    fov: int = INITIAL_FOV

    def within_limits(self) -> bool:
        return (PAN_LIMITS[0] <= self.pan <= PAN_LIMITS[1]
                and TILT_LIMITS[0] <= self.tilt <= TILT_LIMITS[1]
                and FOV_LIMITS[0] <= self.fov <= FOV_LIMITS[1])


@dataclass(frozen=True)
class PtzAction:
    """One discrete camera command: +-2 degrees pan/tilt, +-1 degree zoom."""

    pan_delta: int = 0
    tilt_delta: int = 0
    fov_delta: int = 0

    def __post_init__(self):
        if self.pan_delta not in PAN_DELTAS:
            raise ValueError(f"pan_delta must be one of {PAN_DELTAS}")
        if self.tilt_delta not in TILT_DELTAS:
            raise ValueError(f"tilt_delta must be one of {TILT_DELTAS}")
        if self.fov_delta not in FOV_DELTAS:
            raise ValueError(f"fov_delta must be one of {FOV_DELTAS}")

    @classmethod
    def from_indices(cls, pan_idx: int, tilt_idx: int, fov_idx: int) -> "PtzAction":
        """Decode the wire encoding where each component index in {0,1,2}
        means {negative, none, positive}."""
        return cls(PAN_DELTAS[pan_idx], TILT_DELTAS[tilt_idx], FOV_DELTAS[fov_idx])

    def to_indices(self) -> tuple[int, int, int]:
        return (PAN_DELTAS.index(self.pan_delta),
                TILT_DELTAS.index(self.tilt_delta),
                FOV_DELTAS.index(self.fov_delta))


NOOP_ACTION = PtzAction(0, 0, 0)

ALL_ACTIONS = tuple(
    PtzAction(p, t, f) for p in PAN_DELTAS for t in TILT_DELTAS for f in FOV_DELTAS
)


@dataclass(frozen=True)
class CameraRig:
    """Fixed camera placement and image raster size."""

    position: tuple[float, float, float] = (35.0, 0.0, 8.0)
    image_width: int = 120
    image_height: int = 120


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned 2-D box in continuous pixel coordinates, corner origin
    (x right, y down)."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)


EMPTY_BOX = BoundingBox(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Visibility:
    """Result of projecting an object into the image.

    raw_box is the unclipped hull of the projected corners; clipped_box is
    its intersection with the image rectangle. clipped is true whenever the
    raw box touches or exceeds any image border.
    """

    visible: bool
    raw_box: BoundingBox = EMPTY_BOX
    clipped_box: BoundingBox = EMPTY_BOX
    clipped: bool = False


def apply_action(ptz: PtzState, action: PtzAction) -> tuple[PtzState, bool]:
    """Apply one action with clamping to the camera limits.

    Returns the new state plus a flag that is true iff any component
    actually changed after clamping.
    """
    new = PtzState(
        pan=_clamp(ptz.pan + action.pan_delta, PAN_LIMITS),
        tilt=_clamp(ptz.tilt + action.tilt_delta, TILT_LIMITS),
        fov=_clamp(ptz.fov + action.fov_delta, FOV_LIMITS),
    )
    return new, new != ptz


def _clamp(v, limits):
    return max(limits[0], min(limits[1], v))


def vertical_fov(fov_h: float, width: int, height: int) -> float:
    """Vertical field of view from the horizontal one and the aspect ratio."""
    return fov_h * height / width


def camera_basis(ptz: PtzState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right/up/forward unit vectors of the camera frame in world space."""
    psi = math.radians(ptz.pan)
    theta = math.radians(ptz.tilt)
    right = np.array([math.cos(psi), -math.sin(psi), 0.0])
    forward = np.array([math.sin(psi) * math.cos(theta),
                        math.cos(psi) * math.cos(theta),
                        math.sin(theta)])
    up = np.cross(right, forward)
    return right, up, forward


def focal_lengths(ptz: PtzState, width: int, height: int) -> tuple[float, float]:
    fov_v = vertical_fov(ptz.fov, width, height)
    fx = (width / 2.0) / math.tan(math.radians(ptz.fov) / 2.0)
    fy = (height / 2.0) / math.tan(math.radians(fov_v) / 2.0)
    return fx, fy


def project_point(rig: CameraRig, ptz: PtzState, point) -> tuple[float, float] | None:
    """Pinhole projection of one world point to pixel coordinates.

    Returns None when the point is at or behind the image plane.
    """
    right, up, forward = camera_basis(ptz)
    d = np.asarray(point, dtype=float) - np.asarray(rig.position)
    xc = float(d @ right)
    yc = float(d @ up)
    zc = float(d @ forward)
    if zc <= BEHIND_EPS:
        return None
    fx, fy = focal_lengths(ptz, rig.image_width, rig.image_height)
    u = rig.image_width / 2.0 + fx * xc / zc
    v = rig.image_height / 2.0 - fy * yc / zc
    return (u, v)


def ray_through_pixel(rig: CameraRig, ptz: PtzState, u: float, v: float) -> np.ndarray:
    """World-space direction of the viewing ray through pixel (u, v); the
    exact inverse of project_point, scaled so the forward component is 1."""
    right, up, forward = camera_basis(ptz)
    fx, fy = focal_lengths(ptz, rig.image_width, rig.image_height)
    xc = (u - rig.image_width / 2.0) / fx
    yc = (rig.image_height / 2.0 - v) / fy
    return xc * right + yc * up + forward


def box_corners(position, heading_deg: float, dims) -> np.ndarray:
    """The 8 corners of an oriented box resting on the ground.

    The footprint (length x width) is rotated by the heading about the
    object's (x, y) position; z spans [0, height]. heading 0 points the
    length axis along +y, matching the motion convention.
    """
    length, width, height = dims
    h = math.radians(heading_deg)
    # length axis along the heading direction, width axis perpendicular
    ax = np.array([math.sin(h), math.cos(h)])
    ay = np.array([math.cos(h), -math.sin(h)])
    cx, cy = float(position[0]), float(position[1])
    corners = np.empty((8, 3))
    i = 0
    for sl in (-0.5, 0.5):
        for sw in (-0.5, 0.5):
            dx, dy = sl * length * ax + sw * width * ay
            for z in (0.0, height):
                corners[i] = (cx + dx, cy + dy, z)
                i += 1
    return corners


def project_points(rig: CameraRig, ptz: PtzState, points: np.ndarray):
    """Vectorized projection of an (n, 3) array. Returns (uv array, all_in_front)."""
    right, up, forward = camera_basis(ptz)
    d = np.asarray(points, dtype=float) - np.asarray(rig.position)
    xc = d @ right
    yc = d @ up
    zc = d @ forward
    in_front = bool(np.all(zc > BEHIND_EPS))
    if not in_front:
        return None, False
    fx, fy = focal_lengths(ptz, rig.image_width, rig.image_height)
    u = rig.image_width / 2.0 + fx * xc / zc
    v = rig.image_height / 2.0 - fy * yc / zc
    return np.stack([u, v], axis=1), True


def bbox_visibility(rig: CameraRig, ptz: PtzState, corners: np.ndarray) -> Visibility:
    """Visibility from a set of 3-D corner points.

    All corners must be in front of the camera for the object to count as
    visible; the raw box is the axis-aligned hull of the projected corners
    and must overlap the image by at least one square pixel.
    """
    uv, in_front = project_points(rig, ptz, corners)
    if not in_front:
        return Visibility(visible=False)
    raw = BoundingBox(float(uv[:, 0].min()), float(uv[:, 1].min()),
                      float(uv[:, 0].max()), float(uv[:, 1].max()))
    w, h = rig.image_width, rig.image_height
    cxmin = min(max(raw.xmin, 0.0), float(w))
    cymin = min(max(raw.ymin, 0.0), float(h))
    cxmax = min(max(raw.xmax, 0.0), float(w))
    cymax = min(max(raw.ymax, 0.0), float(h))
    clipped_box = BoundingBox(cxmin, cymin, cxmax, cymax)
    clipped = raw.xmin <= 0.0 or raw.ymin <= 0.0 or raw.xmax >= w or raw.ymax >= h
    visible = clipped_box.area >= 1.0
    return Visibility(visible=visible, raw_box=raw, clipped_box=clipped_box,
                      clipped=clipped)


def oracle_bbox(rig: CameraRig, ptz: PtzState, spec, state) -> Visibility:
    """Exact bounding box of a scene object from its projected 3-D corners."""
    corners = box_corners(state.position, state.heading, spec.dims)
    return bbox_visibility(rig, ptz, corners)
