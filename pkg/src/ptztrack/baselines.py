"""Multi-stage baseline pipelines: constant-velocity Kalman tracking over
boxes, a dead-zone rule controller, relative-location conversion, and a
random-search tuner scored by episode return."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .camera import NOOP_ACTION, BoundingBox, PtzAction
from .envs import Controller, EnvConfig, run_episode
from .ioutil import atomic_write_text
from .scene import make_stream


# ---------------------------------------------------------------------------
# Kalman filter over (center, area, aspect) box state

@dataclass(frozen=True)
class KalmanConfig:
    """Process/measurement noise in (u, v, s, r) measurement space; the
    7-state vector appends (u, v, s) velocities. Aspect r has no velocity."""

    q_pos: float = 1.0
    q_area: float = 1.0
    q_aspect: float = 0.01
    q_vel: float = 0.01
    r_pos: float = 1.0
    r_area: float = 10.0
    r_aspect: float = 0.01
    init_pos_var: float = 10.0
    init_vel_var: float = 1.0e4

    def q_matrix(self) -> np.ndarray:
        return np.diag([self.q_pos, self.q_pos, self.q_area, self.q_aspect,
                        self.q_vel, self.q_vel, self.q_vel])

    def r_matrix(self) -> np.ndarray:
        return np.diag([self.r_pos, self.r_pos, self.r_area, self.r_aspect])


NOISELESS_KALMAN = KalmanConfig(q_pos=0.0, q_area=0.0, q_aspect=0.0,
                                q_vel=0.0, r_pos=0.0, r_area=0.0,
                                r_aspect=0.0, init_pos_var=0.0)


def box_to_measurement(box: BoundingBox) -> np.ndarray:
    u, v = box.center
    s = box.area
    r = box.width / box.height if box.height > 0 else 1.0
    return np.array([u, v, s, r])


def measurement_to_box(z) -> BoundingBox:
    u, v, s, r = float(z[0]), float(z[1]), float(z[2]), float(z[3])
    s = max(s, 1e-9)
    r = max(r, 1e-9)
    w = np.sqrt(s * r)
    h = s / w
    return BoundingBox(u - w / 2.0, v - h / 2.0, u + w / 2.0, v + h / 2.0)


class KalmanBoxTracker:
    """Single-target constant-velocity tracker on (u, v, s, r)."""

    def __init__(self, cfg: KalmanConfig = KalmanConfig()):
        self.cfg = cfg
        self.initialized = False
        self.x = np.zeros(7)
        self.P = np.zeros((7, 7))
        self.F = np.eye(7)
        self.F[0, 4] = self.F[1, 5] = self.F[2, 6] = 1.0
        self.H = np.eye(4, 7)

    def predict(self, dt_steps: int = 1) -> BoundingBox:
        """Advance the state dt_steps steps and return the predicted box."""
        if not self.initialized:
            raise RuntimeError("predict() before the first measurement")
        q = self.cfg.q_matrix()
        for _ in range(dt_steps):
            self.x = self.F @ self.x
            self.P = self.F @ self.P @ self.F.T + q
        return self.box()

    def update(self, box: BoundingBox | None) -> "KalmanBoxTracker":
        """Fold in one measurement; None (a miss) leaves the prediction as
        the current estimate."""
        if box is None:
            return self
        z = box_to_measurement(box)
        if not self.initialized:
            c = self.cfg
            self.x[:4] = z
            self.x[4:] = 0.0
            self.P = np.diag([c.init_pos_var] * 4 + [c.init_vel_var] * 3)
            self.initialized = True
            return self
        r = self.cfg.r_matrix()
        y = z - self.H @ self.x
        s = self.H @ self.P @ self.H.T + r
        k = self.P @ self.H.T @ np.linalg.pinv(s)
        self.x = self.x + k @ y
        ikh = np.eye(7) - k @ self.H
        # Joseph form keeps P symmetric PSD over long runs
        self.P = ikh @ self.P @ ikh.T + k @ r @ k.T
        self.P = (self.P + self.P.T) / 2.0
        return self

    def box(self) -> BoundingBox:
        return measurement_to_box(self.x[:4])


# ---------------------------------------------------------------------------
# Rule-based controller

@dataclass(frozen=True)
class ControllerParams:
    dead_zone_x: float = 8.0
    dead_zone_y: float = 8.0
    zoom_low: float = 0.10
    zoom_high: float = 0.35
    clip_zoom_out: bool = True

    def __post_init__(self):
        if not 0 < self.zoom_low < self.zoom_high < 1:
            raise ValueError("need 0 < zoom_low < zoom_high < 1")
        if self.dead_zone_x < 0 or self.dead_zone_y < 0:
            raise ValueError("dead zones must be >= 0")

    def save(self, path: str) -> None:
        atomic_write_text(path, json.dumps(asdict(self), indent=2) + "\n")

    @classmethod
    def load(cls, path: str) -> "ControllerParams":
        with open(path, "r", encoding="utf-8") as f:
            return cls(**json.load(f))


def rule_control(box: BoundingBox | None, vis_clipped: bool,
                 params: ControllerParams, width: int, height: int) -> PtzAction:
    """Dead-zone pan/tilt plus threshold zoom from an estimated box.

    With no track at all, zoom out to reacquire. Stateless: identical
    inputs give identical actions.
    """
    if box is None:
        return PtzAction(0, 0, 1)
    u, v = box.center
    pan = 0
    if u > width / 2.0 + params.dead_zone_x:
        pan = 2
    elif u < width / 2.0 - params.dead_zone_x:
        pan = -2
    tilt = 0
    if v > height / 2.0 + params.dead_zone_y:
        tilt = -2  # object low in the image: look further down
    elif v < height / 2.0 - params.dead_zone_y:
        tilt = 2
    ratio = box.area / (width * height)
    fov = 0
    if (vis_clipped and params.clip_zoom_out) or ratio > params.zoom_high:
        fov = 1
    elif ratio < params.zoom_low and not vis_clipped:
        fov = -1
    return PtzAction(pan, tilt, fov)


# ---------------------------------------------------------------------------
# Relative location

@dataclass(frozen=True)
class RelativeLocation:
    rel_x: float  # [-1, 1], center offset over half-width
    rel_y: float  # [-1, 1]
    rel_zoom: float  # [0, 1], box area over image area


def relloc_from_bbox(box: BoundingBox, width: int, height: int) -> RelativeLocation:
    x, y = box.center
    return RelativeLocation(
        rel_x=(x - width / 2.0) / (width / 2.0),
        rel_y=(y - height / 2.0) / (height / 2.0),
        rel_zoom=box.area / (width * height),
    )


def bbox_from_relloc(rel: RelativeLocation, width: int, height: int,
                     aspect: float = 1.0) -> BoundingBox:
    """Inverse of relloc_from_bbox for a given box aspect ratio."""
    u = width / 2.0 * (1.0 + rel.rel_x)
    v = height / 2.0 * (1.0 + rel.rel_y)
    area = max(rel.rel_zoom, 0.0) * width * height
    w = np.sqrt(area * aspect)
    h = np.sqrt(area / aspect) if aspect > 0 else 0.0
    return BoundingBox(u - w / 2.0, v - h / 2.0, u + w / 2.0, v + h / 2.0)


# ---------------------------------------------------------------------------
# Simple controllers

class ZeroController(Controller):
    observation_kind = "none"

    def act(self, inp) -> PtzAction:
        return NOOP_ACTION


class RandomController(Controller):
    observation_kind = "none"

    def __init__(self):
        self._rng = make_stream(0, "controller")

    def reset(self, seed: int) -> None:
        self._rng = make_stream(seed, "controller")

    def act(self, inp) -> PtzAction:
        idx = self._rng.integers(0, 3, size=3)
        return PtzAction.from_indices(int(idx[0]), int(idx[1]), int(idx[2]))


class KalmanRuleController(Controller):
    """Oracle boxes -> Kalman track -> dead-zone rules. The track is
    dropped after max_age consecutive misses and the camera zooms out to
    reacquire."""

    observation_kind = "oracle"

    def __init__(self, params: ControllerParams = ControllerParams(),
                 kalman_cfg: KalmanConfig = KalmanConfig(),
                 image_size: int = 120, max_age: int = 20):
        self.params = params
        self.kalman_cfg = kalman_cfg
        self.image_size = image_size
        self.max_age = max_age
        self.reset(0)

    def reset(self, seed: int) -> None:
        self.track = KalmanBoxTracker(self.kalman_cfg)
        self.misses = 0

    def act(self, inp) -> PtzAction:
        vis, _ci = inp
        if self.track.initialized:
            self.track.predict(1)
        if vis.visible:
            self.track.update(vis.clipped_box)
            self.misses = 0
        else:
            self.misses += 1
            if self.misses > self.max_age:
                self.track = KalmanBoxTracker(self.kalman_cfg)
        est = self.track.box() if self.track.initialized else None
        clipped = vis.clipped if vis.visible else False
        return rule_control(est, clipped, self.params,
                            self.image_size, self.image_size)


# ---------------------------------------------------------------------------
# Random-search tuning (objective: mean episode return)

SEARCH_SPACE = {
    "dead_zone_x": (0.0, 24.0),
    "dead_zone_y": (0.0, 24.0),
    "zoom_low": (0.02, 0.30),
    "zoom_high_margin": (0.05, 0.50),  # zoom_high = zoom_low + margin
}


def sample_params(rng: np.random.Generator) -> ControllerParams:
    lo, hi = SEARCH_SPACE["dead_zone_x"]
    dzx = float(rng.uniform(lo, hi))
    lo, hi = SEARCH_SPACE["dead_zone_y"]
    dzy = float(rng.uniform(lo, hi))
    lo, hi = SEARCH_SPACE["zoom_low"]
    zl = float(rng.uniform(lo, hi))
    lo, hi = SEARCH_SPACE["zoom_high_margin"]
    zh = min(zl + float(rng.uniform(lo, hi)), 0.95)
    clip_out = bool(rng.random() < 0.5)
    return ControllerParams(dead_zone_x=dzx, dead_zone_y=dzy, zoom_low=zl,
                            zoom_high=zh, clip_zoom_out=clip_out)


def tune_controller(controller_factory, cfg: EnvConfig, budget: int,
                    episodes_per_trial: int, seed: int,
                    default_params: ControllerParams = ControllerParams()):
    """Uniform random search over the rule-controller parameters.

    Every trial is scored as the mean episode return over the same fixed
    seed set, so trials are directly comparable; ties keep the earlier
    trial. Returns (best_params, history) where history rows are
    (trial, params, score, best_so_far).
    """
    rng = make_stream(seed, "tuner")
    episode_seeds = [seed * 1_000 + 1 + i for i in range(episodes_per_trial)]

    def score(params: ControllerParams) -> float:
        total = 0.0
        for ep_seed in episode_seeds:
            controller = controller_factory(params)
            _, metrics = run_episode(controller, cfg, ep_seed)
            total += metrics.episode_return
        return total / len(episode_seeds)

    best_params = default_params
    best_score = -np.inf
    history = []
    for trial in range(budget):
        params = sample_params(rng)
        s = score(params)
        if s > best_score:
            best_score = s
            best_params = params
        history.append((trial, params, s, best_score))
    return best_params, history
