"""Step reward and episode metrics for PTZ tracking.

The step reward multiplies centering, relative size, and a clip penalty,
minus a small cost for moving the camera; losing the target costs a flat
penalty. Episode metrics aggregate tracking percentage, mean centering,
mean size, and the summed return.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .camera import BoundingBox, Visibility


@dataclass(frozen=True)
class RewardConfig:
    lost_penalty: float = 10.0       # L, subtracted when the target is lost
    clip_multiplier: float = 0.3     # M, applied when the box hits a border
    action_penalty: float = 0.01     # P, cost of changing a camera parameter
    penalize_only_on_change: bool = True

    def __post_init__(self):
        if self.lost_penalty <= 0:
            raise ValueError("lost_penalty must be > 0")
        if not 0 < self.clip_multiplier < 1:
            raise ValueError("clip_multiplier must be in (0, 1)")
        if self.action_penalty <= 0:
            raise ValueError("action_penalty must be > 0")


@dataclass(frozen=True)
class TrackingTask:
    """Which objects earn reward, and the dynamic-tasking context."""

    trackable_ids: frozenset
    subclass_of: dict = field(default_factory=dict)  # object id -> 0/1
    dt_enabled: bool = False
    ci: int | None = None  # contextual input, fixed per episode when dt

    def __post_init__(self):
        if self.dt_enabled:
            if self.ci not in (0, 1):
                raise ValueError("dt tasks need ci in {0, 1}")
            missing = [i for i in self.trackable_ids if i not in self.subclass_of]
            if missing:
                raise ValueError(f"trackables without a subclass: {missing}")


@dataclass(frozen=True)
class RewardBreakdown:
    center_x: float = 0.0
    center_y: float = 0.0
    obj_size: float = 0.0
    clip_factor: float = 1.0
    condition: bool = False
    action_changed: bool = False
    reward: float = 0.0


def centering_terms(box: BoundingBox, width: int, height: int) -> tuple[float, float]:
    """Closeness of the box center to the image center on each axis:
    1 at dead center, 0 at the border."""
    x, y = box.center
    cx = 1.0 - abs(width / 2.0 - x) / (width / 2.0)
    cy = 1.0 - abs(height / 2.0 - y) / (height / 2.0)
    return cx, cy


def obj_size(box: BoundingBox, width: int, height: int) -> float:
    """Box area as a fraction of the image area."""
    return box.area / (width * height)


def clip_factor(vis: Visibility, multiplier: float) -> float:
    return multiplier if vis.clipped else 1.0


def condition(vis: Visibility, object_id: int, task: TrackingTask) -> bool:
    """Whether this step earns the composed reward rather than the penalty."""
    if not vis.visible:
        return False
    if not task.dt_enabled:
        return object_id in task.trackable_ids
    if object_id not in task.trackable_ids:
        return False
    return task.subclass_of[object_id] == task.ci


def step_reward(vis: Visibility, object_id: int, task: TrackingTask,
                cfg: RewardConfig, action_changed: bool,
                width: int, height: int) -> RewardBreakdown:
    if not condition(vis, object_id, task):
        return RewardBreakdown(condition=False, action_changed=action_changed,
                               reward=-cfg.lost_penalty)
    cx, cy = centering_terms(vis.clipped_box, width, height)
    size = obj_size(vis.clipped_box, width, height)
    clip = clip_factor(vis, cfg.clip_multiplier)
    penalty = cfg.action_penalty if (action_changed
                                     or not cfg.penalize_only_on_change) else 0.0
    return RewardBreakdown(center_x=cx, center_y=cy, obj_size=size,
                           clip_factor=clip, condition=True,
                           action_changed=action_changed,
                           reward=cx * cy * size * clip - penalty)


@dataclass
class EpisodeMetrics:
    """Running aggregates over one episode; center/size means are over
    visible steps only."""

    steps: int = 0
    visible_steps: int = 0
    episode_return: float = 0.0
    _sum_cx: float = 0.0
    _sum_cy: float = 0.0
    _sum_size: float = 0.0

    @property
    def pct_tracking(self) -> float:
        return 100.0 * self.visible_steps / self.steps if self.steps else 0.0

    @property
    def mean_center_x(self) -> float:
        return self._sum_cx / self.visible_steps if self.visible_steps else 0.0

    @property
    def mean_center_y(self) -> float:
        return self._sum_cy / self.visible_steps if self.visible_steps else 0.0

    @property
    def mean_obj_size(self) -> float:
        return self._sum_size / self.visible_steps if self.visible_steps else 0.0

    def as_dict(self) -> dict:
        return {
            "pct_tracking": self.pct_tracking,
            "center_x": self.mean_center_x,
            "center_y": self.mean_center_y,
            "obj_size": self.mean_obj_size,
            "episode_return": self.episode_return,
            "steps": self.steps,
        }


METRIC_NAMES = ("pct_tracking", "center_x", "center_y", "obj_size")


def accumulate(metrics: EpisodeMetrics, breakdown: RewardBreakdown,
               visible: bool) -> EpisodeMetrics:
    """Fold one step into the running metrics, in place."""
    metrics.steps += 1
    metrics.episode_return += breakdown.reward
    if visible:
        metrics.visible_steps += 1
        metrics._sum_cx += breakdown.center_x
        metrics._sum_cy += breakdown.center_y
        metrics._sum_size += breakdown.obj_size
    return metrics
