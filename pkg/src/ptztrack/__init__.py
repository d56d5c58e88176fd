"""Deterministic pan-tilt-zoom tracking simulator and control stack:
procedural ray-cast rendering, exact bounding boxes, rule/Kalman baselines,
and from-scratch policy-gradient training."""

__version__ = "0.1.0"

from .camera import (BoundingBox, CameraRig, PtzAction, PtzState, Visibility,
                     apply_action, oracle_bbox, project_point, vertical_fov)
from .envs import EnvConfig, TrackingEnv, evaluate, run_episode
from .reward import EpisodeMetrics, RewardConfig, TrackingTask, step_reward
from .scene import SCENARIOS, ScenarioSpec, WorldState, build_scenario

__all__ = [
    "BoundingBox", "CameraRig", "PtzAction", "PtzState", "Visibility",
    "apply_action", "oracle_bbox", "project_point", "vertical_fov",
    "EnvConfig", "TrackingEnv", "evaluate", "run_episode",
    "EpisodeMetrics", "RewardConfig", "TrackingTask", "step_reward",
    "SCENARIOS", "ScenarioSpec", "WorldState", "build_scenario",
    "__version__",
]
