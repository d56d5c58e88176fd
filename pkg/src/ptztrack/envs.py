"""The tracking environment: reset/step loop, observation assembly,
trace recording, and batch evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import reward as rw
from .camera import (CameraRig, PtzAction, PtzState, Visibility, apply_action,
                     oracle_bbox)
from .ioutil import read_csv, write_csv
from .render import (Frame, apply_augmentations, downsample, render,
                     render_config_for, sample_augmentations)
from .scene import (ScenarioSpec, build_scenario, eval_variation, get_scenario,
                    reposition_target, retarget_subclass, step_world)

DEFAULT_EPISODE_LEN = 2000
DEFAULT_STEP_PERIOD = 0.030
DEFAULT_OBS_SIZE = 120
DEFAULT_RENDER_SIZE = 240
DEFAULT_CAMERA_HEIGHT = 8.0
MAX_PLACEMENT_DRAWS = 100


class PlacementError(RuntimeError):
    """Raised when no visible initial placement exists for the target;
    indicates a broken rig or limit configuration."""


class EpisodeDone(RuntimeError):
    """Raised on step() after the episode already ended."""


@dataclass(frozen=True)
class EnvConfig:
    scenario: ScenarioSpec
    episode_len: int = DEFAULT_EPISODE_LEN
    step_period: float = DEFAULT_STEP_PERIOD
    reward_cfg: rw.RewardConfig = field(default_factory=rw.RewardConfig)
    obs_size: int = DEFAULT_OBS_SIZE
    render_size: int = DEFAULT_RENDER_SIZE
    training_mode: bool = False
    max_consecutive_lost: int = 50
    camera_height: float = DEFAULT_CAMERA_HEIGHT
    variation: str = "as_trained"

    def __post_init__(self):
        if self.episode_len <= 0:
            raise ValueError("episode_len must be > 0")
        if self.render_size % self.obs_size:
            raise ValueError("obs_size must divide render_size")


def make_env_config(scenario_name: str, **overrides) -> EnvConfig:
    return EnvConfig(scenario=get_scenario(scenario_name), **overrides)


@dataclass(frozen=True)
class Observation:
    image: Frame | None
    ci: int | None = None


@dataclass(frozen=True)
class StepInfo:
    visibility: Visibility
    ptz: PtzState
    breakdown: rw.RewardBreakdown
    ci: int | None


@dataclass(frozen=True)
class StepResult:
    obs: Observation
    reward: float
    done: bool
    info: StepInfo


@dataclass
class StepRecord:
    step: int
    ptz: PtzState
    action: PtzAction
    visible: bool
    box: tuple[float, float, float, float]  # clipped box, in-image coords
    clipped: bool
    reward: float
    ci: int | None


@dataclass
class EpisodeTrace:
    scenario_id: str
    seed: int
    variation: str = "as_trained"
    records: list = field(default_factory=list)

    def to_csv(self, path: str) -> None:
        header = ["step", "pan", "tilt", "fov", "pan_delta", "tilt_delta",
                  "fov_delta", "visible", "xmin", "ymin", "xmax", "ymax",
                  "clipped", "reward", "ci"]
        rows = []
        for r in self.records:
            rows.append([r.step, r.ptz.pan, r.ptz.tilt, r.ptz.fov,
                         r.action.pan_delta, r.action.tilt_delta,
                         r.action.fov_delta, r.visible,
                         r.box[0], r.box[1], r.box[2], r.box[3],
                         r.clipped, r.reward,
                         "" if r.ci is None else r.ci])
        write_csv(path, header, rows, comments=[
            f"scenario={self.scenario_id}",
            f"seed={self.seed}",
            f"variation={self.variation}",
        ])

    @classmethod
    def from_csv(cls, path: str) -> "EpisodeTrace":
        comments, header, rows = read_csv(path)
        meta = dict(c.split("=", 1) for c in comments if "=" in c)
        trace = cls(scenario_id=meta.get("scenario", ""),
                    seed=int(meta.get("seed", "0")),
                    variation=meta.get("variation", "as_trained"))
        col = {name: i for i, name in enumerate(header)}
        for row in rows:
            trace.records.append(StepRecord(
                step=int(row[col["step"]]),
                ptz=PtzState(int(row[col["pan"]]), int(row[col["tilt"]]),
                             int(row[col["fov"]])),
                action=PtzAction(int(row[col["pan_delta"]]),
                                 int(row[col["tilt_delta"]]),
                                 int(row[col["fov_delta"]])),
                visible=row[col["visible"]] == "1",
                box=(float(row[col["xmin"]]), float(row[col["ymin"]]),
                     float(row[col["xmax"]]), float(row[col["ymax"]])),
                clipped=row[col["clipped"]] == "1",
                reward=float(row[col["reward"]]),
                ci=None if row[col["ci"]] == "" else int(row[col["ci"]]),
            ))
        return trace


class TrackingEnv:
    """One tracking episode at a time; deterministic given (config, seed,
    action sequence). Rendering can be disabled for pipelines that consume
    oracle boxes only."""

    def __init__(self, cfg: EnvConfig, render_enabled: bool = True):
        self.cfg = cfg
        self.render_enabled = render_enabled
        pos = (35.0, 0.0, cfg.camera_height)
        self.obs_rig = CameraRig(pos, cfg.obs_size, cfg.obs_size)
        self.render_rig = CameraRig(pos, cfg.render_size, cfg.render_size)
        self.world = None
        self.ptz = PtzState()
        self.task = None
        self.trace = None
        self.metrics = None
        self.last_visibility = None
        self.steps = 0
        self.done = True
        self._consecutive_lost = 0

    # -- episode lifecycle -------------------------------------------------

    def reset(self, seed: int) -> Observation:
        cfg = self.cfg
        world = build_scenario(cfg.scenario, seed)
        ci = None
        if cfg.scenario.dt_enabled:
            ci = int(world.rng("task").integers(0, 2))
            retarget_subclass(world, ci)
        if cfg.variation != "as_trained":
            world = eval_variation(world, cfg.variation)

        self.ptz = PtzState()
        self._ensure_initially_visible(world)

        self.world = world
        self.ci = ci
        self.task = rw.TrackingTask(
            trackable_ids=frozenset(sp.id for sp, _ in world.trackables()),
            subclass_of={sp.id: sp.subclass_id for sp, _ in world.trackables()},
            dt_enabled=cfg.scenario.dt_enabled,
            ci=ci,
        )
        self.trace = EpisodeTrace(cfg.scenario.id, seed, cfg.variation)
        self.metrics = rw.EpisodeMetrics()
        self.steps = 0
        self.done = False
        self._consecutive_lost = 0
        self.last_visibility = oracle_bbox(self.obs_rig, self.ptz, *world.target)
        return self._observe()

    def _ensure_initially_visible(self, world) -> None:
        """Redraw trackable placements until they start inside the view."""
        must_see = [world.target_id]
        if self.cfg.scenario.dt_enabled:
            must_see = [sp.id for sp, _ in world.trackables()]
        for object_id in must_see:
            spec, state = world.find(object_id)
            for attempt in range(MAX_PLACEMENT_DRAWS + 1):
                if oracle_bbox(self.obs_rig, self.ptz, spec, state).visible:
                    break
                if attempt == MAX_PLACEMENT_DRAWS:
                    raise PlacementError(
                        f"object {object_id} not visible after "
                        f"{MAX_PLACEMENT_DRAWS} placement draws")
                saved_target = world.target_id
                world.target_id = object_id
                reposition_target(world)
                world.target_id = saved_target

    def _observe(self) -> Observation:
        if not self.render_enabled:
            return Observation(image=None, ci=self.ci)
        cfg = self.cfg
        frame = render(self.world, self.render_rig, self.ptz,
                       render_config_for(self.world))
        if self.world.scenario.augmentations_enabled:
            aug = sample_augmentations(self.world.rng("augment"))
            frame = apply_augmentations(frame, aug, self.world.rng("augment"))
        if cfg.render_size != cfg.obs_size:
            frame = downsample(frame, cfg.obs_size, cfg.obs_size)
        # snap to the byte grid so remote and in-process consumers agree
        return Observation(image=frame.quantized(), ci=self.ci)

    def step(self, action: PtzAction) -> StepResult:
        if self.done or self.world is None:
            raise EpisodeDone("step() called on a finished episode")
        cfg = self.cfg
        self.ptz, changed = apply_action(self.ptz, action)
        step_world(self.world, cfg.step_period)

        obs = self._observe()
        vis = oracle_bbox(self.obs_rig, self.ptz, *self.world.target)
        self.last_visibility = vis
        breakdown = rw.step_reward(vis, self.world.target_id, self.task,
                                   cfg.reward_cfg, changed,
                                   cfg.obs_size, cfg.obs_size)
        rw.accumulate(self.metrics, breakdown, vis.visible)

        self.steps += 1
        self._consecutive_lost = 0 if vis.visible else self._consecutive_lost + 1
        if self.steps >= cfg.episode_len:
            self.done = True
        if (cfg.training_mode
                and self._consecutive_lost > cfg.max_consecutive_lost):
            self.done = True

        box = vis.clipped_box
        self.trace.records.append(StepRecord(
            step=self.steps, ptz=self.ptz, action=action, visible=vis.visible,
            box=(box.xmin, box.ymin, box.xmax, box.ymax),
            clipped=vis.clipped, reward=breakdown.reward, ci=self.ci))

        info = StepInfo(visibility=vis, ptz=self.ptz, breakdown=breakdown,
                        ci=self.ci)
        return StepResult(obs=obs, reward=breakdown.reward, done=self.done,
                          info=info)


# ---------------------------------------------------------------------------
# Controllers and evaluation

class Controller:
    """Base policy interface. observation_kind selects what act() receives:
    'image' -> Observation, 'oracle' -> (Visibility, ci), 'none' -> None."""

    observation_kind = "none"

    def reset(self, seed: int) -> None:
        pass

    def act(self, inp) -> PtzAction:
        raise NotImplementedError


def controller_input(controller: Controller, env: TrackingEnv,
                     obs: Observation):
    kind = controller.observation_kind
    if kind == "image":
        return obs
    if kind == "oracle":
        return (env.last_visibility, env.ci)
    return None


def run_episode(controller: Controller, cfg: EnvConfig,
                seed: int) -> tuple[EpisodeTrace, rw.EpisodeMetrics]:
    """Roll one full episode under the controller."""
    env = TrackingEnv(cfg, render_enabled=controller.observation_kind == "image")
    obs = env.reset(seed)
    controller.reset(seed)
    while not env.done:
        action = controller.act(controller_input(controller, env, obs))
        result = env.step(action)
        obs = result.obs
    return env.trace, env.metrics


def aggregate_metrics(per_episode: list[dict]) -> dict:
    """Mean and population std of every metric over episodes."""
    aggregate = {}
    for name in rw.METRIC_NAMES + ("episode_return",):
        values = np.array([m[name] for m in per_episode])
        aggregate[name] = (float(values.mean()), float(values.std()))
    return aggregate


def evaluate(controller: Controller, cfg: EnvConfig, episodes: int,
             base_seed: int, keep_traces: bool = False):
    """Run episodes with consecutive seeds; returns (aggregate, per-episode
    metric dicts, traces or None). Episodes are fully isolated per seed so
    the result does not depend on execution order."""
    per_episode = []
    traces = [] if keep_traces else None
    for i in range(episodes):
        seed = base_seed + i
        trace, metrics = run_episode(controller, cfg, seed)
        row = metrics.as_dict()
        row["seed"] = seed
        per_episode.append(row)
        if keep_traces:
            traces.append(trace)
    return aggregate_metrics(per_episode), per_episode, traces


# ---------------------------------------------------------------------------
# Offline reward recomputation from a trace (independent check path)

def replay_rewards(trace: EpisodeTrace, reward_cfg: rw.RewardConfig,
                   obs_size: int = DEFAULT_OBS_SIZE):
    """Recompute every step reward from the recorded boxes and camera
    states alone. Returns a list aligned with trace.records."""
    out = []
    prev = PtzState()
    w = h = obs_size
    for r in trace.records:
        changed = r.ptz != prev
        prev = r.ptz
        if not r.visible:
            out.append(-reward_cfg.lost_penalty)
            continue
        xmin, ymin, xmax, ymax = r.box
        x = (xmin + xmax) / 2.0
        y = (ymin + ymax) / 2.0
        cx = 1.0 - abs(w / 2.0 - x) / (w / 2.0)
        cy = 1.0 - abs(h / 2.0 - y) / (h / 2.0)
        size = (xmax - xmin) * (ymax - ymin) / (w * h)
        clip = reward_cfg.clip_multiplier if r.clipped else 1.0
        penalty = reward_cfg.action_penalty if (
            changed or not reward_cfg.penalize_only_on_change) else 0.0
        out.append(cx * cy * size * clip - penalty)
    return out
