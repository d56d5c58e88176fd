"""Neural controllers for evaluation: the image policy, the box-input
policy, and the relative-location regressor chained with the rule
controller."""

from __future__ import annotations

import numpy as np

from .baselines import ControllerParams, bbox_from_relloc, RelativeLocation, rule_control
from .camera import PtzAction
from .envs import Controller, Observation
from .nets import (HEADS_ACTOR_CRITIC, HEADS_REGRESSION3, Network,
                   NetworkSpec, TRUNK_BBOX, TRUNK_IMAGE, greedy_actions,
                   load_params)


class PolicyController(Controller):
    """Greedy image-input policy (deterministic at evaluation time)."""

    observation_kind = "image"

    def __init__(self, spec: NetworkSpec, params: np.ndarray):
        if spec.trunk != TRUNK_IMAGE or spec.heads != HEADS_ACTOR_CRITIC:
            raise ValueError("image policy needs an image actor-critic model")
        self.spec = spec
        self.net = Network(spec)
        self.params = params

    @classmethod
    def from_file(cls, path: str) -> "PolicyController":
        spec, params = load_params(path)
        return cls(spec, params)

    def act(self, obs: Observation) -> PtzAction:
        x = obs.image.pixels[None]
        ci = (np.array([0 if obs.ci is None else obs.ci], dtype=float)
              if self.spec.ci_injection else None)
        logits = self.net.forward(self.params, x, ci)["logits"]
        idx = greedy_actions(logits)[0]
        return PtzAction.from_indices(int(idx[0]), int(idx[1]), int(idx[2]))


class BboxPolicyController(Controller):
    """Greedy policy fed the oracle clipped box (normalized; zeros when the
    target is out of view)."""

    observation_kind = "oracle"

    def __init__(self, spec: NetworkSpec, params: np.ndarray,
                 obs_size: int = 120):
        if spec.trunk != TRUNK_BBOX or spec.heads != HEADS_ACTOR_CRITIC:
            raise ValueError("box policy needs a bbox actor-critic model")
        self.spec = spec
        self.net = Network(spec)
        self.params = params
        self.obs_size = obs_size

    @classmethod
    def from_file(cls, path: str, obs_size: int = 120) -> "BboxPolicyController":
        spec, params = load_params(path)
        return cls(spec, params, obs_size)

    def act(self, inp) -> PtzAction:
        vis, ci = inp
        if vis is not None and vis.visible:
            b = vis.clipped_box
            x = np.array([[b.xmin, b.ymin, b.xmax, b.ymax]]) / self.obs_size
        else:
            x = np.zeros((1, 4))
        ci_arr = (np.array([0 if ci is None else ci], dtype=float)
                  if self.spec.ci_injection else None)
        logits = self.net.forward(self.params, x, ci_arr)["logits"]
        idx = greedy_actions(logits)[0]
        return PtzAction.from_indices(int(idx[0]), int(idx[1]), int(idx[2]))


class RellocController(Controller):
    """Relative-location regressor driving the rule controller through a
    reconstructed pseudo-box (clip state is unobservable here)."""

    observation_kind = "image"

    def __init__(self, spec: NetworkSpec, params: np.ndarray,
                 rule_params: ControllerParams = ControllerParams(),
                 obs_size: int = 120):
        if spec.heads != HEADS_REGRESSION3:
            raise ValueError("relative-location model needs 3 outputs")
        self.spec = spec
        self.net = Network(spec)
        self.params = params
        self.rule_params = rule_params
        self.obs_size = obs_size

    @classmethod
    def from_file(cls, path: str,
                  rule_params: ControllerParams = ControllerParams(),
                  obs_size: int = 120) -> "RellocController":
        spec, params = load_params(path)
        return cls(spec, params, rule_params, obs_size)

    def act(self, obs: Observation) -> PtzAction:
        out = self.net.forward(self.params, obs.image.pixels[None])["out"][0]
        rel = RelativeLocation(
            rel_x=float(np.clip(out[0], -1.0, 1.0)),
            rel_y=float(np.clip(out[1], -1.0, 1.0)),
            rel_zoom=float(np.clip(out[2], 0.0, 1.0)))
        box = bbox_from_relloc(rel, self.obs_size, self.obs_size)
        return rule_control(box, False, self.rule_params,
                            self.obs_size, self.obs_size)
