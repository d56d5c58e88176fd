"""Newline-delimited JSON environment protocol over standard streams or a
local socket: one request, one response, strictly sequential.

Requests:  {"cmd":"spec"}
           {"cmd":"reset","scenario":NAME,"seed":INT}
           {"cmd":"step","action":[a,b,c]}  with a,b,c in {0,1,2} = {-,0,+}
Responses: {"obs":BASE64,"ci":INT|null,"reward":FLOAT,"done":BOOL,"info":{}}
           spec queries answer a capability document; failures answer
           {"error": MESSAGE} and the connection stays usable.
"""

from __future__ import annotations

import base64
import json
import socket
import sys

from .camera import FOV_DELTAS, PAN_DELTAS, PtzAction, TILT_DELTAS
from .envs import EnvConfig, EpisodeDone, TrackingEnv
from .scene import SCENARIOS, get_scenario

PROTOCOL_VERSION = 1


class ProtocolSession:
    """One connection's worth of state: at most one live environment."""

    def __init__(self, env_defaults: dict | None = None):
        self.env = None
        self.env_defaults = env_defaults or {}

    def spec_document(self) -> dict:
        cfg = EnvConfig(scenario=get_scenario("sc1"), **self.env_defaults)
        return {
            "protocol": PROTOCOL_VERSION,
            "obs_size": cfg.obs_size,
            "render_size": cfg.render_size,
            "episode_len": cfg.episode_len,
            "step_period": cfg.step_period,
            "scenarios": sorted(SCENARIOS),
            "action_encoding": {
                "order": ["pan", "tilt", "zoom"],
                "index_meaning": "0=negative, 1=none, 2=positive",
                "pan_deltas": list(PAN_DELTAS),
                "tilt_deltas": list(TILT_DELTAS),
                "fov_deltas": list(FOV_DELTAS),
            },
        }

    def handle(self, request: dict) -> dict:
        cmd = request.get("cmd")
        if cmd == "spec":
            return self.spec_document()
        if cmd == "reset":
            scenario = get_scenario(str(request["scenario"]))
            seed = int(request["seed"])
            self.env = TrackingEnv(EnvConfig(scenario=scenario,
                                             **self.env_defaults))
            obs = self.env.reset(seed)
            return self._response(obs, 0.0, False, {})
        if cmd == "step":
            if self.env is None:
                raise ValueError("step before reset")
            action = request["action"]
            if (not isinstance(action, list) or len(action) != 3
                    or any(a not in (0, 1, 2) for a in action)):
                raise ValueError("action must be three indices in {0,1,2}")
            result = self.env.step(PtzAction.from_indices(*action))
            vis = result.info.visibility
            box = vis.clipped_box
            info = {
                "visible": vis.visible,
                "clipped": vis.clipped,
                "box": [box.xmin, box.ymin, box.xmax, box.ymax],
                "pan": result.info.ptz.pan,
                "tilt": result.info.ptz.tilt,
                "fov": result.info.ptz.fov,
                "step": self.env.steps,
            }
            return self._response(result.obs, result.reward, result.done, info)
        raise ValueError(f"unknown cmd {cmd!r}")

    def _response(self, obs, reward, done, info) -> dict:
        return {
            "obs": base64.b64encode(obs.image.to_bytes()).decode("ascii"),
            "ci": obs.ci,
            "reward": reward,
            "done": done,
            "info": info,
        }


def serve_lines(reader, writer, env_defaults: dict | None = None) -> None:
    """Main loop over line-based transport; returns at end of input."""
    session = ProtocolSession(env_defaults)
    for line in reader:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            response = session.handle(request)
        except (KeyError, ValueError, TypeError, EpisodeDone) as e:
            response = {"error": str(e) or e.__class__.__name__}
        writer.write(json.dumps(response) + "\n")
        writer.flush()


def serve_stdio(env_defaults: dict | None = None) -> None:
    serve_lines(sys.stdin, sys.stdout, env_defaults)


def serve_socket(host: str, port: int, env_defaults: dict | None = None,
                 max_connections: int | None = None) -> None:
    """Accept one connection at a time, each with its own session."""
    served = 0
    with socket.create_server((host, port)) as server:
        print(f"listening on {host}:{server.getsockname()[1]}", flush=True)
        while max_connections is None or served < max_connections:
            conn, _addr = server.accept()
            served += 1
            with conn:
                reader = conn.makefile("r", encoding="utf-8")
                writer = conn.makefile("w", encoding="utf-8")
                try:
                    serve_lines(reader, writer, env_defaults)
                except (BrokenPipeError, ConnectionResetError):
                    pass
