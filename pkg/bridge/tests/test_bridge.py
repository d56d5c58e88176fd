import socket
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from ptzbridge import NOOP_ACTION, ProtocolError, RemoteEnv, connect

SERVE_STDIO = [sys.executable, "-m", "ptztrack", "serve", "--stdio"]


@pytest.fixture
def env():
    handle = connect(launch_command=SERVE_STDIO)
    yield handle
    handle.close()


class TestConnect:
    def test_spec_handshake(self, env):
        assert env.spec["obs_size"] == 120
        assert env.spec["action_encoding"]["pan_deltas"] == [-2, 0, 2]

    def test_bad_port_raises(self):
        with pytest.raises(ProtocolError):
            connect(address=("127.0.0.1", 1), timeout=2.0)

    def test_requires_exactly_one_target(self):
        with pytest.raises(ValueError):
            connect()

    def test_launch_command_mode(self):
        with connect(launch_command=SERVE_STDIO) as env:
            obs, ci = env.reset("sc1", 1)
            assert obs.shape == (120, 120)


class TestResetStep:
    def test_reset_shape_and_range(self, env):
        obs, ci = env.reset("sc1", 4)
        assert obs.shape == (120, 120)
        assert obs.min() >= 0.0 and obs.max() <= 1.0
        assert ci is None

    def test_reset_deterministic(self, env):
        a, _ = env.reset("sc3", 7)
        b, _ = env.reset("sc3", 7)
        assert np.array_equal(a, b)

    def test_dt_exposes_ci(self, env):
        _, ci = env.reset("dt", 5)
        assert ci in (0, 1)

    def test_step_round_trip(self, env):
        env.reset("sc1", 2)
        obs, reward, done, info = env.step(NOOP_ACTION)
        assert obs.shape == (120, 120)
        assert isinstance(reward, float)
        assert done is False
        assert info["step"] == 1

    def test_step_before_reset_errors(self, env):
        with pytest.raises(ProtocolError):
            env.step(NOOP_ACTION)

    def test_step_after_done_errors(self):
        cmd = SERVE_STDIO + ["--episode-len", "2"]
        with connect(launch_command=cmd) as env:
            env.reset("sc1", 1)
            env.step(NOOP_ACTION)
            _, _, done, _ = env.step(NOOP_ACTION)
            assert done
            with pytest.raises(ProtocolError):
                env.step(NOOP_ACTION)

    def test_episode_ends_at_configured_length(self):
        cmd = SERVE_STDIO + ["--episode-len", "5"]
        with connect(launch_command=cmd) as env:
            env.reset("sc1", 1)
            done = False
            steps = 0
            while not done:
                _, _, done, _ = env.step((2, 1, 0))
                steps += 1
            assert steps == 5


class TestEquivalence:
    """Remote trajectories must match the in-process environment byte for
    byte; the primary package is imported here only to build the oracle."""

    @pytest.mark.parametrize("scenario", ["sc1", "sc3", "dt"])
    def test_trajectories_byte_identical(self, scenario):
        from ptztrack.camera import PtzAction
        from ptztrack.envs import TrackingEnv, make_env_config
        from ptztrack.scene import make_stream

        steps = 200
        for seed in (1, 2, 3):
            rng = make_stream(seed, "bridge-actions")
            actions = [tuple(int(v) for v in rng.integers(0, 3, 3))
                       for _ in range(steps)]

            local = TrackingEnv(make_env_config(scenario))
            local_obs = local.reset(seed)
            local_frames = [local_obs.image.to_bytes()]
            local_rewards = []
            local_infos = []
            for a in actions:
                r = local.step(PtzAction.from_indices(*a))
                local_frames.append(r.obs.image.to_bytes())
                local_rewards.append(r.reward)
                vis = r.info.visibility
                local_infos.append((vis.visible, vis.clipped,
                                    r.info.ptz.pan, r.info.ptz.tilt,
                                    r.info.ptz.fov))

            with connect(launch_command=SERVE_STDIO) as env:
                obs, _ = env.reset(scenario, seed)
                remote_frames = [
                    np.rint(obs * 255.0).astype(np.uint8).tobytes()]
                remote_rewards = []
                remote_infos = []
                for a in actions:
                    obs, reward, done, info = env.step(a)
                    remote_frames.append(
                        np.rint(obs * 255.0).astype(np.uint8).tobytes())
                    remote_rewards.append(reward)
                    remote_infos.append((info["visible"], info["clipped"],
                                         info["pan"], info["tilt"],
                                         info["fov"]))

            assert remote_frames == local_frames
            assert remote_rewards == local_rewards
            assert remote_infos == local_infos


class TestSocketMode:
    def test_socket_round_trip(self):
        port = _free_port()
        proc = subprocess.Popen(
            [sys.executable, "-m", "ptztrack", "serve", "--port", str(port)],
            stdout=subprocess.PIPE, text=True)
        try:
            _wait_listening(port)
            with connect(address=("127.0.0.1", port)) as env:
                obs, _ = env.reset("sc1", 3)
                assert obs.shape == (120, 120)
                _, reward, done, _ = env.step(NOOP_ACTION)
                assert not done
            # server accepts a fresh connection afterwards
            with connect(address=("127.0.0.1", port)) as env:
                assert env.spec["obs_size"] == 120
        finally:
            proc.terminate()
            proc.wait(timeout=10)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _wait_listening(port: int, timeout: float = 60.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            with socket.create_connection(("127.0.0.1", port), timeout=1):
                return
        except OSError:
            time.sleep(0.2)
    raise TimeoutError(f"server never listened on {port}")
