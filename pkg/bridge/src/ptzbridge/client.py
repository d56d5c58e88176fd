"""Client for the tracking simulator's newline-delimited JSON protocol.

Exposes the conventional reset/step environment interface over either a
local socket or a child process speaking the protocol on its standard
streams. Strictly one request in flight; observations decode to float
arrays in [0, 1].
"""

from __future__ import annotations

import base64
import json
import socket
import subprocess

import numpy as np

NOOP_ACTION = (1, 1, 1)  # index triple: 1 means "no change" per component


class ProtocolError(RuntimeError):
    """Server answered with an error or spoke malformed protocol."""


class ConnectError(ProtocolError):
    """Could not reach or launch a server."""


class _SocketTransport:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self._sock = socket.create_connection((host, port),
                                                  timeout=timeout)
        except OSError as e:
            raise ConnectError(f"cannot connect to {host}:{port}: {e}") from e
        self._reader = self._sock.makefile("r", encoding="utf-8")
        self._writer = self._sock.makefile("w", encoding="utf-8")

    def send_line(self, line: str) -> None:
        self._writer.write(line + "\n")
        self._writer.flush()

    def recv_line(self) -> str:
        line = self._reader.readline()
        if not line:
            raise ProtocolError("connection closed by server")
        return line

    def close(self) -> None:
        # the file wrappers hold their own references to the socket; all
        # three must close before the peer sees end-of-stream
        for closer in (self._writer, self._reader, self._sock):
            try:
                closer.close()
            except OSError:
                pass


class _ProcessTransport:
    def __init__(self, command: list[str]):
        try:
            self._proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as e:
            raise ConnectError(f"cannot launch {command!r}: {e}") from e

    def send_line(self, line: str) -> None:
        if self._proc.poll() is not None:
            raise ProtocolError("server process exited")
        self._proc.stdin.write(line + "\n")
        self._proc.stdin.flush()

    def recv_line(self) -> str:
        line = self._proc.stdout.readline()
        if not line:
            raise ProtocolError("server process closed its output")
        return line

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class RemoteEnv:
    """Handle to one server connection: spec is fetched on connect, then
    reset/step round-trip one request each."""

    def __init__(self, transport):
        self._transport = transport
        self.spec = self._request({"cmd": "spec"})
        if "obs_size" not in self.spec or "action_encoding" not in self.spec:
            raise ProtocolError(f"malformed spec document: {self.spec}")
        self.obs_size = int(self.spec["obs_size"])

    # -- transport ----------------------------------------------------------

    def _request(self, payload: dict) -> dict:
        self._transport.send_line(json.dumps(payload))
        line = self._transport.recv_line()
        try:
            response = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"bad response line: {line!r}") from e
        if "error" in response:
            raise ProtocolError(response["error"])
        return response

    def close(self) -> None:
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- environment interface ----------------------------------------------

    def _decode(self, response: dict):
        raw = base64.b64decode(response["obs"])
        n = self.obs_size
        if len(raw) != n * n:
            raise ProtocolError(f"expected {n * n} obs bytes, got {len(raw)}")
        obs = np.frombuffer(raw, dtype=np.uint8).reshape(n, n)
        return obs.astype(np.float64) / 255.0

    def reset(self, scenario: str, seed: int):
        """Start an episode; returns (observation, ci) where ci is None
        outside dynamic-tasking scenarios."""
        response = self._request({"cmd": "reset", "scenario": scenario,
                                  "seed": int(seed)})
        return self._decode(response), response.get("ci")

    def step(self, action):
        """One step; action is the index triple with components in
        {0, 1, 2} meaning {negative, none, positive}. Returns
        (observation, reward, done, info)."""
        action = [int(a) for a in action]
        response = self._request({"cmd": "step", "action": action})
        return (self._decode(response), float(response["reward"]),
                bool(response["done"]), response.get("info", {}))


def connect(address=None, launch_command=None, timeout: float = 30.0) -> RemoteEnv:
    """Open a handle to a protocol server.

    address is a (host, port) pair for a running socket server;
    launch_command is an argv list for a child process serving on its
    standard streams. Exactly one must be given.
    """
    if (address is None) == (launch_command is None):
        raise ValueError("pass exactly one of address or launch_command")
    if address is not None:
        host, port = address
        return RemoteEnv(_SocketTransport(host, int(port), timeout))
    return RemoteEnv(_ProcessTransport(list(launch_command)))


def reset(handle: RemoteEnv, scenario: str, seed: int):
    return handle.reset(scenario, seed)


def step(handle: RemoteEnv, action):
    return handle.step(action)
