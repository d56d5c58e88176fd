"""Thin client for the tracking simulator's reset/step protocol."""

__version__ = "0.1.0"

from .client import (NOOP_ACTION, ConnectError, ProtocolError, RemoteEnv,
                     connect, reset, step)

__all__ = ["NOOP_ACTION", "ConnectError", "ProtocolError", "RemoteEnv",
           "connect", "reset", "step", "__version__"]
