"""Line-delimited JSON session protocol.

One TCP connection carries one environment session. Requests and replies are
single-line JSON objects:

    {"cmd": "spec"}                          -> dimensions and run metadata
    {"cmd": "reset", "episode": E, "seed": S} -> {"obs": [...]}
    {"cmd": "step", "action": {...}}          -> {"obs", "reward", "cost",
                                                  "done", "info"}
    {"cmd": "close"}                          -> {"ok": true}, then EOF

Malformed input earns {"error": code, "detail": text} and the session keeps
going; only "close" or EOF ends it. The same message handler backs the TCP
server here and the websocket route of the HTTP service.
"""

from __future__ import annotations

import asyncio
import json
import socket
from typing import Callable, Optional

from .config import ConfigError, RunConfig
from .env import VREnv
from .workload import TraceSet


class WireError(RuntimeError):
    """Server-reported failure, raised client-side."""


def _error(code: str, detail: str) -> dict:
    return {"error": code, "detail": detail}


class ProtocolSession:
    """Message handler for one environment session."""

    def __init__(self, config: RunConfig, traces: TraceSet,
                 event_writer: Optional[Callable] = None):
        self._config = config
        self._traces = traces
        self._event_writer = event_writer
        self._env: Optional[VREnv] = None
        self._active = False   # a reset happened and the episode is not done

    def _ensure_env(self) -> VREnv:
        if self._env is None:
            self._env = VREnv(self._config, self._traces)
            if self._event_writer is not None:
                self._env.attach_event_writer(self._event_writer)
        return self._env

    def handle(self, msg) -> tuple[dict, bool]:
        """Returns (reply, close_session)."""
        if not isinstance(msg, dict):
            return _error("bad_request", "message must be a JSON object"), False
        cmd = msg.get("cmd")
        try:
            if cmd == "spec":
                return self._ensure_env().spec_dict(), False
            if cmd == "reset":
                return self._reset(msg), False
            if cmd == "step":
                return self._step(msg), False
            if cmd == "close":
                return {"ok": True}, True
            return _error("bad_request", f"unknown cmd {cmd!r}"), False
        except (ValueError, KeyError, ConfigError) as exc:
            return _error("bad_request", str(exc)), False
        except RuntimeError as exc:
            return _error("bad_state", str(exc)), False

    def _reset(self, msg: dict) -> dict:
        episode = msg.get("episode", 0)
        seed = msg.get("seed", 0)
        for name, v in (("episode", episode), ("seed", seed)):
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer")
        obs = self._ensure_env().reset(episode, seed)
        self._active = True
        return {"obs": obs.tolist()}

    def _step(self, msg: dict) -> dict:
        if not self._active:
            raise RuntimeError("no active episode, send reset first")
        if "action" not in msg:
            raise ValueError("step needs an action")
        env = self._ensure_env()
        result = env.step(env.decode_action(msg["action"]))
        if result.done:
            self._active = False
        return {
            "obs": result.observation.tolist(),
            "reward": result.reward,
            "cost": result.cost,
            "done": result.done,
            "info": result.info,
        }


def _encode(reply: dict) -> bytes:
    return (json.dumps(reply, separators=(",", ":")) + "\n").encode()


async def _serve_connection(reader: asyncio.StreamReader,
                            writer: asyncio.StreamWriter,
                            session: ProtocolSession) -> None:
    try:
        while True:
            line = await reader.readline()
            if not line:
                break
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as exc:
                reply, close = _error("bad_json", str(exc)), False
            else:
                reply, close = session.handle(msg)
            writer.write(_encode(reply))
            await writer.drain()
            if close:
                break
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass


async def serve(config: RunConfig, traces: TraceSet, host: str, port: int,
                event_writer: Optional[Callable] = None,
                on_ready: Optional[Callable[[str, int], None]] = None) -> None:
    """Accept sessions until cancelled. Prints one ``listening on host:port``
    line once the socket is bound (with the resolved port when 0 was asked)."""

    async def handler(reader, writer):
        await _serve_connection(
            reader, writer, ProtocolSession(config, traces, event_writer))

    server = await asyncio.start_server(handler, host, port)
    bound = server.sockets[0].getsockname()
    print(f"listening on {bound[0]}:{bound[1]}", flush=True)
    if on_ready is not None:
        on_ready(bound[0], bound[1])
    async with server:
        await server.serve_forever()


def run_server(config: RunConfig, traces: TraceSet, host: str = "127.0.0.1",
               port: int = 7010,
               event_writer: Optional[Callable] = None) -> None:
    try:
        asyncio.run(serve(config, traces, host, port, event_writer))
    except KeyboardInterrupt:
        pass


class WireClient:
    """Blocking client for one session. ``send``/``recv`` are split so many
    clients can be driven in lock step."""

    def __init__(self, host: str, port: int, timeout: Optional[float] = 60.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def send(self, msg: dict) -> None:
        self._file.write(_encode(msg))
        self._file.flush()

    def recv(self) -> dict:
        line = self._file.readline()
        if not line:
            raise WireError("server closed the connection")
        reply = json.loads(line)
        if isinstance(reply, dict) and "error" in reply:
            raise WireError(f"{reply['error']}: {reply.get('detail', '')}")
        return reply

    def request(self, msg: dict) -> dict:
        self.send(msg)
        return self.recv()

    def spec(self) -> dict:
        return self.request({"cmd": "spec"})

    def reset(self, episode: int, seed: int) -> list:
        return self.request({"cmd": "reset", "episode": episode,
                             "seed": seed})["obs"]

    def step(self, action: dict) -> dict:
        return self.request({"cmd": "step", "action": action})

    def close(self) -> None:
        try:
            self.send({"cmd": "close"})
            self.recv()
        except (WireError, OSError, ValueError):
            pass
        finally:
            try:
                self._file.close()
            finally:
                self._sock.close()

    def __enter__(self) -> "WireClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
