"""Minimal client for the environment service's line-JSON protocol.

The learner only ever talks to a served environment; nothing here imports
the simulator. ``EnvClient`` wraps one TCP session with split send/recv so
a ``SessionPool`` can drive many sessions in lock step: write all requests,
then read all replies, one network round trip per batch step.
"""

from __future__ import annotations

import json
import socket
from typing import Optional, Sequence


class WireError(RuntimeError):
    """Protocol-level failure reported by the service or the socket."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class EnvClient:
    def __init__(self, host: str, port: int,
                 timeout: Optional[float] = 120.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def send(self, msg: dict) -> None:
        self._file.write(json.dumps(msg, separators=(",", ":")).encode()
                         + b"\n")
        self._file.flush()

    def recv(self) -> dict:
        line = self._file.readline()
        if not line:
            raise WireError("closed", "server closed the connection")
        reply = json.loads(line)
        if isinstance(reply, dict) and "error" in reply:
            raise WireError(reply["error"], reply.get("detail", ""))
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

    def __enter__(self) -> "EnvClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class SessionPool:
    """A fixed set of concurrent sessions stepped in lock step.

    A transient failure on one session is retried once by reopening that
    connection and replaying the episode up to the failed step; a second
    failure propagates.
    """

    def __init__(self, host: str, port: int, n: int,
                 timeout: Optional[float] = 120.0):
        self.host = host
        self.port = port
        self.clients = [EnvClient(host, port, timeout) for _ in range(n)]
        self.spec = self.clients[0].spec()
        self._replay: list[list[dict]] = [[] for _ in range(n)]

    def __len__(self) -> int:
        return len(self.clients)

    def reset(self, pairs: Sequence[tuple[int, int]]) -> list[list]:
        if len(pairs) != len(self.clients):
            raise ValueError("one (episode, seed) pair per session")
        for i, (client, (episode, seed)) in enumerate(zip(self.clients,
                                                          pairs)):
            msg = {"cmd": "reset", "episode": episode, "seed": seed}
            self._replay[i] = [msg]
            client.send(msg)
        return [self._recv_retry(i)["obs"] for i in range(len(self.clients))]

    def step(self, actions: Sequence[dict]) -> list[dict]:
        if len(actions) != len(self.clients):
            raise ValueError("one action per session")
        for i, (client, action) in enumerate(zip(self.clients, actions)):
            msg = {"cmd": "step", "action": action}
            self._replay[i].append(msg)
            client.send(msg)
        return [self._recv_retry(i) for i in range(len(self.clients))]

    def _recv_retry(self, i: int) -> dict:
        try:
            return self.clients[i].recv()
        except (WireError, OSError) as exc:
            if isinstance(exc, WireError) and exc.code in (
                    "bad_request", "bad_state", "bad_json"):
                raise  # a rejected request will not pass on replay either
            return self._reopen(i)

    def _reopen(self, i: int) -> dict:
        if not self._replay[i]:
            raise WireError("closed", "session lost before first reset")
        fresh = EnvClient(self.host, self.port)
        reply: dict = {}
        for msg in self._replay[i]:
            reply = fresh.request(msg)
        try:
            self.clients[i]._sock.close()
        except OSError:
            pass
        self.clients[i] = fresh
        return reply

    def close(self) -> None:
        for client in self.clients:
            client.close()
