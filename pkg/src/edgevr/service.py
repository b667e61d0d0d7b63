"""HTTP facade over environment sessions.

REST routes manage sessions explicitly; the websocket route speaks the same
line-protocol messages as the TCP server, one session per connection. All
simulation state lives in process memory, so run exactly one worker.
"""

from __future__ import annotations

import threading
import uuid

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, ConfigDict

from .config import RunConfig
from .env import VREnv
from .wire import ProtocolSession
from .workload import TraceSet


class ActionModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    zf: list[int]
    xb: list[list[int]]
    zb: list[list[int]]
    wB: list[float]
    wF: list[float]

    def as_raw(self) -> dict:
        return {"zf": self.zf, "xb": self.xb, "zb": self.zb,
                "wB": self.wB, "wF": self.wF}


class ResetRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    episode: int = 0
    seed: int = 0


class StepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    action: ActionModel


class SessionCreated(BaseModel):
    session_id: str


class ObsResponse(BaseModel):
    obs: list[float]


class StepResponse(BaseModel):
    obs: list[float]
    reward: float
    cost: float
    done: bool
    info: dict


class DeletedResponse(BaseModel):
    ok: bool


class _Session:
    def __init__(self, env: VREnv):
        self.env = env
        self.lock = threading.Lock()
        self.active = False


def create_app(config: RunConfig, traces: TraceSet) -> FastAPI:
    config.validate()
    app = FastAPI(title="edgevr environment service", version="0.1.0")
    sessions: dict[str, _Session] = {}
    spec = VREnv(config, traces).spec_dict()

    def _get(sid: str) -> _Session:
        try:
            return sessions[sid]
        except KeyError:
            raise HTTPException(status_code=404,
                                detail=f"no session {sid}") from None

    @app.get("/spec")
    def get_spec() -> dict:
        return spec

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "sessions": len(sessions)}

    @app.post("/sessions", response_model=SessionCreated, status_code=201)
    def create_session() -> SessionCreated:
        sid = uuid.uuid4().hex[:12]
        sessions[sid] = _Session(VREnv(config, traces))
        return SessionCreated(session_id=sid)

    @app.post("/sessions/{sid}/reset", response_model=ObsResponse)
    def reset(sid: str, req: ResetRequest) -> ObsResponse:
        session = _get(sid)
        with session.lock:
            try:
                obs = session.env.reset(req.episode, req.seed)
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            session.active = True
            return ObsResponse(obs=obs.tolist())

    @app.post("/sessions/{sid}/step", response_model=StepResponse)
    def step(sid: str, req: StepRequest) -> StepResponse:
        session = _get(sid)
        with session.lock:
            if not session.active:
                raise HTTPException(status_code=409,
                                    detail="no active episode, reset first")
            try:
                result = session.env.step(
                    session.env.decode_action(req.action.as_raw()))
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            if result.done:
                session.active = False
            return StepResponse(obs=result.observation.tolist(),
                                reward=result.reward, cost=result.cost,
                                done=result.done, info=result.info)

    @app.delete("/sessions/{sid}", response_model=DeletedResponse)
    def drop(sid: str) -> DeletedResponse:
        _get(sid)
        del sessions[sid]
        return DeletedResponse(ok=True)

    @app.websocket("/ws")
    async def ws_session(ws: WebSocket) -> None:
        await ws.accept()
        session = ProtocolSession(config, traces)
        try:
            while True:
                try:
                    msg = await ws.receive_json()
                except ValueError:
                    await ws.send_json({"error": "bad_json",
                                        "detail": "not valid JSON"})
                    continue
                reply, close = session.handle(msg)
                await ws.send_json(reply)
                if close:
                    break
        except WebSocketDisconnect:
            return
        await ws.close()

    return app
