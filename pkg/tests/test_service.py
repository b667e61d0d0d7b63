import asyncio
import json
import socket
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from edgevr.baselines import make_policy
from edgevr.config import RunConfig
from edgevr.env import VREnv
from edgevr.service import create_app
from edgevr.wire import ProtocolSession, WireClient, WireError, serve
from edgevr.workload import TraceSet, WorkloadParams, generate_traces


def make_inputs(users=2, horizon=5, episodes=2):
    cfg = RunConfig()
    cfg.sim.users = users
    cfg.sim.horizon = horizon
    cfg.workload.episodes = episodes
    traces = TraceSet(generate_traces(WorkloadParams.from_config(cfg),
                                      episodes, users, horizon, seed=31))
    return cfg, traces


@pytest.fixture(scope="module")
def backend():
    return make_inputs()


@pytest.fixture(scope="module")
def wire_endpoint(backend):
    cfg, traces = backend
    ready = threading.Event()
    addr = {}
    loop = asyncio.new_event_loop()

    def on_ready(host, port):
        addr["hp"] = (host, port)
        ready.set()

    def runner():
        asyncio.set_event_loop(loop)
        try:
            loop.run_until_complete(serve(cfg, traces, "127.0.0.1", 0,
                                          on_ready=on_ready))
        except RuntimeError:
            pass   # loop.stop() from teardown lands here

    thread = threading.Thread(target=runner, daemon=True)
    thread.start()
    assert ready.wait(10.0), "server did not come up"
    yield addr["hp"]
    loop.call_soon_threadsafe(loop.stop)
    thread.join(5.0)


def run_episode(env, episode, seed, policy):
    obs = env.reset(episode, seed)
    out = []
    done = False
    slot = 0
    while not done:
        res = env.step(env.decode_action(policy(obs, slot, None)))
        out.append((res.reward, res.cost, res.observation.tolist()))
        obs = res.observation
        done = res.done
        slot += 1
    return out


def test_wire_spec_matches_env(wire_endpoint, backend):
    cfg, traces = backend
    with WireClient(*wire_endpoint) as client:
        spec = client.spec()
    assert spec == VREnv(cfg, traces).spec_dict()
    assert spec["config_sha256"] == cfg.config_hash()


def test_wire_episode_matches_in_process(wire_endpoint, backend):
    cfg, traces = backend
    env = VREnv(cfg, traces)
    policy = make_policy("plf", cfg.sim.users, cfg.workload.window)
    local = run_episode(env, episode=1, seed=9, policy=policy)

    with WireClient(*wire_endpoint) as client:
        obs = client.reset(1, 9)
        for k, (reward, cost, obs_ref) in enumerate(local):
            reply = client.step(policy(obs, k, None))
            assert reply["reward"] == reward
            assert reply["cost"] == cost
            assert reply["obs"] == obs_ref
            obs = reply["obs"]
        assert reply["done"]


def test_wire_errors_keep_session(wire_endpoint):
    with WireClient(*wire_endpoint) as client:
        client.send({"cmd": "step", "action": {}})
        with pytest.raises(WireError, match="bad_state"):
            client.recv()
        client.send({"cmd": "nope"})
        with pytest.raises(WireError, match="bad_request"):
            client.recv()
        client.send({"cmd": "reset", "episode": -1})
        with pytest.raises(WireError, match="bad_request"):
            client.recv()
        client.send({"cmd": "reset", "seed": True})
        with pytest.raises(WireError, match="bad_request"):
            client.recv()
        # the session is still usable after all of that
        obs = client.reset(0, 0)
        assert len(obs) > 0
        client.send({"cmd": "step", "action": {"zf": [1]}})
        with pytest.raises(WireError, match="bad_request"):
            client.recv()


def test_wire_step_after_done_is_bad_state(wire_endpoint, backend):
    cfg, _ = backend
    policy = make_policy("pff", cfg.sim.users, cfg.workload.window)
    with WireClient(*wire_endpoint) as client:
        obs = client.reset(0, 0)
        for k in range(cfg.sim.horizon):
            reply = client.step(policy(obs, k, None))
            obs = reply["obs"]
        assert reply["done"]
        client.send({"cmd": "step", "action": policy(obs, 0, None)})
        with pytest.raises(WireError, match="bad_state"):
            client.recv()


def test_wire_close_and_raw_json(wire_endpoint):
    with socket.create_connection(wire_endpoint, timeout=10.0) as sock:
        f = sock.makefile("rwb")
        f.write(b"{this is not json\n")
        f.flush()
        reply = json.loads(f.readline())
        assert reply["error"] == "bad_json"
        f.write(b'"just a string"\n')
        f.flush()
        reply = json.loads(f.readline())
        assert reply["error"] == "bad_request"
        f.write(b'{"cmd":"close"}\n')
        f.flush()
        assert json.loads(f.readline()) == {"ok": True}
        assert f.readline() == b""   # server hung up


def test_protocol_session_handle_close_flag(backend):
    cfg, traces = backend
    session = ProtocolSession(cfg, traces)
    reply, close = session.handle({"cmd": "spec"})
    assert not close and "dims" in reply
    reply, close = session.handle({"cmd": "close"})
    assert close and reply == {"ok": True}
    reply, close = session.handle([1, 2])
    assert not close and reply["error"] == "bad_request"


@pytest.fixture(scope="module")
def api(backend):
    cfg, traces = backend
    with TestClient(create_app(cfg, traces)) as client:
        yield client


def good_action(cfg):
    policy = make_policy("plf", cfg.sim.users, cfg.workload.window)
    return policy(None, 0, None)


def test_api_spec_and_health(api, backend):
    cfg, traces = backend
    assert api.get("/spec").json() == VREnv(cfg, traces).spec_dict()
    body = api.get("/healthz").json()
    assert body["status"] == "ok"


def test_api_session_lifecycle(api, backend):
    cfg, traces = backend
    r = api.post("/sessions")
    assert r.status_code == 201
    sid = r.json()["session_id"]

    r = api.post(f"/sessions/{sid}/step", json={"action": good_action(cfg)})
    assert r.status_code == 409

    r = api.post(f"/sessions/{sid}/reset", json={"episode": 57, "seed": 0})
    assert r.status_code == 400

    r = api.post(f"/sessions/{sid}/reset", json={"episode": 0, "seed": 3})
    assert r.status_code == 200
    env = VREnv(cfg, traces)
    assert r.json()["obs"] == env.reset(0, 3).tolist()

    r = api.post(f"/sessions/{sid}/step", json={"action": good_action(cfg)})
    assert r.status_code == 200
    body = r.json()
    ref = env.step(env.decode_action(good_action(cfg)))
    assert body["reward"] == ref.reward
    assert body["cost"] == ref.cost
    assert body["obs"] == ref.observation.tolist()
    assert body["info"]["slot"] == 0

    bad = good_action(cfg)
    bad["zf"] = [1]   # wrong user count
    r = api.post(f"/sessions/{sid}/step", json={"action": bad})
    assert r.status_code == 400

    r = api.post(f"/sessions/{sid}/step", json={})
    assert r.status_code == 422

    assert api.delete(f"/sessions/{sid}").json() == {"ok": True}
    assert api.delete(f"/sessions/{sid}").status_code == 404
    assert api.post("/sessions/zzz/reset", json={}).status_code == 404


def test_api_websocket_session(api, backend):
    cfg, _ = backend
    action = good_action(cfg)
    with api.websocket_connect("/ws") as ws:
        ws.send_json({"cmd": "spec"})
        assert ws.receive_json()["users"] == cfg.sim.users
        ws.send_json({"cmd": "step", "action": action})
        assert ws.receive_json()["error"] == "bad_state"
        ws.send_json({"cmd": "reset", "episode": 0, "seed": 3})
        obs = ws.receive_json()["obs"]
        assert np.isfinite(obs).all()
        ws.send_json({"cmd": "step", "action": action})
        reply = ws.receive_json()
        assert set(reply) == {"obs", "reward", "cost", "done", "info"}
        ws.send_json({"cmd": "close"})
        assert ws.receive_json() == {"ok": True}
