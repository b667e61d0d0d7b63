"""Command-line entry points.

    edgevr gen-traces   --config run.cfg --out traces.txt
    edgevr serve-env    --config run.cfg --traces traces.txt --listen :7010
    edgevr serve-api    --config run.cfg --traces traces.txt --listen :8000
    edgevr run-baseline --config run.cfg --traces traces.txt --kind plf \
                        --episodes 10 --out plf.csv
    edgevr evaluate     --endpoint host:7010 --kind plf --episodes 10 \
                        --out plf.csv
    edgevr sweep        --config run.cfg --traces traces.txt \
                        --var bandwidth --grid 1e8:8e8:1e8 \
                        --kind plf --episodes 5 --out sweep.csv

Sweep grids are either explicit comma lists (``1e8,2e8,4e8``) or inclusive
``start:stop:step`` ranges.

``run-baseline`` drives the environment in process; ``evaluate`` produces the
same file through a remote session, so the two can cross-check a deployment.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .baselines import (
    BASELINE_NAMES,
    EpisodeAccumulator,
    episode_seeds,
    evaluate_policy,
    make_policy,
)
from .config import ConfigError, RunConfig
from .metrics import write_metrics_csv
from .sweep import SWEEP_VARIABLES, run_sweep, write_sweep_csv
from .workload import (
    TraceParseError,
    WorkloadParams,
    generate_traces,
    load_traces,
    save_traces,
)


def _load_config(path: str) -> RunConfig:
    cfg = RunConfig.load(path)
    cfg.validate()
    return cfg


def _load_trace_set(path: str, cfg: RunConfig | None):
    params = WorkloadParams.from_config(cfg) if cfg is not None else None
    traces = load_traces(path, params)
    for line in traces.warnings:
        print(f"warning: {line}", file=sys.stderr)
    return traces


def _parse_listen(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(
            f"expected HOST:PORT or :PORT, got {value!r}")
    return host or "127.0.0.1", int(port)


def _parse_grid(value: str) -> list[float]:
    try:
        if ":" in value:
            start, stop, step = (float(tok) for tok in value.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(round((stop - start) / step))
            grid = [start + i * step for i in range(n + 1)]
            return [v for v in grid if v <= stop + 1e-9 * step]
        return [float(tok) for tok in value.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"bad grid {value!r}, expected VALUE,VALUE,... or "
            "START:STOP:STEP")


def _episode_list(episodes_arg: int, available: list[int]) -> list[int]:
    if episodes_arg < 1:
        raise SystemExit("--episodes must be >= 1")
    if episodes_arg > len(available):
        raise SystemExit(f"trace holds {len(available)} episodes, "
                         f"asked for {episodes_arg}")
    return available[:episodes_arg]


def _event_line(ev) -> str:
    return (f"t={ev.time_s:.9f} user={ev.user} seq={ev.seq} {ev.kind} "
            f"sensor={ev.sensor_slot} frame={ev.frame_slot} {ev.transition}")


def _cmd_gen_traces(args) -> None:
    cfg = _load_config(args.config)
    params = WorkloadParams.from_config(cfg)
    episodes = args.episodes or cfg.workload.episodes
    seed = cfg.sim.seed if args.seed is None else args.seed
    records = generate_traces(params, episodes, cfg.sim.users,
                              cfg.sim.horizon, seed)
    save_traces(args.out, records)
    print(f"wrote {len(records)} records ({episodes} episodes) to {args.out}")


def _cmd_serve_env(args) -> None:
    from .wire import run_server

    cfg = _load_config(args.config)
    traces = _load_trace_set(args.traces, cfg)
    host, port = args.listen
    if args.event_log:
        with open(args.event_log, "w") as log:
            run_server(cfg, traces, host, port,
                       event_writer=lambda ev: log.write(_event_line(ev) + "\n"))
    else:
        run_server(cfg, traces, host, port)


def _cmd_serve_api(args) -> None:
    import uvicorn

    from .service import create_app

    cfg = _load_config(args.config)
    traces = _load_trace_set(args.traces, cfg)
    host, port = args.listen
    uvicorn.run(create_app(cfg, traces), host=host, port=port,
                log_level="warning")


def _metrics_meta(config_hash: str, baseline: str, seed: int,
                  episodes: int) -> dict[str, str]:
    return {"config_sha256": config_hash, "baseline": baseline,
            "seed": str(seed), "episodes": str(episodes)}


def _cmd_run_baseline(args) -> None:
    from .env import VREnv

    cfg = _load_config(args.config)
    traces = _load_trace_set(args.traces, cfg)
    env = VREnv(cfg, traces)
    episodes = _episode_list(args.episodes, traces.episodes)
    rows = evaluate_policy(env, args.kind, episodes, args.seed)
    write_metrics_csv(args.out, rows, _metrics_meta(
        cfg.config_hash(), args.kind, args.seed, len(episodes)))
    print(f"wrote {len(rows)} episode rows to {args.out}")


def _cmd_evaluate(args) -> None:
    from .wire import WireClient

    host, port = args.endpoint
    with WireClient(host, port) as client:
        spec = client.spec()
        episodes = _episode_list(args.episodes, list(spec["episodes"]))
        policy = make_policy(args.kind, spec["users"], spec["window"])
        rows = []
        for ep in episodes:
            env_seed, pol_seed = episode_seeds(args.seed, ep)
            rng = np.random.default_rng(pol_seed)
            obs = client.reset(ep, env_seed)
            acc = EpisodeAccumulator(ep)
            done = False
            slot = 0
            while not done:
                reply = client.step(policy(obs, slot, rng))
                acc.add(reply["reward"], reply["cost"], reply["info"])
                obs = reply["obs"]
                done = reply["done"]
                slot += 1
            rows.append(acc.result())
    write_metrics_csv(args.out, rows, _metrics_meta(
        spec.get("config_sha256", "unknown"), args.kind, args.seed,
        len(episodes)))
    print(f"wrote {len(rows)} episode rows to {args.out}")


def _cmd_sweep(args) -> None:
    cfg = _load_config(args.config)
    traces = _load_trace_set(args.traces, cfg)
    episodes = _episode_list(args.episodes, traces.episodes)
    rows = run_sweep(cfg, traces, args.var, args.grid, args.kind,
                     episodes, args.seed, args.workers)
    meta = _metrics_meta(cfg.config_hash(), args.kind, args.seed,
                         len(episodes))
    meta["variable"] = args.var
    write_sweep_csv(args.out, rows, meta)
    failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"wrote {len(rows)} sweep points to {args.out}"
          + (f" ({failed} failed)" if failed else ""))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="edgevr",
        description="multi-user VR pipeline simulator and environment service")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-traces", help="sample workload traces to a file")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--episodes", type=int, default=None,
                   help="override the configured episode count")
    g.add_argument("--seed", type=int, default=None,
                   help="override the configured seed")
    g.set_defaults(fn=_cmd_gen_traces)

    s = sub.add_parser("serve-env", help="serve sessions over TCP")
    s.add_argument("--config", required=True)
    s.add_argument("--traces", required=True)
    s.add_argument("--listen", type=_parse_listen,
                   default="127.0.0.1:7010", metavar="HOST:PORT")
    s.add_argument("--event-log", default=None,
                   help="append pipeline events to this file")
    s.set_defaults(fn=_cmd_serve_env)

    a = sub.add_parser("serve-api", help="serve the HTTP API")
    a.add_argument("--config", required=True)
    a.add_argument("--traces", required=True)
    a.add_argument("--listen", type=_parse_listen,
                   default="127.0.0.1:8000", metavar="HOST:PORT")
    a.set_defaults(fn=_cmd_serve_api)

    r = sub.add_parser("run-baseline",
                       help="evaluate a baseline in process, write CSV")
    r.add_argument("--config", required=True)
    r.add_argument("--traces", required=True)
    r.add_argument("--kind", required=True, choices=BASELINE_NAMES)
    r.add_argument("--episodes", type=int, default=1,
                   help="number of trace episodes to run")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=_cmd_run_baseline)

    e = sub.add_parser("evaluate",
                       help="evaluate a baseline against a remote server")
    e.add_argument("--endpoint", required=True, type=_parse_listen,
                   metavar="HOST:PORT")
    e.add_argument("--kind", required=True, choices=BASELINE_NAMES)
    e.add_argument("--episodes", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=_cmd_evaluate)

    w = sub.add_parser("sweep", help="grid over a resource total, write CSV")
    w.add_argument("--config", required=True)
    w.add_argument("--traces", required=True)
    w.add_argument("--var", required=True, choices=SWEEP_VARIABLES)
    w.add_argument("--grid", required=True, type=_parse_grid,
                   help="comma list or START:STOP:STEP range")
    w.add_argument("--kind", required=True, choices=BASELINE_NAMES)
    w.add_argument("--episodes", type=int, default=1)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out", required=True)
    w.set_defaults(fn=_cmd_sweep)
    return p


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ConfigError, TraceParseError, FileNotFoundError) as exc:
        raise SystemExit(f"error: {exc}")


if __name__ == "__main__":
    main()
