"""Parameter sweeps over resource totals.

A sweep runs one baseline over the same episodes at each grid point of a
single scalar (total bandwidth or total edge GPU), aggregates per-episode
metrics into one row per point, and records failures per point instead of
aborting the grid.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Optional

from .baselines import evaluate_policy
from .config import RunConfig
from .env import VREnv
from .metrics import _fmt
from .workload import TraceSet

SWEEP_VARIABLES = ("bandwidth", "gpu")
SWEEP_COLUMNS = ("variable", "value", "status", "mean_age_ms",
                 "mean_energy_j", "mean_cost", "drops_total",
                 "feasible_fraction")

_W_CONFIG: Optional[RunConfig] = None
_W_TRACES: Optional[TraceSet] = None


def _with_value(config: RunConfig, variable: str, value: float) -> RunConfig:
    if variable == "bandwidth":
        res = dataclasses.replace(config.resources, total_bandwidth_hz=value)
    elif variable == "gpu":
        res = dataclasses.replace(config.resources, total_edge_gpu_hz=value)
    else:
        raise ValueError(f"unknown sweep variable {variable!r}, expected one "
                         f"of {', '.join(SWEEP_VARIABLES)}")
    return dataclasses.replace(config, resources=res)


def _run_point(config: RunConfig, traces: TraceSet, variable: str,
               value: float, baseline: str, episodes: list[int],
               seed: int) -> dict:
    row: dict = {"variable": variable, "value": value}
    try:
        env = VREnv(_with_value(config, variable, value), traces)
        results = evaluate_policy(env, baseline, episodes, seed)
        n = len(results)
        row["status"] = "ok"
        row["mean_age_ms"] = sum(m.mean_age_ms for m in results) / n
        row["mean_energy_j"] = sum(m.mean_energy_j for m in results) / n
        row["mean_cost"] = sum(m.mean_cost for m in results) / n
        row["drops_total"] = sum(m.drops_total for m in results) / n
        row["feasible_fraction"] = sum(m.feasible_fraction
                                       for m in results) / n
    except Exception as exc:   # keep the grid going, report per point
        row["status"] = "error: " + str(exc).replace(",", ";")
    return row


def _init_worker(config: RunConfig, traces: TraceSet) -> None:
    global _W_CONFIG, _W_TRACES
    _W_CONFIG = config
    _W_TRACES = traces


def _point_task(args: tuple) -> dict:
    variable, value, baseline, episodes, seed = args
    assert _W_CONFIG is not None and _W_TRACES is not None
    return _run_point(_W_CONFIG, _W_TRACES, variable, value, baseline,
                      list(episodes), seed)


def run_sweep(config: RunConfig, traces: TraceSet, variable: str,
              grid: Iterable[float], baseline: str, episodes: list[int],
              seed: int = 0, workers: int = 1) -> list[dict]:
    values = [float(v) for v in grid]
    if not values:
        raise ValueError("empty sweep grid")
    _with_value(config, variable, values[0])   # validates the variable name
    if workers <= 1 or len(values) == 1:
        return [_run_point(config, traces, variable, v, baseline, episodes,
                           seed) for v in values]
    tasks = [(variable, v, baseline, episodes, seed) for v in values]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(config, traces)) as pool:
        return list(pool.map(_point_task, tasks))


def write_sweep_csv(path: str | Path, rows: list[dict],
                    meta: dict[str, str]) -> None:
    if not rows:
        raise ValueError("no sweep rows to write")
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append(",".join(SWEEP_COLUMNS))
    for row in rows:
        fields = [str(row["variable"]), _fmt(float(row["value"])),
                  row["status"]]
        if row["status"] == "ok":
            fields += [_fmt(row[c]) for c in SWEEP_COLUMNS[3:]]
        else:
            fields += [""] * (len(SWEEP_COLUMNS) - 3)
        if any("," in f for f in fields):
            raise ValueError("sweep fields must not contain commas")
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")
