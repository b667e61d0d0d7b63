import pytest

from edgevr.baselines import EpisodeMetrics
from edgevr.config import RunConfig
from edgevr.metrics import read_metrics_csv, write_metrics_csv
from edgevr.sweep import run_sweep, write_sweep_csv
from edgevr.workload import TraceSet, WorkloadParams, generate_traces


def sample_rows():
    return [
        EpisodeMetrics(0, 12.5, 30.0, 1.0, 4, 0.75),
        EpisodeMetrics(1, 7.5, 10.0, 0.0, 0, 1.0),
    ]


def test_metrics_csv_roundtrip(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv(path, sample_rows(), {"config_sha256": "abc", "seed": "3"})
    meta, rows = read_metrics_csv(path)
    assert meta == {"config_sha256": "abc", "seed": "3"}
    assert rows[0]["episode"] == 0
    assert rows[0]["mean_age_ms"] == 12.5
    assert rows[1]["feasible_fraction"] == 1.0
    assert rows[-1]["episode"] == "ALL"
    assert rows[-1]["mean_age_ms"] == 10.0
    assert rows[-1]["mean_energy_j"] == 20.0
    assert rows[-1]["drops_total"] == 2.0


def test_metrics_csv_is_reproducible(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_metrics_csv(a, sample_rows(), {"seed": "0"})
    write_metrics_csv(b, sample_rows(), {"seed": "0"})
    assert a.read_bytes() == b.read_bytes()
    assert b"\r" not in a.read_bytes()


def test_metrics_csv_full_float_precision(tmp_path):
    path = tmp_path / "m.csv"
    value = 0.1 + 0.2   # not representable as a short decimal
    write_metrics_csv(path, [EpisodeMetrics(0, value, 0.0, 0.0, 0, 0.0)], {})
    _, rows = read_metrics_csv(path)
    assert rows[0]["mean_age_ms"] == value


def test_metrics_csv_empty_is_header_only(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [], {"seed": "0"})
    assert path.read_text() == ("# seed=0\nepisode,mean_age_ms,mean_energy_j,"
                                "mean_cost,drops_total,feasible_fraction\n")
    meta, rows = read_metrics_csv(path)
    assert meta == {"seed": "0"} and rows == []


def test_metrics_csv_read_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("nope,header\n")
    with pytest.raises(ValueError, match="unexpected header"):
        read_metrics_csv(bad)
    bad.write_text("# only=meta\n")
    with pytest.raises(ValueError, match="no header row"):
        read_metrics_csv(bad)


def make_inputs(users=2, horizon=5, episodes=2):
    cfg = RunConfig()
    cfg.sim.users = users
    cfg.sim.horizon = horizon
    cfg.workload.episodes = episodes
    traces = TraceSet(generate_traces(WorkloadParams.from_config(cfg),
                                      episodes, users, horizon, seed=11))
    return cfg, traces


def test_sweep_runs_grid(tmp_path):
    cfg, traces = make_inputs()
    rows = run_sweep(cfg, traces, "bandwidth", [1e8, 5e8], "plf", [0], seed=2)
    assert [r["value"] for r in rows] == [1e8, 5e8]
    assert all(r["status"] == "ok" for r in rows)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(path, rows, {"variable": "bandwidth"})
    text = path.read_text()
    assert text.startswith("# variable=bandwidth\n")
    assert "variable,value,status" in text.splitlines()[1]
    assert len(text.splitlines()) == 4


def test_sweep_matches_direct_run():
    import dataclasses

    from edgevr.baselines import evaluate_policy
    from edgevr.env import VREnv

    cfg, traces = make_inputs()
    rows = run_sweep(cfg, traces, "gpu", [2e10], "pff", [0, 1], seed=7)
    res = dataclasses.replace(cfg.resources, total_edge_gpu_hz=2e10)
    direct = evaluate_policy(VREnv(dataclasses.replace(cfg, resources=res),
                                   traces), "pff", [0, 1], seed=7)
    assert rows[0]["mean_age_ms"] == pytest.approx(
        (direct[0].mean_age_ms + direct[1].mean_age_ms) / 2, rel=1e-12)
    assert rows[0]["drops_total"] == (direct[0].drops_total
                                      + direct[1].drops_total) / 2


def test_sweep_records_per_point_failure(tmp_path):
    cfg, traces = make_inputs()
    rows = run_sweep(cfg, traces, "bandwidth", [1e8, -1.0], "plf", [0])
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"].startswith("error:")
    assert "," not in rows[1]["status"]
    path = tmp_path / "sweep.csv"
    write_sweep_csv(path, rows, {})
    failed = path.read_text().splitlines()[-1]
    assert failed.startswith("bandwidth,-1.0,error:")


def test_sweep_parallel_matches_serial():
    cfg, traces = make_inputs()
    serial = run_sweep(cfg, traces, "bandwidth", [1e8, 2e8, 4e8], "meclf",
                       [0], seed=1, workers=1)
    parallel = run_sweep(cfg, traces, "bandwidth", [1e8, 2e8, 4e8], "meclf",
                         [0], seed=1, workers=3)
    assert serial == parallel


def test_sweep_rejects_unknown_variable():
    cfg, traces = make_inputs()
    with pytest.raises(ValueError, match="unknown sweep variable"):
        run_sweep(cfg, traces, "latency", [1.0], "plf", [0])
    with pytest.raises(ValueError, match="empty sweep grid"):
        run_sweep(cfg, traces, "bandwidth", [], "plf", [0])
