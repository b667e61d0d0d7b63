import subprocess
import sys

import pytest

from edgevr.cli import _parse_listen, build_parser, main
from edgevr.config import RunConfig
from edgevr.metrics import read_metrics_csv
from edgevr.workload import WorkloadParams, load_traces


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = RunConfig()
    cfg.sim.users = 2
    cfg.sim.horizon = 6
    cfg.workload.episodes = 3
    path = root / "run.cfg"
    cfg.save(path)
    return path


@pytest.fixture(scope="module")
def traces_path(config_path):
    path = config_path.parent / "traces.txt"
    main(["gen-traces", "--config", str(config_path), "--out", str(path)])
    return path


def test_parse_listen():
    assert _parse_listen(":7010") == ("127.0.0.1", 7010)
    assert _parse_listen("0.0.0.0:80") == ("0.0.0.0", 80)
    with pytest.raises(Exception):
        _parse_listen("no-port")


def test_gen_traces_is_deterministic(config_path, traces_path, tmp_path):
    cfg = RunConfig.load(config_path)
    traces = load_traces(traces_path, WorkloadParams.from_config(cfg))
    assert traces.episodes == [0, 1, 2]
    again = tmp_path / "again.txt"
    main(["gen-traces", "--config", str(config_path), "--out", str(again)])
    assert again.read_bytes() == traces_path.read_bytes()


def test_run_baseline_replays_identically(config_path, traces_path, tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        main(["run-baseline", "--config", str(config_path),
              "--traces", str(traces_path), "--kind", "plf",
              "--episodes", "2", "--seed", "5", "--out", str(out)])
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    meta, rows = read_metrics_csv(outs[0])
    assert meta["config_sha256"] == RunConfig.load(config_path).config_hash()
    assert meta["baseline"] == "plf"
    assert [r["episode"] for r in rows] == [0, 1, "ALL"]


def test_evaluate_matches_run_baseline(config_path, traces_path, tmp_path):
    local = tmp_path / "local.csv"
    main(["run-baseline", "--config", str(config_path),
          "--traces", str(traces_path), "--kind", "pff",
          "--episodes", "3", "--seed", "2", "--out", str(local)])

    event_log = tmp_path / "events.log"
    proc = subprocess.Popen(
        [sys.executable, "-m", "edgevr.cli", "serve-env",
         "--config", str(config_path), "--traces", str(traces_path),
         "--listen", "127.0.0.1:0", "--event-log", str(event_log)],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    try:
        line = proc.stdout.readline().strip()
        assert line.startswith("listening on "), line
        endpoint = line.removeprefix("listening on ")

        remote = tmp_path / "remote.csv"
        main(["evaluate", "--endpoint", endpoint, "--kind", "pff",
              "--episodes", "3", "--seed", "2", "--out", str(remote)])
        assert remote.read_bytes() == local.read_bytes()
    finally:
        proc.terminate()
        proc.wait(timeout=10)
    assert "enqueue->" in event_log.read_text()


def test_sweep_cli(config_path, traces_path, tmp_path):
    out = tmp_path / "sweep.csv"
    main(["sweep", "--config", str(config_path), "--traces",
          str(traces_path), "--var", "bandwidth", "--grid", "2e8:4e8:2e8",
          "--kind", "meclf", "--episodes", "1", "--out", str(out)])
    lines = out.read_text().splitlines()
    assert lines[-1].startswith("bandwidth,400000000.0,ok,")
    assert len([ln for ln in lines if not ln.startswith("#")]) == 3


def test_cli_errors(config_path, traces_path, tmp_path):
    with pytest.raises(SystemExit, match="error:"):
        main(["run-baseline", "--config", "/nope/run.cfg",
              "--traces", str(traces_path), "--kind", "plf",
              "--out", str(tmp_path / "x.csv")])
    with pytest.raises(SystemExit, match="trace holds 3 episodes"):
        main(["run-baseline", "--config", str(config_path),
              "--traces", str(traces_path), "--kind", "plf",
              "--episodes", "9", "--out", str(tmp_path / "x.csv")])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["serve-env", "--config", "c",
                                   "--traces", "t", "--listen", "bad"])
