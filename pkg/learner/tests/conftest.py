"""Shared fixture: a live environment service for the whole session.

The learner is exercised only through the service's wire protocol, so the
fixture shells out to the ``edgevr`` CLI: write a small config, generate
traces, start ``serve-env`` on an ephemeral port and parse the address it
prints.
"""

import subprocess
import sys
from pathlib import Path

import pytest

CONFIG_TEXT = """\
sim.users = 2
sim.horizon = 50
workload.episodes = 16
"""


@pytest.fixture(scope="session")
def env_server(tmp_path_factory):
    root = tmp_path_factory.mktemp("envsrv")
    config = root / "smoke.cfg"
    traces = root / "traces.txt"
    config.write_text(CONFIG_TEXT)
    subprocess.run(
        [sys.executable, "-m", "edgevr.cli", "gen-traces",
         "--config", str(config), "--out", str(traces)],
        check=True, capture_output=True)
    server = subprocess.Popen(
        [sys.executable, "-m", "edgevr.cli", "serve-env",
         "--config", str(config), "--traces", str(traces),
         "--listen", "127.0.0.1:0"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    try:
        line = server.stdout.readline()
        if not line.startswith("listening on "):
            raise RuntimeError(f"unexpected server banner: {line!r}")
        host, _, port = line.split()[-1].rpartition(":")
        yield host, int(port)
    finally:
        server.terminate()
        server.wait(timeout=10)
