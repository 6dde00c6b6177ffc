"""Client conformance (secondary component): a scripted headless client
drives a figure-eight through the live protocol. Skipped unless the frontend
has been built (`npm install && npm run build:conformance` in frontend/).
"""

import json
import os
import shutil
import signal
import socket
import subprocess
import sys
import time

import pytest

from microcity.canonical import canonical_json
from microcity.map_model import generate_grid
from microcity.sim_core import standard_grid_scenario
from microcity.telemetry_analytics import read_log

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FRONTEND = os.path.join(ROOT, "frontend")
RUNNER = os.path.join(FRONTEND, "dist-node", "figure_eight.cjs")

pytestmark = pytest.mark.skipif(
    not (os.path.exists(RUNNER) and shutil.which("node")),
    reason="frontend conformance runner not built",
)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def conformance_scenario_obj():
    """3x3 grid without signals; one externally driven vehicle."""
    mobj = generate_grid(3, 3, 1.2, 0.15, 0.6).to_obj()
    mobj["signals"] = []
    mobj["schedules"] = {}
    obj = standard_grid_scenario("defensive", seed=1, duration_s=3600.0).to_obj()
    obj["name"] = "client-conformance"
    obj["map"] = {"embedded": mobj}
    obj["schedule_overrides"] = {}
    obj["vehicles"] = [{
        "vehicle_id": "car1",
        "params": obj["vehicles"][0]["params"],
        "noise": "off",
        "start": {"lane_id": "h0-0:F0", "s": 0.3, "v": 0.0},
        "controller": {"kind": "external"},
    }]
    obj["subject_vehicle_id"] = "car1"
    return obj


def lane_entries(records, vehicle_id, lane_id):
    entries = 0
    prev = None
    for r in records:
        if r.vehicle_id != vehicle_id:
            continue
        if r.lane_id == lane_id and prev != lane_id:
            entries += 1
        prev = r.lane_id
    return entries


def test_figure_eight_conformance(tmp_path):
    scen_path = tmp_path / "conformance.scenario.json"
    scen_path.write_text(canonical_json(conformance_scenario_obj()) + "\n")
    tcp, ws, http = free_port(), free_port(), free_port()
    out_dir = tmp_path / "sessions"
    out_dir.mkdir()

    dist = os.path.join(FRONTEND, "dist")
    server = subprocess.Popen(
        [sys.executable, "-m", "microcity.cli", "serve",
         "--scenario", str(scen_path), "--port", str(tcp), "--ws-port", str(ws),
         "--http-port", str(http), "--out", str(out_dir), "--pace", "5",
         "--state-rate", "20"]
        + (["--static-dir", dist] if os.path.isdir(dist) else []),
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True,
    )
    try:
        line = server.stdout.readline()
        assert "microcity serve" in line, f"server failed to start: {line}"

        if os.path.isdir(dist):
            import urllib.request

            with urllib.request.urlopen(f"http://127.0.0.1:{http}/index.html") as r:
                assert b"microcity drive station" in r.read()
        report_path = tmp_path / "report.json"
        run = subprocess.run(
            ["node", RUNNER, f"ws://127.0.0.1:{ws}", f"http://127.0.0.1:{http}",
             str(report_path), "2"],
            capture_output=True, text=True, timeout=360,
        )
        assert run.returncode == 0, f"client failed: {run.stdout}\n{run.stderr}"
        report = json.loads(report_path.read_text())

        # client-side: completed laps, send-rate cap respected
        assert report["laps"] >= 2
        assert report["max_in_1s"] <= 50

        # server-side: the session log shows both rings lapped twice,
        # with no lane-change events anywhere
        log = read_log(report["telemetry_path"])
        assert log.header["driver_label"] == "scripted-figure-eight"
        records = log.records
        assert lane_entries(records, "car1", "v0-1:F0") >= 2   # lower ring
        assert lane_entries(records, "car1", "h1-1:F0") >= 2   # upper ring
        assert not any(e.kind == "lane_change" for e in log.events)
        assert not any(e.kind == "collision" for e in log.events)
        assert not any(e.kind == "off_road" for e in log.events)
    finally:
        server.send_signal(signal.SIGINT)
        try:
            server.wait(timeout=10)
        except subprocess.TimeoutExpired:
            server.kill()
