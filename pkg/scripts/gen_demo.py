#!/usr/bin/env python3
"""Generate the shipped demo session and the standard scenario file."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from microcity.canonical import canonical_json  # noqa: E402
from microcity.sim_core import run_headless, standard_grid_scenario  # noqa: E402
from microcity.telemetry_analytics import write_log  # noqa: E402

DATA = os.path.join(os.path.dirname(__file__), "..", "src", "microcity", "data")


def main():
    scen = standard_grid_scenario("defensive", seed=7, duration_s=30.0)
    log = run_headless(scen)
    os.makedirs(os.path.join(DATA, "demo"), exist_ok=True)
    write_log(log, os.path.join(DATA, "demo", "defensive-demo"))
    with open(os.path.join(DATA, "standard_grid.scenario.json"), "w") as f:
        f.write(canonical_json(standard_grid_scenario("defensive", seed=1).to_obj()) + "\n")
    print("wrote demo session and standard scenario")


if __name__ == "__main__":
    main()
