#!/usr/bin/env python3
"""Generate the shipped z-score baseline from seeded preset runs.

100 runs of the standard grid scenario (50 per preset) -> per-metric mean and
std written to src/microcity/data/baseline_v1.json. Regenerate only when the
standard scenario or the presets change; analytics results depend on it.
"""

import json
import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from microcity.sim_core import run_headless, standard_grid_scenario  # noqa: E402
from microcity.telemetry_analytics import FIT_METRICS, compute_metrics  # noqa: E402

RUNS_PER_PRESET = 50
OUT = os.path.join(os.path.dirname(__file__), "..", "src", "microcity", "data",
                   "baseline_v1.json")

# index/z-scoring happens downstream; here we only need raw metric values,
# so feed a throwaway flat baseline
FLAT = {m: {"mean": 0.0, "std": 1.0} for m in FIT_METRICS}


def main():
    samples = {m: [] for m in FIT_METRICS}
    for preset in ("defensive", "aggressive"):
        for seed in range(1, RUNS_PER_PRESET + 1):
            log = run_headless(standard_grid_scenario(preset, seed=seed, duration_s=60.0))
            graph_digest = log.header["map_digest"]
            from microcity.sim_core import build_scenario_graph, standard_grid_scenario as sgs
            graph = build_scenario_graph(sgs(preset, seed=seed, duration_s=60.0))
            assert graph.digest == graph_digest
            m = compute_metrics(log, graph, baseline=FLAT).to_obj()
            for name in FIT_METRICS:
                v = m.get(name)
                if v is not None and not (isinstance(v, float) and math.isnan(v)):
                    samples[name].append(float(v))
            print(f"{preset} seed {seed}: done", flush=True)

    metrics = {}
    for name, xs in samples.items():
        if xs:
            metrics[name] = {
                "mean": float(np.mean(xs)),
                "std": float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0,
                "n": len(xs),
            }
        else:
            metrics[name] = {"mean": 0.0, "std": 1.0, "n": 0}

    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w", encoding="utf-8") as f:
        json.dump({
            "version": 1,
            "source": f"standard-grid, {RUNS_PER_PRESET} seeds per preset",
            "metrics": metrics,
        }, f, indent=1, sort_keys=True)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
