"""One-parameter sweeps over alpha, beta and theta with common random numbers."""

from __future__ import annotations

from pathlib import Path

from burstbench.scenario import ScenarioConfig, sweep

configs = Path(__file__).resolve().parent.parent / "configs"
scenario = ScenarioConfig.from_file(configs / "steady_scenario.yaml").replace(duration=2000.0)

columns = ("value", "mean_interarrival_s", "cv_interarrival", "mean_request_tokens", "R_avg",
           "latency_p90_s", "P_avg_tokens_per_s")
grids = {"alpha": [0.25, 0.5, 1.0], "beta": [0.35, 0.25, 0.15, 0.1], "theta": [1.0, 1.1, 1.2]}
for parameter, grid in grids.items():
    print(f"\n{parameter} sweep")
    print("  ".join(f"{c:>14}" for c in columns))
    for row in sweep(scenario, parameter, grid):
        print("  ".join(f"{row[c]:14.4g}" if row[c] is not None else f"{'-':>14}" for c in columns))
