"""A calibrated warm-up followed by a burst: watch failures appear and clear.

Runs the shipped burst scenario (toy engine, alpha dip after a 1000 s
warm-up) on the simulator and prints the per-window metrics next to the
schedule parameters in force.
"""

from __future__ import annotations

from pathlib import Path

from burstbench.scenario import ScenarioConfig, bench

configs = Path(__file__).resolve().parent.parent / "configs"
scenario = ScenarioConfig.from_file(configs / "burst_scenario.yaml")
result = bench(scenario)

cal = result.calibration
print(f"beta scaled by {cal.multiplier:.3f} for {cal.utilization:.1%} steady KV utilization")
r = result.report
print(f"{r.total} requests, failure rate {r.R_avg:.3f}, p90 latency {r.latency_p90:.1f}s, "
      f"throughput {r.P_avg:.0f} tok/s\n")

print(" window   alpha   cv     R_ins   P_ins   kv_util")
for w, (_, alpha, beta, theta) in zip(r.series, result.window_params):
    if w.window_start_s % 120 == 0 or w.R_ins > 0:
        print(f"{w.window_start_s:7.0f}  {alpha:6.3f}  {alpha ** -0.5:4.2f}  {w.R_ins:6.3f}  "
              f"{w.P_ins:6.0f}  {w.kv_utilization:7.2f}")
