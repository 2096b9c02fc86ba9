"""Trace analysis on a synthetic BurstGPT-style trace.

The real trace is not bundled, so we synthesize one day of conversation
traffic whose Gamma shape drifts over the day, then run the same analyses
the `analyze` command performs.
"""

from __future__ import annotations

import numpy as np

from burstbench import trace
from burstbench.distfit import ParameterSchedule, window_fit
from burstbench.trace import Service, TraceRecord
from burstbench.workload import gen_arrivals

# quiet mornings (alpha near 1), burstier afternoons (alpha dips to 0.3)
day = ParameterSchedule(alpha=(1.2e-10, -1.04e-5, 1.0), beta=(0.0, 2.0), update_interval=1200)
times = gen_arrivals(day, 86_400, seed=0)
rng = np.random.default_rng(0)
records = [
    TraceRecord(float(t), "ChatGPT", Service.CONVERSATION, int(rng.zipf(2.0)) % 2048 + 1,
                int(rng.lognormal(5, 0.8)), bool(rng.random() < 0.05))
    for t in times
]
print(f"{len(records)} requests over one day")

# Per-minute counts and short-horizon doubling events.
counts = trace.window_counts(records, 60)
print("busiest minute:", counts.counts.max(), "requests; quietest:", counts.counts.min())
for minutes in (5, 10):
    print(f"doubling events within {minutes} min:", trace.doubling_events(counts, minutes))

# Failure rate per (model, service).
for s in trace.failure_stats(records):
    print(f"{s.model}/{s.service.value}: {s.failures}/{s.total} failed ({s.rate:.1%})")

# Gamma fits per 20-minute window recover the drifting shape.
fits = window_fit(records, 1200)
print("window  alpha_fit  alpha_true")
for i, g in fits.fits[::6]:
    print(f"{i:6d}  {g.alpha:9.3f}  {day.at(i * 1200)[0]:10.3f}")

tput = trace.throughput_series(records, 3600)
print("hourly request tokens/s:", np.round(tput[:, 0], 1).tolist())
