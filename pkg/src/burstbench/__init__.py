"""Bursty LLM serving workloads: trace analysis, Gamma/Zipf workload models,
a continuous-batching engine simulator and an open-loop HTTP driver."""

from __future__ import annotations

from .distfit import GammaParams, ParameterSchedule, ZipfParams, eval_schedule, fit_gamma, fit_zipf, window_fit
from .driver import DispatchResult, EndpointUnreachable, TargetEndpoint, dispatch, run_sim
from .engine import BimodalResponse, EmpiricalResponse, Engine, EngineConfig, PeakedAtMaxResponse, run
from .metrics import MetricsReport, RequestRecord, Status, StepRecord, aggregate, export
from .scenario import ScenarioConfig, bench, sweep
from .trace import FailureStats, TraceRecord, doubling_events, failure_stats, parse_trace, read_trace, window_counts
from .workload import (
    Calibration,
    CalibrationError,
    PromptPool,
    WorkloadPlan,
    build_pool,
    calibrate_beta,
    gen_arrivals,
    load_pool,
    make_plan,
    pick_prompt,
    synthetic_pool,
)

__all__ = [
    "BimodalResponse", "Calibration", "CalibrationError", "DispatchResult", "EmpiricalResponse", "Engine",
    "EngineConfig", "EndpointUnreachable", "FailureStats", "GammaParams", "MetricsReport", "ParameterSchedule",
    "PeakedAtMaxResponse", "PromptPool", "RequestRecord", "ScenarioConfig", "Status", "StepRecord",
    "TargetEndpoint", "TraceRecord", "WorkloadPlan", "ZipfParams", "aggregate", "bench", "build_pool",
    "calibrate_beta", "dispatch", "doubling_events", "eval_schedule", "export", "failure_stats", "fit_gamma",
    "fit_zipf", "gen_arrivals", "load_pool", "make_plan", "parse_trace", "pick_prompt", "read_trace", "run", "run_sim",
    "sweep", "synthetic_pool", "window_counts", "window_fit",
]
