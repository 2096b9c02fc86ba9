"""Benchmark scenarios: engine profile + schedule + prompt pool + run settings,
and the bench/sweep pipelines built on them."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import driver, engine
from .distfit import ParameterSchedule, eval_schedule
from .metrics import MetricsReport, RequestRecord, StepRecord, aggregate
from .workload import Calibration, PromptPool, WorkloadPlan, calibrate_beta, load_pool, make_plan, synthetic_pool


def load_config(path: str | Path) -> dict:
    """Read a YAML or JSON config file (JSON is parsed as YAML)."""
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return data


def _section(value, base_dir: Path) -> tuple[dict, Path]:
    if isinstance(value, dict):
        return value, base_dir
    path = Path(value)
    if not path.is_absolute():
        path = base_dir / path
    return load_config(path), path.parent


@dataclass
class ScenarioConfig:
    engine: engine.EngineConfig
    schedule: ParameterSchedule
    pool: PromptPool
    duration: float
    warmup: float = 1000.0
    burst_interval_requests: int = 200
    trigger: str = "time"
    seed: int = 0
    window_s: float = 60.0
    calibrate: tuple[float, float] | None = None
    calibrate_requests: int = 1000
    endpoint: driver.TargetEndpoint | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if not 0 <= self.warmup < self.duration:
            raise ValueError(f"warmup ({self.warmup}) must be < duration ({self.duration})")
        if self.trigger not in ("time", "count"):
            raise ValueError("trigger must be 'time' or 'count'")

    @classmethod
    def from_dict(cls, cfg: dict, base_dir: Path = Path(".")) -> "ScenarioConfig":
        known = {
            "engine_profile", "schedule", "pool", "duration_s", "warmup_s", "burst_interval_requests",
            "trigger", "seed", "window_s", "calibrate", "endpoint",
        }
        extra = set(cfg) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        profile, profile_dir = _section(cfg["engine_profile"], base_dir)
        sched_cfg, _ = _section(cfg.get("schedule", {}), base_dir)
        schedule = ParameterSchedule.from_config(sched_cfg)
        seed = int(cfg.get("seed", 0))
        pool_ref = cfg.get("pool")
        if pool_ref is None:
            pool = synthetic_pool(schedule.l_max)
        else:
            path = Path(pool_ref)
            pool = load_pool(path if path.is_absolute() else base_dir / path, l_max=schedule.l_max, seed=seed)
        cal = cfg.get("calibrate")
        calibrate = None
        calibrate_requests = 1000
        if cal:
            lo, hi = cal.get("target", (0.30, 0.40))
            calibrate = (float(lo), float(hi))
            calibrate_requests = int(cal.get("n_requests", 1000))
        endpoint = driver.TargetEndpoint.from_config(cfg["endpoint"]) if cfg.get("endpoint") else None
        return cls(
            engine=engine.EngineConfig.from_config(profile, profile_dir),
            schedule=schedule,
            pool=pool,
            duration=float(cfg["duration_s"]),
            warmup=float(cfg.get("warmup_s", 1000.0)),
            burst_interval_requests=int(cfg.get("burst_interval_requests", 200)),
            trigger=str(cfg.get("trigger", "time")),
            seed=seed,
            window_s=float(cfg.get("window_s", 60.0)),
            calibrate=calibrate,
            calibrate_requests=calibrate_requests,
            endpoint=endpoint,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        return cls.from_dict(load_config(path), path.parent)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def params_at(schedule: ParameterSchedule, t: float, warmup: float = 0.0, trigger: str = "time"):
    """Parameters in force at run time ``t``. For count-triggered scenarios
    this is the schedule value at ``t``, which the most recent refresh
    approximates to within one burst interval."""
    elapsed = max(0.0, t - warmup)
    return eval_schedule(schedule, elapsed) if trigger == "time" else schedule.at(elapsed)


@dataclass
class BenchResult:
    report: MetricsReport
    records: list[RequestRecord]
    steps: list[StepRecord]
    plan: WorkloadPlan
    schedule: ParameterSchedule
    calibration: Calibration | None = None
    send_lag: np.ndarray | None = None
    window_params: list[tuple[float, float, float, float]] = field(default_factory=list)


def bench(scenario: ScenarioConfig, target: str = "sim") -> BenchResult:
    """Calibrate (if configured), generate the plan, run it on ``target`` and aggregate."""
    driver.validate_target(target, scenario.endpoint)
    schedule = scenario.schedule
    calibration = None
    if scenario.calibrate is not None:
        calibration = calibrate_beta(
            scenario.engine, schedule, scenario.pool, scenario.calibrate,
            seed=scenario.seed, n_requests=scenario.calibrate_requests,
        )
        schedule = calibration.schedule
    plan = make_plan(
        schedule, scenario.pool, scenario.duration, scenario.seed,
        warmup=scenario.warmup, trigger=scenario.trigger, burst_interval=scenario.burst_interval_requests,
    )
    send_lag = None
    if target == "sim":
        records, steps = driver.run_sim(plan, scenario.engine, scenario.seed)
    else:
        result = driver.dispatch(plan, scenario.endpoint, scenario.pool)
        records, steps, send_lag = result.records, [], result.send_lag
    if not records:
        raise ValueError("plan produced no requests; increase duration or lower beta")
    report = aggregate(records, steps, scenario.window_s, scenario.engine.kv_capacity_tokens)
    window_params = [
        (w.window_start_s, *params_at(schedule, w.window_start_s, scenario.warmup, scenario.trigger))
        for w in report.series
    ]
    return BenchResult(report, records, steps, plan, schedule, calibration, send_lag, window_params)


SWEEP_HEADER = (
    "parameter", "value", "status", "n_requests", "mean_interarrival_s", "cv_interarrival",
    "mean_request_tokens", "R_avg", "L_avg_s_per_token", "latency_p90_s", "P_avg_tokens_per_s",
    "mean_latency_s", "kv_utilization",
)


def _with_constant(schedule: ParameterSchedule, parameter: str, value: float) -> ParameterSchedule:
    d = dataclasses.asdict(schedule)
    if parameter == "alpha":
        d["alpha"] = (0.0, 0.0, value)
    elif parameter == "beta":
        d["beta"] = (0.0, value)
    elif parameter == "theta":
        d["theta"] = (0.0, value)
    else:
        raise ValueError(f"parameter must be alpha, beta or theta, got {parameter!r}")
    return ParameterSchedule(**d)


def sweep_point(scenario: ScenarioConfig, schedule: ParameterSchedule, parameter: str, value: float) -> dict:
    sched = _with_constant(schedule, parameter, value)
    plan = make_plan(sched, scenario.pool, scenario.duration, scenario.seed)
    records, steps = engine.run(plan, scenario.engine, scenario.seed)
    report = aggregate(records, steps, scenario.window_s, scenario.engine.kv_capacity_tokens)
    gaps = np.diff(plan.arrival_times)
    latencies = [r.latency for r in records if not r.failed]
    span = plan.events[-1].arrival_time if plan.events else 0.0
    return {
        "parameter": parameter,
        "value": value,
        "status": "ok",
        "n_requests": len(plan),
        "mean_interarrival_s": float(gaps.mean()) if len(gaps) else math.nan,
        "cv_interarrival": float(gaps.std() / gaps.mean()) if len(gaps) and gaps.mean() > 0 else math.nan,
        "mean_request_tokens": float(plan.request_tokens.mean()),
        "R_avg": report.R_avg,
        "L_avg_s_per_token": report.L_avg,
        "latency_p90_s": report.latency_p90,
        "P_avg_tokens_per_s": report.P_avg,
        "mean_latency_s": float(np.mean(latencies)) if latencies else None,
        "kv_utilization": engine.mean_kv_utilization(steps, scenario.engine.kv_capacity_tokens, 0.0, span) if span > 0 else None,
    }


def sweep(scenario: ScenarioConfig, parameter: str, grid) -> list[dict]:
    """One steady run per grid value, all from the same seed so every point
    shares its underlying random numbers. The swept parameter is held
    constant at the grid value; the others keep their t=0 values. A point
    that raises is reported with status ``failed: ...`` and the sweep goes on."""
    if parameter not in ("alpha", "beta", "theta"):
        raise ValueError(f"parameter must be alpha, beta or theta, got {parameter!r}")
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    a0, b0, c0 = scenario.schedule.at(0.0)
    base = ParameterSchedule.constant(a0, b0, c0, l_max=scenario.schedule.l_max,
                                      update_interval=scenario.schedule.update_interval)
    if scenario.calibrate is not None and parameter != "beta":
        base = calibrate_beta(scenario.engine, base, scenario.pool, scenario.calibrate,
                              seed=scenario.seed, n_requests=scenario.calibrate_requests).schedule
    rows = []
    for value in grid:
        try:
            rows.append(sweep_point(scenario, base, parameter, float(value)))
        except (ValueError, RuntimeError) as exc:
            row = {k: None for k in SWEEP_HEADER}
            row.update(parameter=parameter, value=float(value), status=f"failed: {exc}")
            rows.append(row)
    return rows
