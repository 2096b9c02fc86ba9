"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 input error, 3 target or
calibration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import distfit, driver, trace
from .engine import fit_bimodal
from .metrics import export, records_csv, series_csv, summary_csv
from .scenario import SWEEP_HEADER, ScenarioConfig, bench, load_config, sweep
from .workload import CalibrationError, build_pool, calibrate_beta, load_pool, make_plan, read_corpus, synthetic_pool

logger = logging.getLogger("burstbench")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_TARGET = 0, 1, 2, 3
DAY_S = 86400.0


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(out.getvalue(), encoding="utf-8")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_trace(args):
    path = Path(args.trace)
    if not path.exists():
        raise InputError(f"trace file not found: {path}")
    columns = trace.BURSTGPT_COLUMNS if args.burstgpt_columns else None
    try:
        records = trace.read_trace(path, columns)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    if args.model or args.service:
        records = trace.select(records, args.model, args.service)
    return records


def _scenario(args) -> ScenarioConfig:
    if not args.config:
        raise UsageError(f"{args.command} requires --config SCENARIO")
    path = Path(args.config)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    try:
        scenario = ScenarioConfig.from_file(path)
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{path}: invalid scenario: {exc}") from None
    if args.seed is not None:
        scenario = scenario.replace(seed=args.seed)
    return scenario


def cmd_analyze(args, out: Path) -> int:
    records = _read_trace(args)
    w = args.window
    counts = trace.window_counts(records, w)
    _write_csv(out / "window_counts.csv", ("window_start_s", "count"), zip(counts.window_starts, counts.counts))

    rows = []
    for horizon_s in args.horizons:
        h = round(horizon_s / w)
        if h < 1 or abs(h * w - horizon_s) > 1e-9 * max(1.0, horizon_s):
            raise UsageError(f"horizon {horizon_s}s is not a whole number of {w}s windows")
        total = trace.doubling_events(counts, h)
        per_day, per_workday = [], []
        per_window = int(round(DAY_S / w))
        if abs(per_window * w - DAY_S) < 1e-9:
            for day in range(int(np.ceil(len(counts) / per_window))):
                n = trace.doubling_events(counts.counts[day * per_window:(day + 1) * per_window], h)
                per_day.append(n)
                if (args.start_weekday + day) % 7 < 5:
                    per_workday.append(n)
        rows.append((
            horizon_s, h, total,
            float(np.mean(per_day)) if per_day else None,
            float(np.mean(per_workday)) if per_workday else None,
        ))
    _write_csv(out / "doubling.csv", ("horizon_s", "horizon_windows", "events", "mean_per_day", "mean_per_workday"), rows)

    stats = trace.failure_stats(records)
    _write_csv(
        out / "failure_stats.csv", ("model", "service", "total", "failures", "rate"),
        ((s.model, s.service.value, s.total, s.failures, s.rate) for s in stats),
    )

    tput = trace.throughput_series(records, w)
    _write_csv(
        out / "throughput.csv", ("window_start_s", "request_tokens_per_s", "response_tokens_per_s"),
        ((i * w, a, b) for i, (a, b) in enumerate(tput)),
    )

    fits = distfit.window_fit(records, args.fit_window)
    _write_csv(
        out / "window_fits.csv", ("window_index", "window_start_s", "alpha", "beta", "cv"),
        ((i, i * args.fit_window, g.alpha, g.beta, g.cv) for i, g in fits.fits),
    )
    _write_csv(out / "window_fits_skipped.csv", ("window_index", "reason"), fits.skipped)
    print(f"analyzed {len(records)} records -> {out}")
    if fits.skipped:
        print(f"{len(fits.skipped)} fit windows skipped (see window_fits_skipped.csv)")
    return EXIT_OK


def cmd_fit(args, out: Path) -> int:
    records = _read_trace(args)
    result: dict = {"n_records": len(records)}
    if len(records) >= 3:
        try:
            g = distfit.fit_gamma(trace.interarrival_times(records))
            result["gamma"] = {"alpha": g.alpha, "beta": g.beta, "mean_s": g.mean, "cv": g.cv}
        except ValueError as exc:
            result["gamma"] = {"skipped": str(exc)}
    lengths = [r.request_tokens for r in records if r.request_tokens <= args.l_max]
    if lengths:
        z = distfit.fit_zipf(lengths, args.l_max)
        result["zipf_request"] = {"theta": z.theta, "l_max": z.l_max, "n": len(lengths),
                                  "excluded_over_l_max": len(records) - len(lengths)}
    responses = [r.response_tokens for r in records if not r.failed and r.response_tokens > 0]
    if len(responses) >= 10:
        b = fit_bimodal(responses, args.l_max, seed=args.seed or 0)
        result["response_bimodal"] = {"mode": "bimodal", "means": list(b.means), "sigmas": list(b.sigmas),
                                      "weight": b.weight, "l_max": b.l_max}
    fits = distfit.window_fit(records, args.fit_window)
    result["window_fits"] = [{"window_index": i, "alpha": g.alpha, "beta": g.beta} for i, g in fits.fits]
    result["window_fits_skipped"] = [{"window_index": i, "reason": r} for i, r in fits.skipped]
    _write_json(out / "fit.json", result)
    print(json.dumps({k: v for k, v in result.items() if not k.startswith("window")}, indent=2))
    return EXIT_OK


def cmd_build_pool(args, out: Path) -> int:
    path = Path(args.corpus)
    if not path.exists():
        raise InputError(f"corpus not found: {path}")
    docs = read_corpus(path)
    try:
        pool = build_pool(docs, l_max=args.l_max, targets=args.targets and [int(t) for t in args.targets],
                          theta=args.theta, per_doc=args.per_doc, seed=args.seed or 0)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    (out / "pool.jsonl").write_bytes(pool.dumps())
    print(f"pool: {len(pool)} prompts, {len(pool.index)} distinct lengths -> {out / 'pool.jsonl'}")
    return EXIT_OK


def _schedule_and_pool(args):
    """Schedule/pool from --config scenario, overridden by explicit flags."""
    scenario_cfg, base = {}, Path(".")
    if args.config:
        scenario_cfg, base = load_config(args.config), Path(args.config).parent
    sched_ref = args.schedule or scenario_cfg.get("schedule")
    if sched_ref is None:
        raise UsageError("a schedule is required (--schedule or --config)")
    if isinstance(sched_ref, dict):
        schedule = distfit.ParameterSchedule.from_config(sched_ref)
    else:
        p = Path(sched_ref)
        p = p if args.schedule or p.is_absolute() else base / p
        if not p.exists():
            raise InputError(f"schedule file not found: {p}")
        schedule = distfit.ParameterSchedule.from_config(load_config(p))
    pool_ref = args.pool or scenario_cfg.get("pool")
    if pool_ref is None:
        pool = synthetic_pool(schedule.l_max)
    else:
        p = Path(pool_ref)
        p = p if args.pool or p.is_absolute() else base / p
        if not p.exists():
            raise InputError(f"pool not found: {p}")
        pool = load_pool(p, l_max=schedule.l_max, seed=args.seed or 0)
    return schedule, pool, scenario_cfg


def cmd_generate(args, out: Path) -> int:
    schedule, pool, cfg = _schedule_and_pool(args)
    duration = args.duration or cfg.get("duration_s")
    if duration is None:
        raise UsageError("--duration is required")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    warmup = args.warmup if args.warmup is not None else float(cfg.get("warmup_s", 0.0))
    plan = make_plan(schedule, pool, float(duration), seed, warmup=warmup,
                     trigger=args.trigger or cfg.get("trigger", "time"),
                     burst_interval=args.burst_interval or int(cfg.get("burst_interval_requests", 200)))
    plan.save(out / "plan.csv")
    print(f"plan: {len(plan)} requests over {duration}s -> {out / 'plan.csv'}")
    return EXIT_OK


def cmd_calibrate(args, out: Path) -> int:
    from .engine import EngineConfig

    schedule, pool, cfg = _schedule_and_pool(args)
    profile_ref = args.profile or cfg.get("engine_profile")
    if profile_ref is None:
        raise UsageError("an engine profile is required (--profile or --config)")
    base = Path(args.config).parent if args.config and not args.profile else Path(".")
    if isinstance(profile_ref, dict):
        profile, profile_dir = profile_ref, base
    else:
        p = Path(profile_ref)
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise InputError(f"engine profile not found: {p}")
        profile, profile_dir = load_config(p), p.parent
    engine_cfg = EngineConfig.from_config(profile, profile_dir)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    cal = calibrate_beta(engine_cfg, schedule, pool, tuple(args.target), seed=seed, n_requests=args.n_requests)
    _write_json(out / "calibration.json", {
        "multiplier": cal.multiplier,
        "utilization": cal.utilization,
        "target": list(args.target),
        "probes": [{"multiplier": m, "utilization": u} for m, u in cal.probes],
    })
    _write_json(out / "schedule.calibrated.json", cal.schedule.to_config())
    print(f"beta multiplier {cal.multiplier:.6g} -> utilization {cal.utilization:.3f}")
    return EXIT_OK


def _write_bench(result, out: Path, prefix: str = ""):
    (out / f"{prefix}metrics_summary.csv").write_bytes(summary_csv(result.report))
    (out / f"{prefix}metrics_series.csv").write_bytes(series_csv(result.report))
    (out / f"{prefix}report.json").write_bytes(export(result.report, "json"))
    (out / f"{prefix}records.csv").write_bytes(records_csv(result.records))
    _write_csv(
        out / f"{prefix}schedule_windows.csv", ("window_start_s", "alpha", "beta", "theta", "cv"),
        ((t, a, b, th, distfit.cv(a)) for t, a, b, th in result.window_params),
    )
    if result.calibration is not None:
        _write_json(out / f"{prefix}calibration.json", {
            "multiplier": result.calibration.multiplier,
            "utilization": result.calibration.utilization,
        })
    if result.send_lag is not None and len(result.send_lag):
        _write_json(out / f"{prefix}pacing.json", {
            "max_abs_send_lag_s": float(np.max(np.abs(result.send_lag))),
            "mean_send_lag_s": float(np.mean(result.send_lag)),
        })


def cmd_bench(args, out: Path) -> int:
    scenario = _scenario(args)
    if args.endpoint:
        if args.target == "sim":
            raise UsageError("--endpoint cannot be combined with --target sim")
        scenario = scenario.replace(endpoint=driver.TargetEndpoint(base_url=args.endpoint))
    elif args.target == "sim":
        scenario = scenario.replace(endpoint=None)
    try:
        driver.validate_target(args.target, scenario.endpoint)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = bench(scenario, args.target)
    _write_bench(result, out)
    r = result.report
    print(f"{r.total} requests: R_avg={r.R_avg:.4f} P_avg={r.P_avg:.1f} tok/s p90={r.latency_p90}")
    return EXIT_OK


def cmd_sweep(args, out: Path) -> int:
    scenario = _scenario(args)
    rows = sweep(scenario, args.parameter, args.grid)
    _write_csv(out / f"sweep_{args.parameter}.csv", SWEEP_HEADER, ([row[k] for k in SWEEP_HEADER] for row in rows))
    print(f"sweep over {args.parameter}: {len(rows)} points -> {out / f'sweep_{args.parameter}.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="burstbench", description="Bursty LLM serving workload toolkit")
    parser.add_argument("--seed", type=int, default=None, help="random seed (outputs are bit-reproducible per seed)")
    parser.add_argument("--config", help="scenario config file (YAML or JSON)")
    parser.add_argument("--out-dir", default=".", help="directory for output files")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def trace_args(p):
        p.add_argument("trace", help="trace CSV")
        p.add_argument("--burstgpt-columns", action="store_true",
                       help="read the published BurstGPT header layout (Timestamp, Model, ..., Log Type)")
        p.add_argument("--model", help="keep only this model")
        p.add_argument("--service", help="keep only this service (Conversation or API)")
        p.add_argument("--fit-window", type=float, default=1200.0, help="window for per-window Gamma fits, seconds")

    p = sub.add_parser("analyze", help="windowed counts, doubling events, failures, throughput, Gamma fits")
    trace_args(p)
    p.add_argument("--window", type=float, default=60.0, help="count/throughput window, seconds")
    p.add_argument("--horizons", type=_floats, default=[300.0, 600.0], help="doubling horizons in seconds")
    p.add_argument("--start-weekday", type=int, default=2, help="weekday of t=0 (0=Monday) for workday means")

    p = sub.add_parser("fit", help="fit Gamma inter-arrivals, Zipf request lengths, bimodal responses")
    trace_args(p)
    p.add_argument("--l-max", type=int, default=2048)

    p = sub.add_parser("build-pool", help="build a token-indexed prompt pool from a corpus")
    p.add_argument("corpus", help="directory of .txt files, JSON-lines dump, or ShareGPT JSON")
    p.add_argument("--l-max", type=int, default=2048)
    p.add_argument("--targets", type=_floats, help="explicit truncation lengths (default: Zipf draws)")
    p.add_argument("--theta", type=float, default=1.1)
    p.add_argument("--per-doc", type=int, default=8)

    def plan_args(p):
        p.add_argument("--schedule", help="schedule file")
        p.add_argument("--pool", help="pool file or corpus (default: synthetic filler prompts)")

    p = sub.add_parser("generate", help="generate a workload plan")
    plan_args(p)
    p.add_argument("--duration", type=float)
    p.add_argument("--warmup", type=float)
    p.add_argument("--trigger", choices=("time", "count"))
    p.add_argument("--burst-interval", type=int)

    p = sub.add_parser("calibrate", help="scale beta to a target KV utilization")
    plan_args(p)
    p.add_argument("--profile", help="engine profile file")
    p.add_argument("--target", type=_floats, default=[0.30, 0.40])
    p.add_argument("--n-requests", type=int, default=1000)

    p = sub.add_parser("bench", help="run a scenario and emit metrics")
    p.add_argument("--target", choices=("sim", "endpoint"), default="sim")
    p.add_argument("--endpoint", help="base URL of an OpenAI-compatible server")

    p = sub.add_parser("sweep", help="one run per grid value of alpha, beta or theta")
    p.add_argument("--parameter", choices=("alpha", "beta", "theta"), required=True)
    p.add_argument("--grid", type=_floats, required=True)
    return parser


COMMANDS = {
    "analyze": cmd_analyze,
    "fit": cmd_fit,
    "build-pool": cmd_build_pool,
    "generate": cmd_generate,
    "calibrate": cmd_calibrate,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"burstbench: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, FileNotFoundError) as exc:
        print(f"burstbench: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CalibrationError, driver.EndpointUnreachable) as exc:
        print(f"burstbench: {exc}", file=sys.stderr)
        return EXIT_TARGET
    except ValueError as exc:
        print(f"burstbench: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
