"""Request/step records and their aggregation into failure rate (R), token
latency (L) and throughput (P), as run averages and per-window series.

Every failed request carries a ``completion`` time too: the moment the
failure was detected (timeout expiry or rejection). Failures are windowed by
that time.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class Status(str, Enum):
    COMPLETED = "Completed"
    TIMED_OUT = "TimedOut"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class RequestRecord:
    request_id: int
    arrival: float
    first_scheduled: float | None
    completion: float | None
    prompt_tokens: int
    response_tokens: int
    status: Status

    @property
    def failed(self) -> bool:
        return self.status is not Status.COMPLETED

    @property
    def latency(self) -> float | None:
        if self.completion is None:
            return None
        return self.completion - self.arrival

    @property
    def token_latency(self) -> float | None:
        """Seconds per generated token, measured from first scheduling."""
        if self.status is not Status.COMPLETED or self.response_tokens < 1:
            return None
        start = self.arrival if self.first_scheduled is None else self.first_scheduled
        return (self.completion - start) / self.response_tokens


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    start: float
    duration: float
    tokens_processed: int
    kv_in_use: int
    batch_size: int

    @property
    def end(self) -> float:
        return self.start + self.duration


SUMMARY_HEADER = ("R_avg", "L_avg_s_per_token", "P_avg_tokens_per_s", "latency_p90_s", "total", "completed", "failed")
SERIES_HEADER = ("window_start_s", "R_ins", "L_ins", "P_ins", "kv_utilization", "completions", "failures")
RECORD_HEADER = ("request_id", "arrival", "first_scheduled", "completion", "prompt_tokens", "response_tokens", "status")


@dataclass(frozen=True)
class WindowMetrics:
    window_start_s: float
    R_ins: float
    L_ins: float | None
    P_ins: float
    kv_utilization: float | None
    completions: int
    failures: int


@dataclass
class MetricsReport:
    R_avg: float
    L_avg: float | None
    P_avg: float
    latency_p90: float | None
    total: int
    completed: int
    failed: int
    window_length: float
    series: list[WindowMetrics] = field(default_factory=list)

    def summary_row(self) -> tuple:
        return (self.R_avg, self.L_avg, self.P_avg, self.latency_p90, self.total, self.completed, self.failed)


def nearest_rank(values: Sequence[float], q: float) -> float | None:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value, no interpolation."""
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    if len(values) == 0:
        return None
    ordered = np.sort(np.asarray(values, dtype=float))
    rank = max(1, math.ceil(round(q * len(ordered), 9)))
    return float(ordered[rank - 1])


def aggregate(
    requests: Sequence[RequestRecord],
    steps: Sequence[StepRecord] | None = None,
    window_length: float = 60.0,
    kv_capacity: int | None = None,
    origin: float = 0.0,
) -> MetricsReport:
    if not window_length > 0:
        raise ValueError(f"window_length must be > 0, got {window_length}")
    if len(requests) == 0:
        raise ValueError("empty run")
    steps = steps or []

    completed = [r for r in requests if r.status is Status.COMPLETED]
    n_failed = len(requests) - len(completed)
    token_lat = [r.token_latency for r in completed if r.token_latency is not None]
    e2e = [r.latency for r in completed]

    start = min(r.arrival for r in requests)
    ends = [r.completion for r in requests if r.completion is not None]
    ends.extend(s.end for s in steps)
    end = max(ends) if ends else start
    duration = end - start
    if steps:
        tokens = sum(s.tokens_processed for s in steps)
    else:
        tokens = sum(r.prompt_tokens + r.response_tokens for r in completed)
    p_avg = tokens / duration if duration > 0 else 0.0

    report = MetricsReport(
        R_avg=n_failed / len(requests),
        L_avg=float(np.mean(token_lat)) if token_lat else None,
        P_avg=p_avg,
        latency_p90=nearest_rank(e2e, 0.9),
        total=len(requests),
        completed=len(completed),
        failed=n_failed,
        window_length=float(window_length),
    )
    report.series = _series(requests, steps, window_length, kv_capacity, origin)
    return report


def _series(requests, steps, w, kv_capacity, origin) -> list[WindowMetrics]:
    resolved = [r for r in requests if r.completion is not None]
    if not resolved and not steps:
        return []
    last = max([r.completion for r in resolved] + [s.start for s in steps])
    n = int(math.floor((last - origin) / w)) + 1

    def window_of(t):
        return min(max(int(math.floor((t - origin) / w)), 0), n - 1)

    completions = np.zeros(n, dtype=np.int64)
    failures = np.zeros(n, dtype=np.int64)
    lat_sum = np.zeros(n)
    lat_n = np.zeros(n, dtype=np.int64)
    req_tokens = np.zeros(n)
    for r in resolved:
        i = window_of(r.completion)
        if r.status is Status.COMPLETED:
            completions[i] += 1
            if r.token_latency is not None:
                lat_sum[i] += r.token_latency
                lat_n[i] += 1
            req_tokens[i] += r.prompt_tokens + r.response_tokens
        else:
            failures[i] += 1

    if steps:
        step_tokens = np.zeros(n)
        kv_time = np.zeros(n)
        for s in steps:
            i = window_of(s.start)
            step_tokens[i] += s.tokens_processed
            kv_time[i] += s.kv_in_use * s.duration
        throughput = step_tokens / w
    else:
        throughput = req_tokens / w

    out = []
    for i in range(n):
        resolved_here = completions[i] + failures[i]
        kv_util = None
        if steps and kv_capacity:
            kv_util = float(kv_time[i] / (w * kv_capacity))
        out.append(
            WindowMetrics(
                window_start_s=float(origin + i * w),
                R_ins=float(failures[i] / resolved_here) if resolved_here else 0.0,
                L_ins=float(lat_sum[i] / lat_n[i]) if lat_n[i] else None,
                P_ins=float(throughput[i]),
                kv_utilization=kv_util,
                completions=int(completions[i]),
                failures=int(failures[i]),
            )
        )
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_bytes(header, rows) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return out.getvalue().encode("utf-8")


def summary_csv(report: MetricsReport) -> bytes:
    return _csv_bytes(SUMMARY_HEADER, [report.summary_row()])


def series_csv(report: MetricsReport) -> bytes:
    rows = [tuple(getattr(w, f) for f in SERIES_HEADER) for w in report.series]
    return _csv_bytes(SERIES_HEADER, rows)


def export(report: MetricsReport, format: str = "json") -> bytes:
    """Serialize a report.

    ``json`` carries the full structure. ``csv`` is the summary table, then a
    blank line and the per-window table when the series is non-empty.
    """
    if format == "json":
        return json.dumps(asdict(report), indent=2).encode("utf-8") + b"\n"
    if format == "csv":
        blob = summary_csv(report)
        if report.series:
            blob += b"\n" + series_csv(report)
        return blob
    raise ValueError(f"unknown export format {format!r}; expected 'json' or 'csv'")


def _opt_float(text: str) -> float | None:
    return None if text == "" else float(text)


def load_report(blob: bytes, format: str = "json", window_length: float | None = None) -> MetricsReport:
    """Inverse of :func:`export`. CSV does not store the window length; it is
    inferred from the series spacing unless given."""
    if format == "json":
        data = json.loads(blob)
        data["series"] = [WindowMetrics(**w) for w in data["series"]]
        return MetricsReport(**data)
    if format != "csv":
        raise ValueError(f"unknown export format {format!r}; expected 'json' or 'csv'")
    sections = blob.decode("utf-8").split("\n\n")
    summary = list(csv.reader(io.StringIO(sections[0])))
    if tuple(summary[0]) != SUMMARY_HEADER:
        raise ValueError("not a metrics CSV: summary header mismatch")
    r, l, p, p90, total, completed, failed = summary[1]
    series = []
    if len(sections) > 1:
        rows = list(csv.reader(io.StringIO(sections[1])))
        if tuple(rows[0]) != SERIES_HEADER:
            raise ValueError("not a metrics CSV: series header mismatch")
        for row in rows[1:]:
            series.append(
                WindowMetrics(
                    window_start_s=float(row[0]),
                    R_ins=float(row[1]),
                    L_ins=_opt_float(row[2]),
                    P_ins=float(row[3]),
                    kv_utilization=_opt_float(row[4]),
                    completions=int(row[5]),
                    failures=int(row[6]),
                )
            )
    if window_length is None:
        window_length = series[1].window_start_s - series[0].window_start_s if len(series) > 1 else float("nan")
    return MetricsReport(
        R_avg=float(r),
        L_avg=_opt_float(l),
        P_avg=float(p),
        latency_p90=_opt_float(p90),
        total=int(total),
        completed=int(completed),
        failed=int(failed),
        window_length=window_length,
        series=series,
    )


def records_csv(records: Iterable[RequestRecord]) -> bytes:
    rows = (
        (r.request_id, r.arrival, r.first_scheduled, r.completion, r.prompt_tokens, r.response_tokens, r.status.value)
        for r in records
    )
    return _csv_bytes(RECORD_HEADER, rows)


def parse_records_csv(blob: bytes) -> list[RequestRecord]:
    rows = list(csv.reader(io.StringIO(blob.decode("utf-8"))))
    if tuple(rows[0]) != RECORD_HEADER:
        raise ValueError("record CSV header mismatch")
    return [
        RequestRecord(
            request_id=int(row[0]),
            arrival=float(row[1]),
            first_scheduled=_opt_float(row[2]),
            completion=_opt_float(row[3]),
            prompt_tokens=int(row[4]),
            response_tokens=int(row[5]),
            status=Status(row[6]),
        )
        for row in rows[1:]
    ]


def steps_csv(steps: Iterable[StepRecord]) -> bytes:
    names = [f.name for f in fields(StepRecord)]
    return _csv_bytes(names, (tuple(getattr(s, n) for n in names) for s in steps))
