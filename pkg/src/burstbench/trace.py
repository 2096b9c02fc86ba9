"""Trace records in the BurstGPT CSV layout, plus windowed analyses over them.

Timestamps are relative seconds from the start of the trace. The native file
layout is::

    timestamp,model,service,request_tokens,response_tokens,failed

Published BurstGPT releases use different headers (``Timestamp``, ``Model``,
``Request tokens``, ``Response tokens``, ``Log Type``) and encode a failure as
a zero-length response; pass ``columns=BURSTGPT_COLUMNS`` to read those.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

HEADER = ("timestamp", "model", "service", "request_tokens", "response_tokens", "failed")

KNOWN_MODELS = {"chatgpt": "ChatGPT", "gpt-4": "GPT-4", "gpt4": "GPT-4"}


class Service(str, Enum):
    CONVERSATION = "Conversation"
    API = "API"


_SERVICE_ALIASES = {
    "conversation": Service.CONVERSATION,
    "conversation log": Service.CONVERSATION,
    "conv": Service.CONVERSATION,
    "api": Service.API,
    "api log": Service.API,
}


class TraceFormatError(ValueError):
    """Raised for malformed trace input; carries the 1-based line and column."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class TraceRecord:
    timestamp: float
    model: str
    service: Service
    request_tokens: int
    response_tokens: int
    failed: bool = False

    def __post_init__(self):
        if not self.timestamp >= 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        if self.request_tokens < 1:
            raise ValueError("request_tokens must be ≥ 1")
        if self.response_tokens < 0:
            raise ValueError("response_tokens must be ≥ 0")


@dataclass(frozen=True)
class ColumnMap:
    """Maps the canonical fields onto the headers of a foreign CSV.

    ``failed`` may be None, in which case a row is failed iff its response
    token count is zero.
    """

    timestamp: str = "timestamp"
    model: str = "model"
    service: str = "service"
    request_tokens: str = "request_tokens"
    response_tokens: str = "response_tokens"
    failed: str | None = "failed"


BURSTGPT_COLUMNS = ColumnMap(
    timestamp="Timestamp",
    model="Model",
    service="Log Type",
    request_tokens="Request tokens",
    response_tokens="Response tokens",
    failed=None,
)


@dataclass(frozen=True)
class CountSeries:
    window_length: float
    origin: float
    counts: np.ndarray

    def __len__(self):
        return len(self.counts)

    @property
    def window_starts(self) -> np.ndarray:
        return self.origin + self.window_length * np.arange(len(self.counts))


@dataclass(frozen=True)
class FailureStats:
    model: str
    service: Service
    total: int
    failures: int

    @property
    def rate(self) -> float:
        return self.failures / self.total if self.total else 0.0


def normalize_model(name: str) -> str:
    name = name.strip()
    if not name:
        raise ValueError("model name is empty")
    return KNOWN_MODELS.get(name.lower(), name)


def parse_service(value: str) -> Service:
    try:
        return _SERVICE_ALIASES[value.strip().lower()]
    except KeyError:
        accepted = ", ".join(s.value for s in Service)
        raise ValueError(f"unknown service {value!r}; accepted values: {accepted}") from None


def _parse_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _parse_failed(text: str) -> bool:
    text = text.strip()
    if text in ("0", "false", "False"):
        return False
    if text in ("1", "true", "True"):
        return True
    raise ValueError(f"failed must be 0 or 1, got {text!r}")


def parse_trace(stream: IO[bytes] | IO[str] | bytes | str, columns: ColumnMap | None = None) -> list[TraceRecord]:
    """Parse a trace CSV into records sorted by timestamp.

    ``stream`` may be a binary or text file object, or the raw content.
    Unsorted input is stable-sorted rather than rejected.
    """
    if isinstance(stream, bytes):
        text = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        text = io.StringIO(stream)
    else:
        data = stream.read()
        text = io.StringIO(data.decode("utf-8") if isinstance(data, bytes) else data)

    reader = csv.reader(text)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise TraceFormatError("empty input, expected a header row", line=1) from None

    if columns is None:
        if tuple(header) != HEADER:
            raise TraceFormatError(
                f"header must be exactly {','.join(HEADER)}; got {','.join(header)} "
                "(use a ColumnMap for foreign layouts)",
                line=1,
            )
        columns = ColumnMap()

    wanted = {
        "timestamp": columns.timestamp,
        "model": columns.model,
        "service": columns.service,
        "request_tokens": columns.request_tokens,
        "response_tokens": columns.response_tokens,
    }
    if columns.failed is not None:
        wanted["failed"] = columns.failed
    pos = {}
    for key, name in wanted.items():
        if name not in header:
            raise TraceFormatError(f"missing column {name!r}", line=1, column=name)
        pos[key] = header.index(name)

    records = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise TraceFormatError(f"expected {len(header)} fields, got {len(row)}", line=line)

        def field_value(key, convert):
            try:
                return convert(row[pos[key]])
            except ValueError as exc:
                raise TraceFormatError(str(exc), line=line, column=wanted[key]) from None

        ts = field_value("timestamp", float)
        if not (ts >= 0 and math.isfinite(ts)):
            raise TraceFormatError(f"timestamp must be a finite value >= 0, got {ts}", line=line, column=wanted["timestamp"])
        model = field_value("model", normalize_model)
        service = field_value("service", parse_service)
        req = field_value("request_tokens", _parse_int)
        resp = field_value("response_tokens", _parse_int)
        if req < 1:
            raise TraceFormatError("request_tokens must be ≥ 1", line=line, column=wanted["request_tokens"])
        if resp < 0:
            raise TraceFormatError("response_tokens must be ≥ 0", line=line, column=wanted["response_tokens"])
        if "failed" in pos:
            failed = field_value("failed", _parse_failed)
        else:
            failed = resp == 0
        records.append(TraceRecord(ts, model, service, req, resp, failed))

    records.sort(key=lambda r: r.timestamp)
    return records


def read_trace(path, columns: ColumnMap | None = None) -> list[TraceRecord]:
    with open(path, "rb") as f:
        return parse_trace(f, columns)


def serialize_trace(records: Iterable[TraceRecord]) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HEADER)
    for r in records:
        writer.writerow([repr(float(r.timestamp)), r.model, r.service.value, r.request_tokens, r.response_tokens, int(r.failed)])
    return out.getvalue().encode("utf-8")


def _timestamps(records: Sequence[TraceRecord] | np.ndarray) -> np.ndarray:
    if isinstance(records, np.ndarray):
        return records.astype(float)
    return np.fromiter((r.timestamp for r in records), dtype=float, count=len(records))


def _window_index(ts: np.ndarray, window_length: float, origin: float) -> tuple[np.ndarray, int]:
    if not window_length > 0:
        raise ValueError(f"window_length must be > 0, got {window_length}")
    if len(ts) == 0:
        return np.zeros(0, dtype=np.int64), 0
    if ts.min() < origin:
        raise ValueError("records precede the series origin")
    idx = np.floor((ts - origin) / window_length).astype(np.int64)
    return idx, int(idx.max()) + 1


def window_counts(records, window_length: float, origin: float = 0.0) -> CountSeries:
    """Count arrivals per half-open window ``[origin + i*w, origin + (i+1)*w)``."""
    ts = _timestamps(records)
    idx, n = _window_index(ts, window_length, origin)
    counts = np.bincount(idx, minlength=n).astype(np.int64)
    return CountSeries(window_length=float(window_length), origin=float(origin), counts=counts)


def doubling_events(series: CountSeries | Sequence[int], horizon_windows: int, multiplier: float = 2.0) -> int:
    """Number of windows whose count is at least ``multiplier`` times the
    count ``horizon_windows`` earlier; windows with an empty baseline are
    not counted."""
    if horizon_windows < 1:
        raise ValueError("horizon_windows must be >= 1")
    counts = np.asarray(series.counts if isinstance(series, CountSeries) else series, dtype=float)
    if len(counts) <= horizon_windows:
        return 0
    base = counts[:-horizon_windows]
    later = counts[horizon_windows:]
    return int(np.count_nonzero((base > 0) & (later >= multiplier * base)))


def failure_stats(records: Iterable[TraceRecord]) -> list[FailureStats]:
    totals: dict[tuple[str, Service], list[int]] = defaultdict(lambda: [0, 0])
    for r in records:
        entry = totals[(r.model, r.service)]
        entry[0] += 1
        entry[1] += int(r.failed)
    return [
        FailureStats(model=m, service=s, total=t, failures=f)
        for (m, s), (t, f) in sorted(totals.items(), key=lambda kv: (kv[0][0], kv[0][1].value))
    ]


def interarrival_times(records) -> np.ndarray:
    ts = _timestamps(records)
    if len(ts) < 2:
        raise ValueError("need at least 2 records to compute inter-arrival times")
    return np.diff(ts)


def throughput_series(records: Sequence[TraceRecord], window_length: float, origin: float = 0.0) -> np.ndarray:
    """Per-window (request tokens/s, response tokens/s), shape ``(n_windows, 2)``."""
    ts = _timestamps(records)
    idx, n = _window_index(ts, window_length, origin)
    req = np.fromiter((r.request_tokens for r in records), dtype=float, count=len(records))
    resp = np.fromiter((r.response_tokens for r in records), dtype=float, count=len(records))
    out = np.zeros((n, 2))
    out[:, 0] = np.bincount(idx, weights=req, minlength=n)[:n]
    out[:, 1] = np.bincount(idx, weights=resp, minlength=n)[:n]
    return out / window_length


def select(records: Iterable[TraceRecord], model: str | None = None, service: Service | str | None = None) -> list[TraceRecord]:
    if model is not None:
        model = normalize_model(model)
    if isinstance(service, str):
        service = parse_service(service)
    return [
        r for r in records
        if (model is None or r.model == model) and (service is None or r.service == service)
    ]
