"""Workload plans: Gamma-process arrivals, Zipf request lengths, prompts
matched from a token-indexed pool, and calibration of the arrival scale to a
target KV-cache utilization.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .distfit import ParameterSchedule, ZipfParams, eval_schedule, interval_start

PLAN_HEADER = ("arrival_time", "request_tokens", "prompt_id")


def whitespace_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class ArrivalEvent:
    arrival_time: float
    request_tokens: int
    prompt_id: int


@dataclass
class PromptPool:
    """Prompts keyed by id, plus an index from token count to prompt ids."""

    prompts: dict[int, str]
    tokens: dict[int, int]
    index: dict[int, list[int]] = field(init=False)

    def __post_init__(self):
        index: dict[int, list[int]] = {}
        for pid in sorted(self.prompts):
            index.setdefault(self.tokens[pid], []).append(pid)
        self.index = dict(sorted(index.items()))
        self._keys = np.fromiter(self.index, dtype=np.int64, count=len(self.index))
        self._sizes = np.array([len(v) for v in self.index.values()], dtype=np.int64)
        self._offsets = np.concatenate(([0], np.cumsum(self._sizes)[:-1])).astype(np.int64)
        self._flat = np.array([pid for ids in self.index.values() for pid in ids], dtype=np.int64)

    def __len__(self):
        return len(self.prompts)

    def digest(self) -> str:
        h = hashlib.sha256()
        for pid in sorted(self.prompts):
            h.update(f"{pid}\t{self.tokens[pid]}\t".encode())
            h.update(self.prompts[pid].encode())
            h.update(b"\n")
        return h.hexdigest()

    def dumps(self) -> bytes:
        lines = (
            json.dumps({"id": pid, "tokens": self.tokens[pid], "text": self.prompts[pid]}, ensure_ascii=False)
            for pid in sorted(self.prompts)
        )
        return ("\n".join(lines) + "\n").encode("utf-8")

    @classmethod
    def loads(cls, blob: bytes) -> "PromptPool":
        prompts, tokens = {}, {}
        for line in blob.decode("utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                prompts[int(row["id"])] = row["text"]
                tokens[int(row["id"])] = int(row["tokens"])
        return cls(prompts, tokens)


def build_pool(
    corpus: Sequence[str],
    tokenizer: Callable[[str], int] = whitespace_tokens,
    l_max: int = 2048,
    targets: Iterable[int] | None = None,
    theta: float = 1.1,
    per_doc: int = 8,
    seed: int = 0,
) -> PromptPool:
    """Truncate each document to word prefixes and index them by token count.

    With explicit ``targets`` every document contributes one prefix per
    target length; otherwise ``per_doc`` target lengths per document are
    drawn from Zipf(theta, l_max). Targets longer than a document are skipped
    for that document. Prefixes are cut on whitespace and keyed by
    ``tokenizer(prefix)``, which for the default tokenizer equals the target.
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(seed)
    zipf = ZipfParams(theta, l_max)
    fixed = None if targets is None else sorted({int(t) for t in targets if 1 <= int(t) <= l_max})

    prompts, tokens = {}, {}
    seen = set()
    for doc in corpus:
        words = doc.split()
        wanted = fixed if fixed is not None else sorted(set(zipf.sample(rng, per_doc).tolist()))
        for k in wanted:
            if k > len(words):
                continue
            text = " ".join(words[:k])
            n = tokenizer(text)
            if n < 1 or n > l_max or text in seen:
                continue
            seen.add(text)
            pid = len(prompts)
            prompts[pid] = text
            tokens[pid] = n
    if not prompts:
        raise ValueError("corpus produced no prompts within the configured lengths")
    return PromptPool(prompts, tokens)


def synthetic_pool(l_max: int = 2048) -> PromptPool:
    """One filler prompt per length 1..l_max, for simulation runs that only need lengths."""
    prompts = {k: " ".join(["tok"] * k) for k in range(1, l_max + 1)}
    return PromptPool(prompts, {k: k for k in prompts})


def read_corpus(path: str | Path) -> list[str]:
    """Load documents from a ``.txt`` file (one document), a directory of
    ``.txt`` files, a JSON-lines dump or a ShareGPT-style JSON array.
    Conversation dumps contribute their human turns."""
    path = Path(path)
    if path.is_dir():
        return [p.read_text(encoding="utf-8") for p in sorted(path.glob("*.txt"))]
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".txt":
        return [text]
    if text.lstrip().startswith("["):
        items = json.loads(text)
    else:
        items = [json.loads(line) for line in text.splitlines() if line.strip()]
    docs = []
    for item in items:
        if isinstance(item, str):
            docs.append(item)
        elif "conversations" in item:
            docs.extend(
                turn["value"] for turn in item["conversations"]
                if turn.get("from") in ("human", "user") and turn.get("value")
            )
        elif "text" in item:
            docs.append(item["text"])
        elif "prompt" in item:
            docs.append(item["prompt"])
    return docs


def load_pool(path: str | Path, l_max: int = 2048, seed: int = 0) -> PromptPool:
    """Read a saved pool file, or build one from a corpus location."""
    path = Path(path)
    if path.is_file():
        first = path.read_text(encoding="utf-8").lstrip()[:200]
        if first.startswith("{") and '"tokens"' in first and '"id"' in first:
            return PromptPool.loads(path.read_bytes())
    return build_pool(read_corpus(path), l_max=l_max, seed=seed)


def _nearest_keys(keys: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Position in ``keys`` of the exact or nearest key; ties go to the shorter key."""
    pos = np.searchsorted(keys, lengths, side="left")
    hi = np.minimum(pos, len(keys) - 1)
    lo = np.maximum(pos - 1, 0)
    exact_or_above = keys[hi]
    below = keys[lo]
    use_lower = (pos >= len(keys)) | ((pos > 0) & (lengths - below <= exact_or_above - lengths))
    return np.where(use_lower, lo, hi)


def pick_prompts(pool: PromptPool, lengths, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`pick_prompt`; returns (prompt ids, matched lengths)."""
    if len(pool) == 0:
        raise ValueError("empty prompt pool")
    lengths = np.asarray(lengths, dtype=np.int64)
    slot = _nearest_keys(pool._keys, lengths)
    u = rng.random(lengths.shape)
    choice = np.minimum((u * pool._sizes[slot]).astype(np.int64), pool._sizes[slot] - 1)
    return pool._flat[pool._offsets[slot] + choice], pool._keys[slot]


def pick_prompt(pool: PromptPool, length: int, rng: np.random.Generator) -> tuple[int, int]:
    """A prompt of exactly ``length`` tokens if the pool has one (uniform among
    matches), else of the nearest available length, ties toward shorter.
    Returns (prompt_id, matched_length)."""
    ids, matched = pick_prompts(pool, [length], rng)
    return int(ids[0]), int(matched[0])


def sample_length(zipf: ZipfParams, rng: np.random.Generator, size=None):
    return zipf.sample(rng, size)


def _blocks(
    schedule: ParameterSchedule,
    duration: float,
    rng: np.random.Generator,
    warmup: float,
    trigger: str,
    burst_interval: int,
) -> Iterator[tuple[np.ndarray, tuple[float, float, float]]]:
    """Yield (arrival times, parameters) for each stretch of constant parameters.

    Parameters are read once per gap, at the gap's start. During warm-up the
    t=0 values apply; afterwards the schedule clock is ``t - warmup``.
    ``trigger='time'`` refreshes parameters at update-interval boundaries,
    ``trigger='count'`` every ``burst_interval`` arrivals.
    """
    if trigger not in ("time", "count"):
        raise ValueError(f"trigger must be 'time' or 'count', got {trigger!r}")
    if trigger == "count" and burst_interval < 1:
        raise ValueError("burst_interval must be >= 1")
    t = 0.0
    while True:
        elapsed = max(0.0, t - warmup)
        if trigger == "time":
            params = eval_schedule(schedule, elapsed)
            if t < warmup:
                limit_t = warmup
            else:
                limit_t = warmup + interval_start(schedule, elapsed) + schedule.update_interval
                if limit_t <= t:  # rounding at an exact boundary
                    limit_t += schedule.update_interval
            # merge intervals whose parameters do not change, so the draw stream
            # is not cut at boundaries that have no effect
            while limit_t < duration and eval_schedule(schedule, limit_t - warmup) == params:
                limit_t += schedule.update_interval
            limit_n = math.inf
        else:
            params = schedule.at(elapsed)
            limit_t = math.inf
            limit_n = burst_interval
        alpha, beta, _ = params
        mean_gap = alpha * beta
        block = []
        taken = 0
        done = False
        while True:
            horizon = min(limit_t, duration) - t
            expect = limit_n - taken if trigger == "count" else horizon / mean_gap
            chunk = int(min(max(expect * 1.1 + 16, 16), 1 << 16))
            ts = t + np.cumsum(rng.gamma(alpha, beta, size=chunk))
            starts = np.concatenate(([t], ts[:-1]))
            k = int(np.searchsorted(starts, limit_t, side="left"))
            k = int(min(k, limit_n - taken))
            inside = int(np.searchsorted(ts[:k], duration, side="right"))
            block.append(ts[:inside])
            taken += inside
            if inside < k:
                done = True
                break
            if k == 0:
                break
            t = float(ts[k - 1])
            if k < chunk:
                break
        times = np.concatenate(block) if block else np.zeros(0)
        if len(times):
            yield times, params
        if done:
            return


def gen_arrivals(
    schedule: ParameterSchedule,
    duration: float,
    seed: int | np.random.Generator = 0,
    *,
    warmup: float = 0.0,
    trigger: str = "time",
    burst_interval: int = 200,
) -> np.ndarray:
    """Arrival times in (0, duration] from a Gamma renewal process whose
    shape/scale follow ``schedule``."""
    if not duration > 0:
        raise ValueError("duration must be > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    parts = [times for times, _ in _blocks(schedule, duration, rng, warmup, trigger, burst_interval)]
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class WorkloadPlan:
    events: list[ArrivalEvent]
    seed: int
    schedule: ParameterSchedule
    duration: float
    pool_digest: str = ""
    warmup: float = 0.0
    trigger: str = "time"
    burst_interval: int = 200

    def __len__(self):
        return len(self.events)

    @property
    def arrival_times(self) -> np.ndarray:
        return np.fromiter((e.arrival_time for e in self.events), dtype=float, count=len(self.events))

    @property
    def request_tokens(self) -> np.ndarray:
        return np.fromiter((e.request_tokens for e in self.events), dtype=np.int64, count=len(self.events))

    def to_csv(self) -> bytes:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(PLAN_HEADER)
        for e in self.events:
            writer.writerow((repr(e.arrival_time), e.request_tokens, e.prompt_id))
        return out.getvalue().encode("utf-8")

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "duration": self.duration,
            "warmup": self.warmup,
            "trigger": self.trigger,
            "burst_interval": self.burst_interval,
            "n_events": len(self.events),
            "schedule_sha256": self.schedule.digest(),
            "pool_sha256": self.pool_digest,
            "schedule": self.schedule.to_config(),
        }

    def save(self, csv_path: str | Path) -> Path:
        """Write the plan CSV and its ``.meta.json`` sidecar; returns the sidecar path."""
        csv_path = Path(csv_path)
        csv_path.write_bytes(self.to_csv())
        meta_path = csv_path.with_suffix(".meta.json")
        meta_path.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return meta_path

    @classmethod
    def load(cls, csv_path: str | Path) -> "WorkloadPlan":
        csv_path = Path(csv_path)
        rows = list(csv.reader(io.StringIO(csv_path.read_text())))
        if tuple(rows[0]) != PLAN_HEADER:
            raise ValueError(f"{csv_path}: expected header {','.join(PLAN_HEADER)}")
        events = [ArrivalEvent(float(a), int(n), int(p)) for a, n, p in rows[1:]]
        meta_path = csv_path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(
            events=events,
            seed=int(meta.get("seed", 0)),
            schedule=ParameterSchedule.from_config(meta["schedule"]) if "schedule" in meta else ParameterSchedule(),
            duration=float(meta.get("duration", events[-1].arrival_time if events else 0.0)),
            pool_digest=meta.get("pool_sha256", ""),
            warmup=float(meta.get("warmup", 0.0)),
            trigger=meta.get("trigger", "time"),
            burst_interval=int(meta.get("burst_interval", 200)),
        )


def make_plan(
    schedule: ParameterSchedule,
    pool: PromptPool,
    duration: float,
    seed: int = 0,
    *,
    warmup: float = 0.0,
    trigger: str = "time",
    burst_interval: int = 200,
) -> WorkloadPlan:
    """Compose arrivals, Zipf lengths and prompt matching into a plan.

    Arrivals, lengths and prompt choices use independent streams spawned
    from ``seed``, so changing one parameter family leaves the others'
    random numbers untouched. Each event records the matched prompt length.
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    arrival_ss, length_ss, pick_ss = np.random.SeedSequence(seed).spawn(3)
    arrival_rng = np.random.default_rng(arrival_ss)
    length_rng = np.random.default_rng(length_ss)
    pick_rng = np.random.default_rng(pick_ss)

    events: list[ArrivalEvent] = []
    for times, (_, _, theta) in _blocks(schedule, duration, arrival_rng, warmup, trigger, burst_interval):
        lengths = ZipfParams(theta, schedule.l_max).sample(length_rng, len(times))
        ids, matched = pick_prompts(pool, lengths, pick_rng)
        events.extend(
            ArrivalEvent(float(t), int(n), int(pid)) for t, n, pid in zip(times.tolist(), matched.tolist(), ids.tolist())
        )
    return WorkloadPlan(
        events=events,
        seed=seed,
        schedule=schedule,
        duration=float(duration),
        pool_digest=pool.digest(),
        warmup=float(warmup),
        trigger=trigger,
        burst_interval=burst_interval,
    )


class CalibrationError(RuntimeError):
    pass


@dataclass
class Calibration:
    multiplier: float
    utilization: float
    schedule: ParameterSchedule
    probes: list[tuple[float, float]] = field(default_factory=list)


def probe_utilization(engine_config, schedule: ParameterSchedule, pool: PromptPool, multiplier: float,
                      seed: int = 0, n_requests: int = 1000, settle_fraction: float = 0.2) -> float:
    """Mean KV utilization of a steady run at the schedule's t=0 parameters
    with beta scaled by ``multiplier``, ignoring the first ``settle_fraction``
    of the arrival span."""
    from .engine import mean_kv_utilization, run

    alpha, beta, theta = schedule.at(0.0)
    steady = ParameterSchedule.constant(alpha, beta * multiplier, theta, l_max=schedule.l_max)
    duration = n_requests * alpha * beta * multiplier
    plan = make_plan(steady, pool, duration, seed)
    if len(plan) < 2:
        return 0.0
    _, steps = run(plan, engine_config, seed)
    span_end = plan.events[-1].arrival_time
    return mean_kv_utilization(steps, engine_config.kv_capacity_tokens, settle_fraction * span_end, span_end)


def calibrate_beta(
    engine_config,
    schedule: ParameterSchedule,
    pool: PromptPool,
    target: tuple[float, float] = (0.30, 0.40),
    seed: int = 0,
    n_requests: int = 1000,
    bounds: tuple[float, float] = (2.0 ** -10, 2.0 ** 10),
    max_iter: int = 40,
) -> Calibration:
    """Find a beta multiplier whose steady KV utilization lies in ``target``.

    Utilization falls as the multiplier grows (sparser arrivals). The search
    brackets by doubling/halving from 1, then bisects in log2 space. Probes
    share one seed, so every probe sees the same underlying random numbers.
    """
    lo_t, hi_t = target
    if not 0 < lo_t < hi_t < 1:
        raise ValueError("target must satisfy 0 < low < high < 1")
    probes: list[tuple[float, float]] = []

    def probe(log_m):
        m = 2.0 ** log_m
        u = probe_utilization(engine_config, schedule, pool, m, seed, n_requests)
        probes.append((m, u))
        return u

    def found(log_m, u):
        m = 2.0 ** log_m
        return Calibration(multiplier=m, utilization=u, schedule=schedule.scale_beta(m), probes=probes)

    log_lo, log_hi = math.log2(bounds[0]), math.log2(bounds[1])
    x = 0.0
    u = probe(x)
    if lo_t <= u <= hi_t:
        return found(x, u)
    # bracket: util decreasing in log_m
    step = 1.0 if u > hi_t else -1.0
    prev = x
    while True:
        nxt = min(max(prev + step, log_lo), log_hi)
        if nxt == prev:
            seen = [p[1] for p in probes]
            raise CalibrationError(
                f"target unreachable: utilization {lo_t:.2f}-{hi_t:.2f} not attained for multipliers in "
                f"[{bounds[0]:g}, {bounds[1]:g}]; achieved extremes {min(seen):.4f} .. {max(seen):.4f}"
            )
        u = probe(nxt)
        if lo_t <= u <= hi_t:
            return found(nxt, u)
        if (step > 0 and u < lo_t) or (step < 0 and u > hi_t):
            break
        prev = nxt
    a, b = sorted((prev, nxt))  # util(a) > hi_t, util(b) < lo_t
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        u = probe(mid)
        if lo_t <= u <= hi_t:
            return found(mid, u)
        if u > hi_t:
            a = mid
        else:
            b = mid
    raise CalibrationError(f"bisection did not converge after {max_iter} probes; last utilization {u:.4f}")
