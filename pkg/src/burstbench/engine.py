"""Discrete-event model of a continuous-batching inference engine.

Cost model per engine step::

    duration = step_overhead
             + prefill_coeff * sum(prompt_len ** 2 for sequences prefilled this step)
             + decode_coeff  * sum(context_len for sequences decoding this step)

Prefill writes ``prompt + 1`` KV slots (the prompt plus the first generated
token); each decode step adds one slot per sequence. Admission is FIFO and
reserves a sequence's final footprint (``prompt + response``) so running
sequences can always grow to completion without preemption. Timeouts apply
to queued requests only.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .distfit import ZipfParams
from .metrics import RequestRecord, Status, StepRecord


@dataclass(frozen=True)
class EmpiricalResponse:
    """Resample observed response lengths uniformly."""

    lengths: tuple[int, ...]
    l_max: int = 2048

    def __post_init__(self):
        if len(self.lengths) == 0:
            raise ValueError("empirical response model needs at least one length")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        draws = rng.choice(np.asarray(self.lengths, dtype=np.int64), size=size)
        return np.clip(draws, 1, self.l_max)


@dataclass(frozen=True)
class PeakedAtMaxResponse:
    """Mirrored truncated Zipf: mass concentrates at ``l_max`` and decays toward 1."""

    theta: float
    l_max: int = 2048

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.l_max + 1 - ZipfParams(self.theta, self.l_max).sample(rng, size)


@dataclass(frozen=True)
class BimodalResponse:
    """Two-component lognormal mixture.

    ``means`` and ``sigmas`` are the parameters of log(length) for each
    component; ``weight`` is the probability of the first component.
    """

    means: tuple[float, float]
    sigmas: tuple[float, float]
    weight: float
    l_max: int = 2048

    def __post_init__(self):
        if not 0 <= self.weight <= 1:
            raise ValueError("weight must lie in [0, 1]")
        if min(self.sigmas) < 0:
            raise ValueError("sigmas must be >= 0")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        first = rng.random(size) < self.weight
        mu = np.where(first, self.means[0], self.means[1])
        sigma = np.where(first, self.sigmas[0], self.sigmas[1])
        draws = np.rint(np.exp(rng.normal(mu, sigma)))
        return np.clip(draws, 1, self.l_max).astype(np.int64)


ResponseModel = EmpiricalResponse | PeakedAtMaxResponse | BimodalResponse


def fit_bimodal(lengths, l_max: int = 2048, seed: int = 0) -> BimodalResponse:
    """Fit a two-component lognormal mixture to observed response lengths."""
    from sklearn.mixture import GaussianMixture

    x = np.log(np.asarray([v for v in lengths if v >= 1], dtype=float)).reshape(-1, 1)
    if len(x) < 2:
        raise ValueError("need at least 2 positive lengths")
    gm = GaussianMixture(n_components=2, random_state=seed).fit(x)
    order = np.argsort(gm.means_.ravel())
    means = gm.means_.ravel()[order]
    sigmas = np.sqrt(gm.covariances_.ravel())[order]
    return BimodalResponse(
        means=(float(means[0]), float(means[1])),
        sigmas=(float(sigmas[0]), float(sigmas[1])),
        weight=float(gm.weights_[order[0]]),
        l_max=l_max,
    )


def response_model_from_config(cfg: dict, base_dir: Path | None = None) -> ResponseModel:
    cfg = dict(cfg)
    mode = cfg.pop("mode")
    l_max = int(cfg.pop("l_max", 2048))
    if mode == "empirical":
        if "trace" in cfg:
            from .trace import read_trace

            path = Path(cfg["trace"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            lengths = [r.response_tokens for r in read_trace(path) if not r.failed and r.response_tokens > 0]
        else:
            lengths = cfg["lengths"]
        return EmpiricalResponse(tuple(int(v) for v in lengths), l_max)
    if mode == "peaked_at_max":
        return PeakedAtMaxResponse(float(cfg["theta"]), l_max)
    if mode == "bimodal":
        return BimodalResponse(
            means=tuple(float(v) for v in cfg["means"]),
            sigmas=tuple(float(v) for v in cfg["sigmas"]),
            weight=float(cfg["weight"]),
            l_max=l_max,
        )
    raise ValueError(f"unknown response model mode {mode!r}; expected empirical, peaked_at_max or bimodal")


def response_model_to_config(model: ResponseModel) -> dict:
    if isinstance(model, EmpiricalResponse):
        return {"mode": "empirical", "lengths": list(model.lengths), "l_max": model.l_max}
    if isinstance(model, PeakedAtMaxResponse):
        return {"mode": "peaked_at_max", "theta": model.theta, "l_max": model.l_max}
    return {
        "mode": "bimodal",
        "means": list(model.means),
        "sigmas": list(model.sigmas),
        "weight": model.weight,
        "l_max": model.l_max,
    }


@dataclass(frozen=True)
class EngineConfig:
    kv_capacity_tokens: int
    response_model: ResponseModel
    prefill_coeff: float = 0.0
    decode_coeff: float = 0.0
    step_overhead: float = 0.0
    max_batch_prefill_tokens: int = 8192
    queue_capacity: int | None = None
    timeout: float = 30.0
    # floor for step_overhead so every step advances the clock
    min_step: float = 1e-6

    def __post_init__(self):
        if self.kv_capacity_tokens < 1:
            raise ValueError("kv_capacity_tokens must be >= 1")
        if min(self.prefill_coeff, self.decode_coeff, self.step_overhead) < 0:
            raise ValueError("cost coefficients must be >= 0")
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.queue_capacity is not None and self.queue_capacity < 0:
            raise ValueError("queue_capacity must be >= 0")
        if not self.min_step > 0:
            raise ValueError("min_step must be > 0")

    @property
    def overhead(self) -> float:
        return max(self.step_overhead, self.min_step)

    @classmethod
    def from_config(cls, cfg: dict, base_dir: Path | None = None) -> "EngineConfig":
        known = {
            "kv_capacity_tokens", "prefill_coeff", "decode_coeff", "step_overhead",
            "max_batch_prefill_tokens", "queue_capacity", "timeout_s", "response_model", "min_step",
        }
        extra = set(cfg) - known
        if extra:
            raise ValueError(f"unknown engine profile keys: {sorted(extra)}")
        return cls(
            kv_capacity_tokens=int(cfg["kv_capacity_tokens"]),
            response_model=response_model_from_config(cfg["response_model"], base_dir),
            prefill_coeff=float(cfg.get("prefill_coeff", 0.0)),
            decode_coeff=float(cfg.get("decode_coeff", 0.0)),
            step_overhead=float(cfg.get("step_overhead", 0.0)),
            max_batch_prefill_tokens=int(cfg.get("max_batch_prefill_tokens", 8192)),
            queue_capacity=None if cfg.get("queue_capacity") is None else int(cfg["queue_capacity"]),
            timeout=float(cfg.get("timeout_s", 30.0)),
            min_step=float(cfg.get("min_step", 1e-6)),
        )

    def to_config(self) -> dict:
        return {
            "kv_capacity_tokens": self.kv_capacity_tokens,
            "prefill_coeff": self.prefill_coeff,
            "decode_coeff": self.decode_coeff,
            "step_overhead": self.step_overhead,
            "max_batch_prefill_tokens": self.max_batch_prefill_tokens,
            "queue_capacity": self.queue_capacity,
            "timeout_s": self.timeout,
            "min_step": self.min_step,
            "response_model": response_model_to_config(self.response_model),
        }


@dataclass
class Request:
    request_id: int
    arrival: float
    prompt_tokens: int
    target_tokens: int

    @property
    def footprint(self) -> int:
        return self.prompt_tokens + self.target_tokens


@dataclass
class RunningSequence:
    request: Request
    first_scheduled: float
    admitted_step: int

    @property
    def finish_step(self) -> int:
        return self.admitted_step + self.request.target_tokens - 1


class Engine:
    """Mutable simulation state plus the admit/step transitions.

    ``kv_in_use`` counts tokens actually resident; ``reserved`` counts the
    final footprints of running sequences and bounds admission.
    """

    def __init__(self, config: EngineConfig):
        self.config = config
        self.clock = 0.0
        self.step_index = 0
        self.queue: deque[Request] = deque()
        self.active: dict[int, RunningSequence] = {}
        self.kv_in_use = 0
        self.reserved = 0
        self.records: list[RequestRecord] = []
        self._prefill: list[RunningSequence] = []
        self._decode_context = 0
        self._finishing: dict[int, list[int]] = {}

    @property
    def idle(self) -> bool:
        return not self.active and not self.queue

    def _fail(self, req: Request, status: Status, at: float):
        self.records.append(RequestRecord(req.request_id, req.arrival, None, at, req.prompt_tokens, 0, status))

    def enqueue(self, req: Request):
        cap = self.config.queue_capacity
        if req.prompt_tokens + 1 > self.config.kv_capacity_tokens or (cap is not None and len(self.queue) >= cap):
            self._fail(req, Status.REJECTED, req.arrival)
            return
        req.target_tokens = max(1, min(req.target_tokens, self.config.kv_capacity_tokens - req.prompt_tokens))
        self.queue.append(req)

    def expire(self):
        timeout = self.config.timeout
        while self.queue and self.clock - self.queue[0].arrival > timeout:
            self._fail(self.queue.popleft(), Status.TIMED_OUT, self.clock)

    def admit(self):
        """Drop timed-out queue heads, then admit FIFO while the head's
        footprint fits and the step's prefill budget allows it."""
        self.expire()
        cfg = self.config
        budget_used = sum(s.request.prompt_tokens for s in self._prefill)
        while self.queue:
            head = self.queue[0]
            if head.footprint > cfg.kv_capacity_tokens - self.reserved:
                break
            # the first prefill of a step is always allowed so oversized prompts cannot starve
            if self._prefill and budget_used + head.prompt_tokens > cfg.max_batch_prefill_tokens:
                break
            self.queue.popleft()
            seq = RunningSequence(head, first_scheduled=self.clock, admitted_step=self.step_index)
            self.active[head.request_id] = seq
            self._prefill.append(seq)
            self._finishing.setdefault(seq.finish_step, []).append(head.request_id)
            self.reserved += head.footprint
            self.kv_in_use += head.prompt_tokens + 1
            budget_used += head.prompt_tokens
        return self

    def step(self) -> StepRecord:
        if not self.active:
            raise RuntimeError("step() called with no active sequences")
        cfg = self.config
        n_decode = len(self.active) - len(self._prefill)
        prefill_sq = sum(s.request.prompt_tokens ** 2 for s in self._prefill)
        prefill_tokens = sum(s.request.prompt_tokens + 1 for s in self._prefill)
        duration = cfg.overhead + cfg.prefill_coeff * prefill_sq + cfg.decode_coeff * self._decode_context
        tokens = prefill_tokens + n_decode

        self.kv_in_use += n_decode
        if self.kv_in_use > cfg.kv_capacity_tokens:
            raise AssertionError(f"kv_in_use {self.kv_in_use} exceeds capacity {cfg.kv_capacity_tokens}")
        self._decode_context += n_decode + prefill_tokens
        start = self.clock
        end = start + duration
        batch = len(self.active)

        for rid in self._finishing.pop(self.step_index, ()):
            seq = self.active.pop(rid)
            req = seq.request
            self.kv_in_use -= req.footprint
            self.reserved -= req.footprint
            self._decode_context -= req.footprint
            self.records.append(
                RequestRecord(rid, req.arrival, seq.first_scheduled, end, req.prompt_tokens, req.target_tokens, Status.COMPLETED)
            )

        record = StepRecord(self.step_index, start, duration, tokens, self.kv_in_use, batch)
        self._prefill = []
        self.clock = end
        self.step_index += 1
        return record


def run(plan, config: EngineConfig, seed: int = 0) -> tuple[list[RequestRecord], list[StepRecord]]:
    """Simulate ``plan`` to completion on a simulated clock.

    ``plan`` is a WorkloadPlan or any sequence of events exposing
    ``arrival_time`` and ``request_tokens``. Response lengths are drawn
    up front from ``config.response_model``; the k-th draw belongs to
    request k, so outcomes do not depend on scheduling order.
    """
    events = getattr(plan, "events", plan)
    n = len(events)
    arrivals = [float(e.arrival_time) for e in events]
    prompts = [int(e.request_tokens) for e in events]
    targets = config.response_model.sample(np.random.default_rng(seed), n) if n else np.zeros(0, np.int64)

    engine = Engine(config)
    steps: list[StepRecord] = []
    i = 0
    while i < n or not engine.idle:
        if engine.idle:
            engine.clock = max(engine.clock, arrivals[i])
        while i < n and arrivals[i] <= engine.clock:
            engine.enqueue(Request(i, arrivals[i], prompts[i], int(targets[i])))
            i += 1
        engine.admit()
        if engine.active:
            steps.append(engine.step())
        elif engine.queue:
            raise AssertionError("queue head cannot be admitted into an empty engine")
    records = sorted(engine.records, key=lambda r: r.request_id)
    return records, steps


def mean_kv_utilization(steps: Sequence[StepRecord], capacity: int, t0: float, t1: float) -> float:
    """Time-weighted mean of kv_in_use/capacity over ``[t0, t1)``; idle time counts as empty."""
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    total = 0.0
    for s in steps:
        lo = max(s.start, t0)
        hi = min(s.end, t1)
        if hi > lo:
            total += s.kv_in_use * (hi - lo)
    return total / (capacity * (t1 - t0))
