"""Run a workload plan against a target: the in-process simulator, or a live
OpenAI-compatible HTTP endpoint paced in wall-clock time.

HTTP dispatch is open-loop: each request is sent at ``origin + arrival_time``
regardless of how many earlier requests are still in flight. Deadlines are
absolute, so pacing error does not accumulate over long runs.

For HTTP targets ``first_scheduled`` is the client send time; a black-box
server does not expose when its scheduler first picked the request up.
"""

from __future__ import annotations

import asyncio
import logging
import os
from dataclasses import dataclass
from urllib.parse import urlsplit

import numpy as np

from . import engine
from .metrics import RequestRecord, Status
from .workload import PromptPool, WorkloadPlan, whitespace_tokens

logger = logging.getLogger(__name__)

# time between session setup and the first scheduled send
_LEAD_S = 0.05


class EndpointUnreachable(ConnectionError):
    pass


@dataclass(frozen=True)
class TargetEndpoint:
    base_url: str
    route: str = "/v1/chat/completions"
    model: str = "default"
    # name of the environment variable holding the bearer token; the token itself is never stored
    auth_env: str | None = "OPENAI_API_KEY"
    timeout: float = 30.0
    max_in_flight: int = 0
    max_tokens: int | None = None

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.max_in_flight < 0:
            raise ValueError("max_in_flight must be >= 0")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/" + self.route.lstrip("/")

    @property
    def chat(self) -> bool:
        return self.route.rstrip("/").endswith("chat/completions")

    def payload(self, prompt: str) -> dict:
        body: dict = {"model": self.model}
        if self.chat:
            body["messages"] = [{"role": "user", "content": prompt}]
        else:
            body["prompt"] = prompt
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        return body

    def headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.auth_env) if self.auth_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    @classmethod
    def from_config(cls, cfg: dict) -> "TargetEndpoint":
        keys = {"base_url", "route", "model", "auth_env", "timeout_s", "max_in_flight", "max_tokens"}
        extra = set(cfg) - keys
        if extra:
            raise ValueError(f"unknown endpoint keys: {sorted(extra)}")
        kw = {k: v for k, v in cfg.items() if k != "timeout_s"}
        if "timeout_s" in cfg:
            kw["timeout"] = float(cfg["timeout_s"])
        return cls(**kw)


@dataclass
class DispatchResult:
    records: list[RequestRecord]
    # actual send time minus scheduled send time, per request, seconds
    send_lag: np.ndarray

    @property
    def max_abs_lag(self) -> float:
        return float(np.max(np.abs(self.send_lag))) if len(self.send_lag) else 0.0


def validate_target(target: str, endpoint: TargetEndpoint | None):
    if target == "sim":
        if endpoint is not None:
            raise ValueError("target 'sim' does not take an endpoint; drop the endpoint settings or use target 'endpoint'")
    elif target == "endpoint":
        if endpoint is None:
            raise ValueError("target 'endpoint' requires an endpoint base_url")
    else:
        raise ValueError(f"unknown target {target!r}; expected 'sim' or 'endpoint'")


def run_sim(plan: WorkloadPlan, engine_profile: engine.EngineConfig, seed: int = 0):
    """Simulated target; same record schema as :func:`dispatch`, no pacing."""
    return engine.run(plan, engine_profile, seed)


def _count_response(body: dict, prompt: str) -> tuple[int, int]:
    usage = body.get("usage") or {}
    prompt_tokens = usage.get("prompt_tokens")
    completion_tokens = usage.get("completion_tokens")
    if prompt_tokens is None:
        prompt_tokens = whitespace_tokens(prompt)
    if completion_tokens is None:
        text = ""
        choices = body.get("choices") or []
        if choices:
            choice = choices[0]
            text = (choice.get("message") or {}).get("content") or choice.get("text") or ""
        completion_tokens = whitespace_tokens(text)
    return int(prompt_tokens), int(completion_tokens)


async def _check_reachable(url: str, timeout: float):
    parts = urlsplit(url)
    port = parts.port or (443 if parts.scheme == "https" else 80)
    try:
        _, writer = await asyncio.wait_for(asyncio.open_connection(parts.hostname, port), timeout)
    except (OSError, asyncio.TimeoutError) as exc:
        raise EndpointUnreachable(f"cannot connect to {parts.hostname}:{port}: {exc}") from None
    writer.close()
    try:
        await writer.wait_closed()
    except OSError:
        pass


async def _dispatch(plan: WorkloadPlan, endpoint: TargetEndpoint, pool: PromptPool | None) -> DispatchResult:
    import aiohttp

    await _check_reachable(endpoint.url, min(endpoint.timeout, 5.0))
    loop = asyncio.get_running_loop()
    events = plan.events
    records: list[RequestRecord | None] = [None] * len(events)
    lag = np.zeros(len(events))
    gate = asyncio.Semaphore(endpoint.max_in_flight) if endpoint.max_in_flight else None
    timeout = aiohttp.ClientTimeout(total=endpoint.timeout)

    async def send(i, ev, origin, session):
        prompt = pool.prompts.get(ev.prompt_id) if pool is not None else None
        if prompt is None:
            prompt = " ".join(["tok"] * ev.request_tokens)
        if gate is not None:
            await gate.acquire()
        sent = loop.time() - origin
        lag[i] = sent - ev.arrival_time
        status, prompt_tokens, response_tokens = Status.COMPLETED, ev.request_tokens, 0
        try:
            async with session.post(endpoint.url, json=endpoint.payload(prompt), timeout=timeout) as resp:
                if resp.status >= 400:
                    await resp.read()
                    status = Status.REJECTED
                else:
                    body = await resp.json(content_type=None)
                    prompt_tokens, response_tokens = _count_response(body, prompt)
        except asyncio.TimeoutError:
            status = Status.TIMED_OUT
        except (aiohttp.ClientError, ValueError, OSError) as exc:
            logger.debug("request %d failed: %s", i, type(exc).__name__)
            status = Status.REJECTED
        finally:
            if gate is not None:
                gate.release()
        done = loop.time() - origin
        records[i] = RequestRecord(i, ev.arrival_time, sent, done, prompt_tokens, response_tokens, status)

    connector = aiohttp.TCPConnector(limit=0, force_close=False)
    async with aiohttp.ClientSession(connector=connector, headers=endpoint.headers()) as session:
        origin = loop.time() + _LEAD_S
        tasks = []
        for i, ev in enumerate(events):
            delay = origin + ev.arrival_time - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            tasks.append(asyncio.create_task(send(i, ev, origin, session)))
        await asyncio.gather(*tasks)

    return DispatchResult(records=list(records), send_lag=lag)


def dispatch(plan: WorkloadPlan, endpoint: TargetEndpoint, pool: PromptPool | None = None) -> DispatchResult:
    """Send every plan event to ``endpoint`` on schedule and collect one record per event.

    Raises EndpointUnreachable if the endpoint refuses connections before the
    run starts; failures during the run become TimedOut/Rejected records.
    """
    logger.info("dispatching %d requests to %s", len(plan.events), endpoint.url)
    return asyncio.run(_dispatch(plan, endpoint, pool))
