from __future__ import annotations

import logging
import socket

import numpy as np
import pytest

from burstbench import driver, engine
from burstbench.distfit import ParameterSchedule
from burstbench.driver import EndpointUnreachable, TargetEndpoint
from burstbench.metrics import Status, aggregate
from burstbench.workload import ArrivalEvent, WorkloadPlan, make_plan

from conftest import toy_engine
from stub_server import stub_server


def plan_at(times, tokens=5):
    events = [ArrivalEvent(float(t), tokens, 0) for t in times]
    return WorkloadPlan(events, 0, ParameterSchedule(), float(times[-1]) if times else 0.0)


def spacing_error(received, times):
    rx = np.array(received) - received[0]
    return np.max(np.abs(rx - (np.array(times) - times[0])))


def test_instant_stub_paced_and_completed():
    times = [0.0, 0.1, 0.2]
    with stub_server() as (url, state):
        res = driver.dispatch(plan_at(times), TargetEndpoint(url))
    assert [r.status for r in res.records] == [Status.COMPLETED] * 3
    assert spacing_error(sorted(state.received), times) < 0.010
    assert res.max_abs_lag < 0.010


def test_slow_responses_do_not_block_sends():
    times = [0.05 * i for i in range(10)]
    with stub_server(delay=1.0) as (url, state):
        res = driver.dispatch(plan_at(times), TargetEndpoint(url))
    assert spacing_error(sorted(state.received), times) < 0.010
    assert all(r.latency >= 1.0 for r in res.records)


def test_hanging_stub_times_out():
    with stub_server(hang=True) as (url, _):
        res = driver.dispatch(plan_at([0.0, 0.05]), TargetEndpoint(url, timeout=1.0))
    assert all(r.status is Status.TIMED_OUT for r in res.records)
    assert all(r.latency >= 1.0 for r in res.records)


def test_usage_passthrough():
    with stub_server(usage={"prompt_tokens": 25, "completion_tokens": 100}) as (url, _):
        (r,) = driver.dispatch(plan_at([0.0]), TargetEndpoint(url)).records
    assert (r.prompt_tokens, r.response_tokens) == (25, 100)


def test_whitespace_fallback_without_usage():
    with stub_server() as (url, _):
        (r,) = driver.dispatch(plan_at([0.0], tokens=4), TargetEndpoint(url)).records
    assert (r.prompt_tokens, r.response_tokens) == (4, 3)


def test_http_error_is_rejected_record():
    with stub_server(status=503) as (url, _):
        (r,) = driver.dispatch(plan_at([0.0]), TargetEndpoint(url)).records
    assert r.status is Status.REJECTED


def test_unreachable_fails_fast():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(EndpointUnreachable):
        driver.dispatch(plan_at([0.0]), TargetEndpoint(f"http://127.0.0.1:{port}"))


def test_payload_and_auth(monkeypatch, caplog):
    monkeypatch.setenv("BB_TEST_TOKEN", "sekrit-123")
    caplog.set_level(logging.DEBUG)
    with stub_server() as (url, state):
        res = driver.dispatch(plan_at([0.0]), TargetEndpoint(url, model="m1", auth_env="BB_TEST_TOKEN", max_tokens=7))
    assert state.bodies[0]["model"] == "m1" and state.bodies[0]["max_tokens"] == 7
    assert state.bodies[0]["messages"][0]["role"] == "user"
    assert state.headers[0]["Authorization"] == "Bearer sekrit-123"
    assert "sekrit-123" not in caplog.text
    assert "sekrit-123" not in repr(TargetEndpoint(url, auth_env="BB_TEST_TOKEN"))
    from burstbench.metrics import export, records_csv

    assert b"sekrit-123" not in records_csv(res.records) + export(aggregate(res.records))


def test_completions_route_uses_prompt():
    ep = TargetEndpoint("http://x", route="/v1/completions")
    assert ep.payload("hi") == {"model": "default", "prompt": "hi"}


def test_run_sim_is_engine_run(pool):
    plan = make_plan(ParameterSchedule.constant(0.5, 1.0), pool, 200, seed=1)
    assert driver.run_sim(plan, toy_engine(), 1) == engine.run(plan, toy_engine(), 1)


def test_validate_target_rejects_mixed_settings():
    with pytest.raises(ValueError):
        driver.validate_target("sim", TargetEndpoint("http://x"))
    with pytest.raises(ValueError):
        driver.validate_target("endpoint", None)
    with pytest.raises(ValueError):
        driver.validate_target("gpu", None)


def test_sim_and_http_records_share_schema(pool):
    plan = make_plan(ParameterSchedule.constant(1.0, 0.2), pool, 1.0, seed=2)
    sim_records, _ = driver.run_sim(plan, toy_engine(), 2)
    with stub_server() as (url, _):
        http_records = driver.dispatch(plan, TargetEndpoint(url), pool).records
    assert len(http_records) == len(plan)
    assert type(sim_records[0]) is type(http_records[0])
    aggregate(sim_records)
    aggregate(http_records)


def test_endpoint_validation():
    with pytest.raises(ValueError):
        TargetEndpoint("http://x", timeout=0)
    with pytest.raises(ValueError):
        TargetEndpoint.from_config({"base_url": "http://x", "token": "abc"})
    assert TargetEndpoint.from_config({"base_url": "http://x", "timeout_s": 5}).timeout == 5.0
