from __future__ import annotations

import math

import numpy as np
import pytest

from burstbench.metrics import (
    SERIES_HEADER,
    SUMMARY_HEADER,
    RequestRecord,
    Status,
    StepRecord,
    aggregate,
    export,
    load_report,
    nearest_rank,
    parse_records_csv,
    records_csv,
)

C, T, R = Status.COMPLETED, Status.TIMED_OUT, Status.REJECTED


def done(i, arrival, completion, prompt=10, resp=10, first=None):
    return RequestRecord(i, arrival, arrival if first is None else first, completion, prompt, resp, C)


def failed(i, arrival, at, status=T):
    return RequestRecord(i, arrival, None, at, 10, 0, status)


def test_failure_rate():
    recs = [done(i, i, i + 1) for i in range(8)] + [failed(8, 0, 30), failed(9, 1, 31)]
    assert aggregate(recs).R_avg == 0.2


def test_p90_nearest_rank():
    recs = [done(i, 0.0, float(i + 1)) for i in range(10)]
    assert aggregate(recs).latency_p90 == 9.0


def test_token_latency_from_first_scheduled():
    rep = aggregate([done(0, -5.0, 10.0, resp=100, first=0.0)])
    assert rep.L_avg == pytest.approx(0.1)


def test_token_latency_falls_back_to_arrival():
    r = RequestRecord(0, 2.0, None, 12.0, 5, 100, C)
    assert aggregate([r]).L_avg == pytest.approx(0.1)


def test_empty_run():
    with pytest.raises(ValueError, match="empty run"):
        aggregate([])


def test_no_completions_reports_absent_percentiles():
    rep = aggregate([failed(0, 0, 30), failed(1, 0, 30, R)])
    assert rep.latency_p90 is None and rep.L_avg is None and rep.R_avg == 1.0


def test_throughput_from_steps_and_from_requests_agree():
    recs = [done(0, 0.0, 2.0, prompt=30, resp=10), done(1, 1.0, 4.0, prompt=40, resp=20)]
    steps = [StepRecord(0, 0.0, 2.0, 40, 40, 1), StepRecord(1, 2.0, 2.0, 60, 60, 1)]
    assert aggregate(recs, steps).P_avg == aggregate(recs).P_avg == pytest.approx(100 / 4.0)


def test_series_keys_and_kv_utilization():
    recs = [done(0, 0.0, 30.0), done(1, 10.0, 70.0), failed(2, 5.0, 65.0)]
    steps = [StepRecord(0, 0.0, 60.0, 10, 50, 1), StepRecord(1, 60.0, 30.0, 20, 100, 2)]
    rep = aggregate(recs, steps, window_length=60, kv_capacity=100)
    assert [w.window_start_s for w in rep.series] == [0.0, 60.0]
    w0, w1 = rep.series
    assert (w0.completions, w0.failures, w1.completions, w1.failures) == (1, 0, 1, 1)
    assert w1.R_ins == 0.5 and w0.R_ins == 0.0
    assert w0.kv_utilization == pytest.approx(0.5)
    assert w1.kv_utilization == pytest.approx(0.5)  # busy half the window at full
    assert w0.P_ins == pytest.approx(10 / 60)


def test_series_counts_cover_all_records():
    rng = np.random.default_rng(0)
    recs = []
    for i in range(500):
        a = float(rng.uniform(0, 1000))
        if rng.random() < 0.2:
            recs.append(failed(i, a, a + 30))
        else:
            recs.append(done(i, a, a + float(rng.exponential(5))))
    rep = aggregate(recs, window_length=37)
    assert sum(w.completions + w.failures for w in rep.series) == 500
    whole = aggregate(recs, window_length=1e9)
    assert whole.series[0].R_ins == pytest.approx(whole.R_avg)


def test_nearest_rank_bruteforce():
    rng = np.random.default_rng(1)
    for n in (1, 2, 7, 10, 101):
        x = rng.normal(size=n)
        for q in (0.5, 0.9, 0.99, 1.0):
            assert nearest_rank(x, q) == sorted(x)[math.ceil(q * n) - 1]
    assert nearest_rank([], 0.9) is None


def test_export_json_round_trip():
    recs = [done(0, 0.0, 3.0), failed(1, 0.5, 31.0), done(2, 1.0, 64.0)]
    steps = [StepRecord(0, 0.0, 1.5, 21, 21, 1)]
    rep = aggregate(recs, steps, kv_capacity=100)
    assert load_report(export(rep, "json"), "json") == rep


def test_export_csv_round_trip_and_headers():
    recs = [done(0, 0.0, 3.0), failed(1, 0.5, 31.0), done(2, 1.0, 64.0)]
    rep = aggregate(recs, window_length=60)
    blob = export(rep, "csv")
    lines = blob.decode().splitlines()
    assert lines[0] == ",".join(SUMMARY_HEADER)
    assert lines[0].startswith("R_avg,L_avg_s_per_token,P_avg_tokens_per_s,latency_p90_s")
    assert lines[3] == ",".join(SERIES_HEADER)
    assert load_report(blob, "csv") == rep


def test_export_csv_summary_only_when_series_empty():
    rep = aggregate([done(0, 0.0, 1.0)])
    rep.series = []
    assert export(rep, "csv").decode().count("\n") == 2


def test_export_unknown_format():
    with pytest.raises(ValueError):
        export(aggregate([done(0, 0.0, 1.0)]), "xml")


def test_records_csv_round_trip():
    recs = [done(0, 0.0, 3.0), failed(1, 0.5, 31.0, R)]
    blob = records_csv(recs)
    assert blob.decode().splitlines()[0] == "request_id,arrival,first_scheduled,completion,prompt_tokens,response_tokens,status"
    assert parse_records_csv(blob) == recs
