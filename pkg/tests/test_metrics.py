"""Percentiles, aggregates, fingerprints, and run comparison."""
import json

import pytest

from dagsched.metrics import (
    RunReport,
    WorkloadMismatchError,
    aggregate,
    arrivals_fingerprint,
    compare_runs,
    percentile,
    render_comparison,
)
from helpers import request, single_dag


def test_percentile_nearest_rank_hand_cases():
    data = [15, 20, 35, 40, 50]
    assert percentile(data, 5) == 15    # ceil(0.25) = 1st
    assert percentile(data, 30) == 20   # ceil(1.5) = 2nd
    assert percentile(data, 40) == 20   # ceil(2.0) = 2nd
    assert percentile(data, 50) == 35   # ceil(2.5) = 3rd
    assert percentile(data, 100) == 50
    assert percentile([7], 99.9) == 7
    assert percentile([3, 1], 50) == 1
    # float(99.9) sits a hair above the decimal value, so the rank over 1000
    # samples lands on 1000, not 999: the conservative (max) side.
    assert percentile(list(range(1000, 0, -1)), 99.9) == 1000
    assert percentile(list(range(200, 0, -1)), 99.9) == 200


def test_percentile_rejects_bad_input():
    with pytest.raises(ValueError):
        percentile([], 50)
    with pytest.raises(ValueError):
        percentile([1], 0)
    with pytest.raises(ValueError):
        percentile([1], 101)


def _finished(dag, rid, arrival, e2e, cold=0, qdelay=0):
    r = request(dag, rid, arrival_us=arrival)
    r.completion_time_us = arrival + e2e
    r.cold_starts = cold
    r.queue_delay_us = qdelay
    return r


def test_aggregate_excludes_inflight_requests():
    dag = single_dag("app", deadline_us=100_000)
    done = [_finished(dag, i, 0, 50_000 + i, qdelay=i * 10) for i in range(4)]
    late = _finished(dag, 90, 0, 200_000)  # completed but past deadline
    pending = request(dag, 99)
    agg = aggregate(done + [late, pending])
    assert agg["count"] == 5
    assert agg["deadline_met_fraction"] == pytest.approx(4 / 5)
    assert agg["p50_e2e_us"] == 50_002
    assert agg["p999_e2e_us"] == 200_000
    assert agg["qdelay_p50_us"] == 10  # sorted [0, 0, 10, 20, 30] -> 3rd


def test_aggregate_of_nothing_is_explicit():
    agg = aggregate([request(single_dag(), 0)])
    assert agg["count"] == 0
    assert agg["p999_e2e_us"] is None
    assert agg["deadline_met_fraction"] is None
    assert agg["cold_starts"] == 0


def test_fingerprint_is_stable_and_sensitive():
    rows = [(100, "a", 0), (250, "b", 1)]
    fp = arrivals_fingerprint(rows)
    assert fp == arrivals_fingerprint(list(rows))
    assert len(fp) == 16
    assert fp != arrivals_fingerprint([(100, "a", 0), (251, "b", 1)])
    assert fp != arrivals_fingerprint(rows[:1])


def _report(stack="sgs", fp="abc", reqs=(), **kwargs):
    return RunReport(
        seed=1, horizon_us=10**6, stack=stack, workload_fingerprint=fp,
        requests=list(reqs), **kwargs
    )


def test_summary_counts_and_scaling_totals():
    dag = single_dag("app", deadline_us=10**6)
    reqs = [_finished(dag, 0, 0, 100), request(dag, 1)]
    rep = _report(reqs=reqs, scaling_log=[
        (1, "app", "out", 0.5, 2), (2, "app", "hold", 0.2, 2), (3, "app", "in", 0.01, 1),
        (4, "app", "hold", 0.2, 1),
    ])
    s = rep.summary()
    assert s["requests"] == {"total": 2, "completed": 1, "incomplete": 1}
    assert s["scaling"] == {"out": 1, "in": 1, "hold": 2}
    assert set(s["per_dag"]) == {"app"}
    assert set(s["per_class"]) == {"custom"}


def test_write_emits_all_report_files(tmp_path):
    dag = single_dag("app", deadline_us=10**6)
    rep = _report(reqs=[_finished(dag, 0, 10, 100)],
                  sandbox_rows=[(100, 0, "app", "f0", 12.5, 3, 3, 0)],
                  journal=[(0, "app", "assign", "1", "")])
    rep.write(tmp_path, trace_lines=["0\troute\treq=0"], arrivals=[(10, "app", 0)])
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {
        "summary.json", "requests.csv", "scaling.csv", "active_sgs.csv",
        "sandboxes.csv", "lb_journal.csv", "trace.tsv", "arrivals.csv",
    }
    body = (tmp_path / "requests.csv").read_text()
    assert "0,app,custom,,10,110,100,0,0,1" in body
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["overall"]["count"] == 1


def test_compare_blocks_mismatched_runs():
    a = _report(fp="aaaa").summary()
    b = _report(fp="bbbb").summary()
    with pytest.raises(WorkloadMismatchError):
        compare_runs(a, b)
    c = _report(fp="aaaa").summary()
    c["horizon_us"] = 5
    with pytest.raises(WorkloadMismatchError):
        compare_runs(a, c)


def test_compare_ratio_arithmetic_and_zero_handling():
    dag = single_dag("app", deadline_us=10**6)
    fast = [_finished(dag, i, 0, 1000, cold=1) for i in range(10)]
    slow = [_finished(dag, i, 0, 4000, cold=4) for i in range(10)]
    a = _report(reqs=fast).summary()
    b = _report(reqs=slow, stack="centralized").summary()
    cmp = compare_runs(a, b)
    assert cmp["overall"]["p999_e2e"] == pytest.approx(0.25)
    assert cmp["overall"]["cold_starts"] == pytest.approx(0.25)
    # Both miss rates are zero -> ratio defined as 1.0 (equal).
    assert cmp["overall"]["deadline_miss"] == 1.0
    # Nonzero over zero is undefined -> None.
    missy = [_finished(dag, i, 0, 2 * 10**6) for i in range(10)]
    c = compare_runs(_report(reqs=missy).summary(), b)
    assert c["overall"]["deadline_miss"] is None
    text = render_comparison(cmp)
    assert "overall" in text and "0.250" in text
    assert "n/a" in render_comparison(c)
