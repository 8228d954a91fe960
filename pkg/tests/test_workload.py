"""Arrival generation: thinning statistics, pattern equivalences, class table."""
import math
import random

import pytest

from dagsched.engine import Engine
from dagsched.model import US_PER_S, validate_dag
from dagsched.workload import (
    C4_CONSTANT_RPS,
    CLASS_EXEC_MS,
    CLASS_SETUP_MS,
    CLASS_SLACK_MS,
    RatePattern,
    RateSampler,
    WorkloadEntry,
    entry_arrivals,
    generate_arrivals,
    sample_class_dag,
    sample_class_pattern,
)
from helpers import single_dag


def _entry(pattern, start_s=0, end_s=20, dag=None):
    return WorkloadEntry(
        dag or single_dag(), pattern, int(start_s * US_PER_S), int(end_s * US_PER_S)
    )


def test_constant_rate_count_within_three_sigma():
    lam, horizon_s = 50.0, 20
    expected = lam * horizon_s
    for seed in range(5):
        times = entry_arrivals(
            _entry(RatePattern.constant(lam), end_s=horizon_s), random.Random(seed)
        )
        assert abs(len(times) - expected) <= 3 * math.sqrt(expected)


def test_arrivals_sorted_and_inside_window():
    times = entry_arrivals(
        _entry(RatePattern.constant(30), start_s=5, end_s=9), random.Random(2)
    )
    assert times == sorted(times)
    assert all(5 * US_PER_S <= t < 9 * US_PER_S for t in times)


def test_zero_rate_yields_no_arrivals():
    assert entry_arrivals(_entry(RatePattern.constant(0.0)), random.Random(0)) == []


def test_zero_amplitude_sinusoid_equals_constant_trace():
    """Thinning burns the acceptance uniform even at ratio 1, so these match."""
    const = entry_arrivals(_entry(RatePattern.constant(40)), random.Random(7))
    flat = entry_arrivals(
        _entry(RatePattern.sinusoid(40, 0.0, 10 * US_PER_S)), random.Random(7)
    )
    assert const == flat


def test_sinusoid_concentrates_arrivals_at_the_peak():
    # Peak at t=2.5s (rate 90), trough at t=7.5s (rate 10), period 10s.
    pattern = RatePattern.sinusoid(50, 40, 10 * US_PER_S)
    peak = trough = 0
    for seed in range(3):
        for t in entry_arrivals(_entry(pattern, end_s=40), random.Random(seed)):
            phase = (t % (10 * US_PER_S)) / US_PER_S
            if 1.5 <= phase < 3.5:
                peak += 1
            elif 6.5 <= phase < 8.5:
                trough += 1
    assert peak > 4 * trough


def test_resampled_rate_is_piecewise_constant_and_query_order_free():
    pattern = RatePattern.resampled_poisson(100, 900, US_PER_S)
    s1 = RateSampler(pattern, random.Random(3))
    s2 = RateSampler(pattern, random.Random(3))
    forward = [s1.rate_at(k * US_PER_S + 5) for k in range(6)]
    backward = [s2.rate_at(k * US_PER_S + 5) for k in reversed(range(6))]
    assert forward == list(reversed(backward))
    assert s1.rate_at(2 * US_PER_S + 1) == s1.rate_at(2 * US_PER_S + 999_998)
    assert len(set(forward)) > 1
    assert all(100 <= r <= 900 for r in forward)


def test_sinusoid_sampler_formula():
    pattern = RatePattern.sinusoid(60, 20, 8 * US_PER_S)
    sampler = RateSampler(pattern, random.Random(0))
    assert sampler.rate_at(2 * US_PER_S) == pytest.approx(80.0)  # sin peak
    assert sampler.rate_at(6 * US_PER_S) == pytest.approx(40.0)  # sin trough
    assert sampler.rate_at(0) == pytest.approx(60.0)


def test_pattern_validation():
    with pytest.raises(ValueError):
        RatePattern.sinusoid(10, 11, US_PER_S).validate()  # amplitude above avg
    with pytest.raises(ValueError):
        RatePattern.sinusoid(10, 5, 0).validate()
    with pytest.raises(ValueError):
        RatePattern.resampled_poisson(10, 5).validate()
    with pytest.raises(ValueError):
        RatePattern(kind="wobble").validate()
    with pytest.raises(ValueError):
        _entry(RatePattern.constant(5), start_s=3, end_s=3).validate()


def test_generate_arrivals_streams_are_independent_per_entry():
    eng = Engine(master_seed=42)
    e0 = _entry(RatePattern.constant(20), dag=single_dag("a"))
    e1 = _entry(RatePattern.constant(35), dag=single_dag("b"))
    merged = generate_arrivals([e0, e1], 42, eng.stream)
    assert [a.arrival_time_us for a in merged] == sorted(a.arrival_time_us for a in merged)
    only_a = [a.arrival_time_us for a in merged if a.dag.dag_id == "a"]

    # Dropping entry 1 entirely must not perturb entry 0's stream.
    eng2 = Engine(master_seed=42)
    alone = generate_arrivals([e0], 42, eng2.stream)
    assert [a.arrival_time_us for a in alone] == only_a


def test_class_dag_shapes():
    rng = random.Random(9)
    for tag, nfns in (("C1", 1), ("C2", 1), ("C3", 3), ("C4", 4)):
        dag = sample_class_dag(tag, f"{tag.lower()}-x", rng)
        validate_dag(dag)
        assert dag.class_tag == tag
        assert len(dag.functions) == nfns
        lo, hi = CLASS_SETUP_MS
        assert all(lo * 1000 <= f.setup_overhead_us <= hi * 1000 for f in dag.functions)
    c3 = sample_class_dag("C3", "c3-y", rng)
    assert [sorted(f.predecessors) for f in c3.functions] == [[], ["f0"], ["f1"]]
    c4 = sample_class_dag("C4", "c4-y", rng)
    assert sorted(c4.by_id["f3"].predecessors) == ["f1", "f2"]
    assert c4.by_id["f1"].predecessors == frozenset({"f0"})


def test_class_dag_budgets():
    rng = random.Random(31)
    for _ in range(50):
        for tag in ("C1", "C2", "C3", "C4"):
            dag = sample_class_dag(tag, "t", rng)
            exec_lo, exec_hi = CLASS_EXEC_MS[tag]
            slack_lo, slack_hi = CLASS_SLACK_MS[tag]
            per_fn = dag.functions[0].exec_time_us
            assert all(f.exec_time_us == per_fn for f in dag.functions)
            cp_us = per_fn * (3 if tag in ("C3", "C4") else 1)
            if tag in ("C1", "C2"):
                assert exec_lo * 1000 <= cp_us <= exec_hi * 1000
            else:  # integer split of the drawn total: cp within a rounding hair
                assert exec_lo * 1000 - 3 <= cp_us <= exec_hi * 1000
            slack = dag.deadline_us - cp_us
            assert slack_lo * 1000 - 1 <= slack <= slack_hi * 1000 + 1


def test_class_patterns():
    rng = random.Random(17)
    for tag in ("C1", "C2", "C3"):
        p = sample_class_pattern(tag, "sinusoid", rng)
        p.validate()
        assert p.kind == "sinusoid" and p.amplitude_rps <= p.avg_rps
    c4 = sample_class_pattern("C4", "sinusoid", rng)
    assert c4.kind == "constant" and c4.rate_rps == C4_CONSTANT_RPS
    rp = sample_class_pattern("C2", "resampled-poisson", rng)
    assert rp.kind == "resampled-poisson" and (rp.low_rps, rp.high_rps) == (600, 900)
    scaled = sample_class_pattern("C4", "sinusoid", rng, rate_scale=0.1)
    assert scaled.rate_rps == pytest.approx(C4_CONSTANT_RPS * 0.1)
    with pytest.raises(ValueError):
        sample_class_pattern("C1", "bursty", rng)


def test_class_pattern_rate_scale_applies_to_sinusoid():
    base = sample_class_pattern("C1", "sinusoid", random.Random(4))
    scaled = sample_class_pattern("C1", "sinusoid", random.Random(4), rate_scale=0.5)
    assert scaled.avg_rps == pytest.approx(base.avg_rps * 0.5)
    assert scaled.amplitude_rps == pytest.approx(base.amplitude_rps * 0.5)
    assert scaled.period_us == base.period_us
