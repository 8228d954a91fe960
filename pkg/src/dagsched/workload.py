"""Open-loop workload generation: rate patterns and Poisson arrival streams.

Arrivals come from a non-homogeneous Poisson process realized by thinning:
candidates are drawn at the pattern's peak rate and accepted with probability
rate(t)/peak. One acceptance uniform is consumed per candidate even when the
ratio is 1, so a zero-amplitude sinusoid and a constant pattern at the same
rate yield byte-identical arrival traces under the same seed.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .model import DagSpec, FunctionSpec, US_PER_MS, US_PER_S

PATTERN_KINDS = ("constant", "sinusoid", "resampled-poisson")


@dataclass(frozen=True)
class RatePattern:
    """Arrival-rate shape for one workload entry. Rates are requests/second."""

    kind: str
    rate_rps: float = 0.0  # constant
    avg_rps: float = 0.0  # sinusoid
    amplitude_rps: float = 0.0  # sinusoid
    period_us: int = 0  # sinusoid
    low_rps: float = 0.0  # resampled-poisson
    high_rps: float = 0.0  # resampled-poisson
    resample_period_us: int = 1_000_000  # resampled-poisson

    @staticmethod
    def constant(rate_rps: float) -> "RatePattern":
        return RatePattern(kind="constant", rate_rps=rate_rps)

    @staticmethod
    def sinusoid(avg_rps: float, amplitude_rps: float, period_us: int) -> "RatePattern":
        return RatePattern(
            kind="sinusoid", avg_rps=avg_rps, amplitude_rps=amplitude_rps, period_us=period_us
        )

    @staticmethod
    def resampled_poisson(
        low_rps: float, high_rps: float, resample_period_us: int = 1_000_000
    ) -> "RatePattern":
        return RatePattern(
            kind="resampled-poisson",
            low_rps=low_rps,
            high_rps=high_rps,
            resample_period_us=resample_period_us,
        )

    def validate(self) -> None:
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.kind == "constant" and self.rate_rps < 0:
            raise ValueError("constant rate must be >= 0")
        if self.kind == "sinusoid":
            if self.avg_rps < 0 or self.amplitude_rps < 0:
                raise ValueError("sinusoid rates must be >= 0")
            if self.amplitude_rps > self.avg_rps:
                raise ValueError("sinusoid amplitude must not exceed the average")
            if self.period_us <= 0:
                raise ValueError("sinusoid period must be positive")
        if self.kind == "resampled-poisson":
            if not (0 <= self.low_rps <= self.high_rps):
                raise ValueError("resampled-poisson needs 0 <= low <= high")
            if self.resample_period_us <= 0:
                raise ValueError("resample period must be positive")

    @property
    def peak_rps(self) -> float:
        if self.kind == "constant":
            return self.rate_rps
        if self.kind == "sinusoid":
            return self.avg_rps + self.amplitude_rps
        return self.high_rps


class RateSampler:
    """Evaluates a RatePattern over absolute sim time.

    The resampled-poisson pattern redraws its rate uniformly from
    [low, high] once per resample period; draws are indexed by interval
    number so the sequence is independent of query order.
    """

    def __init__(self, pattern: RatePattern, rng: random.Random):
        pattern.validate()
        self.pattern = pattern
        self._rng = rng
        self._draws: list[float] = []

    def rate_at(self, t_us: int | float) -> float:
        p = self.pattern
        if p.kind == "constant":
            return p.rate_rps
        if p.kind == "sinusoid":
            return p.avg_rps + p.amplitude_rps * math.sin(
                2.0 * math.pi * (t_us / p.period_us)
            )
        k = int(t_us // p.resample_period_us)
        while len(self._draws) <= k:
            self._draws.append(self._rng.uniform(p.low_rps, p.high_rps))
        return self._draws[k]


@dataclass(frozen=True)
class WorkloadEntry:
    """One DAG driven by one rate pattern over [start_us, end_us)."""

    dag: DagSpec
    pattern: RatePattern
    start_us: int
    end_us: int

    def validate(self) -> None:
        self.pattern.validate()
        if self.end_us <= self.start_us:
            raise ValueError(
                f"entry for {self.dag.dag_id}: end {self.end_us} <= start {self.start_us}"
            )


@dataclass(frozen=True)
class Arrival:
    arrival_time_us: int
    dag: DagSpec


def entry_arrivals(entry: WorkloadEntry, rng: random.Random) -> list[int]:
    """Arrival times (integer us, non-decreasing) for one entry via thinning."""
    entry.validate()
    peak = entry.pattern.peak_rps
    if peak <= 0:
        return []
    sampler = RateSampler(entry.pattern, rng)
    out: list[int] = []
    t = float(entry.start_us)
    end = float(entry.end_us)
    while True:
        t += rng.expovariate(peak) * US_PER_S
        if t >= end:
            break
        # Always consume the acceptance uniform to keep same-seed traces
        # comparable across patterns with equal peak rates.
        if rng.random() < sampler.rate_at(t) / peak:
            out.append(int(round(t)))
    return out


def generate_arrivals(
    entries: list[WorkloadEntry], master_seed: int, stream_factory
) -> list[Arrival]:
    """Merged arrival stream across entries, each on its own RNG stream.

    ``stream_factory(label)`` must return a seeded random.Random; entry i uses
    label ``arrivals:{i}`` so editing one entry never perturbs another's draws.
    Ties across entries keep entry order (stable merge).
    """
    del master_seed  # streams already carry it; kept for signature clarity
    tagged: list[tuple[int, int, int, DagSpec]] = []
    for i, entry in enumerate(entries):
        times = entry_arrivals(entry, stream_factory(f"arrivals:{i}"))
        for j, t in enumerate(times):
            tagged.append((t, i, j, entry.dag))
    tagged.sort(key=lambda item: (item[0], item[1], item[2]))
    return [Arrival(t, dag) for t, _, _, dag in tagged]


# Application-class table: single-function C1/C2, a 3-function chain for C3,
# and a 4-function diamond for C4. Exec ranges are totals along the critical
# path; constituent functions split them evenly.
CLASS_EXEC_MS = {"C1": (50, 100), "C2": (100, 200), "C3": (250, 400), "C4": (300, 600)}
CLASS_SLACK_MS = {"C1": (100, 150), "C2": (300, 500), "C3": (200, 300), "C4": (500, 1000)}
CLASS_SINUSOID = {
    # avg RPS range, amplitude RPS range, period seconds range
    "C1": ((600, 1200), (100, 800), (10, 20)),
    "C2": ((400, 800), (200, 400), (30, 40)),
    "C3": ((500, 1000), (200, 600), (10, 20)),
    "C4": None,  # constant 200 RPS (zero amplitude, unbounded period)
}
CLASS_RESAMPLE_RPS = {
    "C1": (800, 1200),
    "C2": (600, 900),
    "C3": (600, 800),
    "C4": (50, 150),
}
CLASS_SETUP_MS = (125, 400)
DEFAULT_MEMORY_MB = 128
C4_CONSTANT_RPS = 200.0


def _chain_functions(n: int, per_fn_us: int, memory_mb: int, setup_us: int):
    fns = []
    for i in range(n):
        preds = frozenset() if i == 0 else frozenset({f"f{i - 1}"})
        fns.append(
            FunctionSpec(
                fn_id=f"f{i}",
                exec_time_us=per_fn_us,
                memory_mb=memory_mb,
                setup_overhead_us=setup_us,
                predecessors=preds,
            )
        )
    return tuple(fns)


def _diamond_functions(per_fn_us: int, memory_mb: int, setup_us: int):
    mk = lambda fid, preds: FunctionSpec(
        fn_id=fid,
        exec_time_us=per_fn_us,
        memory_mb=memory_mb,
        setup_overhead_us=setup_us,
        predecessors=frozenset(preds),
    )
    return (
        mk("f0", ()),
        mk("f1", ("f0",)),
        mk("f2", ("f0",)),
        mk("f3", ("f1", "f2")),
    )


def sample_class_dag(
    class_tag: str,
    dag_id: str,
    rng: random.Random,
    memory_mb: int = DEFAULT_MEMORY_MB,
) -> DagSpec:
    """Draw one DAG from the class table (exec/slack/setup sampled once)."""
    if class_tag not in CLASS_EXEC_MS:
        raise ValueError(f"unknown class {class_tag!r}")
    total_exec_us = int(round(rng.uniform(*CLASS_EXEC_MS[class_tag]) * US_PER_MS))
    slack_us = int(round(rng.uniform(*CLASS_SLACK_MS[class_tag]) * US_PER_MS))
    setup_us = int(round(rng.uniform(*CLASS_SETUP_MS) * US_PER_MS))
    if class_tag in ("C1", "C2"):
        fns = _chain_functions(1, total_exec_us, memory_mb, setup_us)
        cp = total_exec_us
    elif class_tag == "C3":
        per_fn = max(1, total_exec_us // 3)
        fns = _chain_functions(3, per_fn, memory_mb, setup_us)
        cp = per_fn * 3
    else:  # C4 diamond: critical path crosses 3 of the 4 functions
        per_fn = max(1, total_exec_us // 3)
        fns = _diamond_functions(per_fn, memory_mb, setup_us)
        cp = per_fn * 3
    return DagSpec(
        dag_id=dag_id, functions=fns, deadline_us=cp + slack_us, class_tag=class_tag
    )


def sample_class_pattern(
    class_tag: str,
    arrival: str,
    rng: random.Random,
    rate_scale: float = 1.0,
) -> RatePattern:
    """Draw the class's arrival pattern, optionally scaling all rates."""
    if arrival == "sinusoid":
        shape = CLASS_SINUSOID[class_tag]
        if shape is None:
            return RatePattern.constant(C4_CONSTANT_RPS * rate_scale)
        (avg_lo, avg_hi), (amp_lo, amp_hi), (per_lo, per_hi) = shape
        avg = rng.uniform(avg_lo, avg_hi)
        amp = min(rng.uniform(amp_lo, amp_hi), avg)  # rate must stay >= 0
        period_us = int(round(rng.uniform(per_lo, per_hi) * US_PER_S))
        return RatePattern.sinusoid(avg * rate_scale, amp * rate_scale, period_us)
    if arrival == "resampled-poisson":
        lo, hi = CLASS_RESAMPLE_RPS[class_tag]
        return RatePattern.resampled_poisson(lo * rate_scale, hi * rate_scale)
    raise ValueError(f"unknown arrival shape {arrival!r} for class entries")
