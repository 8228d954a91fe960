"""Deterministic discrete-event core: virtual clock, event heap, RNG streams.

Two events never tie: the heap orders by (fire_time_us, seq) and seq is a
monotone insertion counter, so same-timestamp events fire in scheduling order.
Determinism additionally relies on every random draw going through a labeled
stream derived from the master seed; nothing in the simulator may touch the
global `random` module.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from typing import Callable

EVENT_KINDS = (
    "request-arrival",
    "function-complete",
    "sandbox-setup-complete",
    "estimator-tick",
    "lb-scaling-tick",
    "worker-failure",
    "simulation-end",
)


class EventInPastError(ValueError):
    """An event was scheduled before the current virtual time."""


def derive_seed(master_seed: int, label: str) -> int:
    """Stable 64-bit seed for a labeled stream under a master seed."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class SimEvent:
    __slots__ = ("fire_time_us", "seq", "kind", "summary", "callback")

    def __init__(
        self,
        fire_time_us: int,
        seq: int,
        kind: str,
        summary: str,
        callback: Callable[[int], None],
    ):
        self.fire_time_us = fire_time_us
        self.seq = seq
        self.kind = kind
        self.summary = summary
        self.callback = callback

    def __lt__(self, other: "SimEvent") -> bool:
        return (self.fire_time_us, self.seq) < (other.fire_time_us, other.seq)


class Engine:
    """Virtual clock plus event heap. All times are integer microseconds."""

    def __init__(self, master_seed: int = 0, tracing: bool = False):
        self.master_seed = master_seed
        self.now_us = 0
        self._heap: list[SimEvent] = []
        self._seq = itertools.count()
        self._streams: dict[str, random.Random] = {}
        self.scheduled_count = 0
        self.processed_count = 0
        self.tracing = tracing
        self.trace_lines: list[str] = []
        # Optional hook run after every processed event (used by invariant
        # checks in tests; None in production runs).
        self.post_event_hook: Callable[[], None] | None = None

    def stream(self, label: str) -> random.Random:
        """The labeled RNG stream, created on first use.

        Streams are independent: adding draws on one label never shifts
        another label's sequence.
        """
        rng = self._streams.get(label)
        if rng is None:
            rng = random.Random(derive_seed(self.master_seed, label))
            self._streams[label] = rng
        return rng

    def schedule(
        self,
        fire_time_us: int,
        kind: str,
        callback: Callable[[int], None],
        summary: str = "",
    ) -> SimEvent:
        if fire_time_us < self.now_us:
            raise EventInPastError(
                f"{kind} at {fire_time_us}us is before now={self.now_us}us"
            )
        ev = SimEvent(fire_time_us, next(self._seq), kind, summary, callback)
        heapq.heappush(self._heap, ev)
        self.scheduled_count += 1
        return ev

    def run_until(self, t_end_us: int) -> None:
        """Process every event with fire_time <= t_end; clock lands on t_end."""
        heap = self._heap
        while heap and heap[0].fire_time_us <= t_end_us:
            ev = heapq.heappop(heap)
            self.now_us = ev.fire_time_us
            self.processed_count += 1
            if self.tracing:
                self.trace_lines.append(f"{ev.fire_time_us}\t{ev.kind}\t{ev.summary}")
            ev.callback(ev.fire_time_us)
            if self.post_event_hook is not None:
                self.post_event_hook()
        self.now_us = t_end_us

    @property
    def pending_count(self) -> int:
        return len(self._heap)

    def trace(self, kind: str, summary: str) -> None:
        """Record an auxiliary trace line (state transitions, telemetry, routing)."""
        if self.tracing:
            self.trace_lines.append(f"{self.now_us}\t{kind}\t{summary}")
