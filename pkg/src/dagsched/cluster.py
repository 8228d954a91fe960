"""Worker and sandbox state shared by the schedulers and the sandbox manager.

Sandbox lifecycle (the only legal transitions; enforced at runtime):

    setting-up -> idle
    idle       -> busy | soft-evicted | removed
    busy       -> idle                      (never directly soft-evicted)
    soft-evicted -> idle ("SoftAllocate", zero cost) | removed
    setting-up/busy -> removed only when the owning worker dies

A soft-evicted sandbox stays resident in pool memory but is invisible to
scheduling; reactivating it costs nothing and schedules no setup event.
"""
from __future__ import annotations

from collections import defaultdict
from enum import Enum
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .engine import Engine


class SandboxState(Enum):
    SETTING_UP = "setting-up"
    IDLE = "idle"
    BUSY = "busy"
    SOFT_EVICTED = "soft-evicted"
    REMOVED = "removed"


_ALLOWED = {
    (SandboxState.SETTING_UP, SandboxState.IDLE),
    (SandboxState.IDLE, SandboxState.BUSY),
    (SandboxState.BUSY, SandboxState.IDLE),
    (SandboxState.IDLE, SandboxState.SOFT_EVICTED),
    (SandboxState.SOFT_EVICTED, SandboxState.IDLE),
    (SandboxState.IDLE, SandboxState.REMOVED),
    (SandboxState.SOFT_EVICTED, SandboxState.REMOVED),
}
_WORKER_DEATH_ONLY = {
    (SandboxState.SETTING_UP, SandboxState.REMOVED),
    (SandboxState.BUSY, SandboxState.REMOVED),
}


class IllegalTransitionError(RuntimeError):
    pass


class PoolExhaustedError(RuntimeError):
    pass


class Sandbox:
    __slots__ = ("sandbox_id", "fn_key", "worker_id", "memory_mb", "state", "last_used_us")

    def __init__(
        self, sandbox_id: int, fn_key: str, worker_id: int, memory_mb: int, created_us: int
    ):
        self.sandbox_id = sandbox_id
        self.fn_key = fn_key
        self.worker_id = worker_id
        self.memory_mb = memory_mb
        self.state = SandboxState.SETTING_UP
        self.last_used_us = created_us

    @property
    def alive(self) -> bool:
        return self.state is not SandboxState.REMOVED


def transition(
    sandbox: Sandbox, new_state: SandboxState, engine: "Engine", worker_death: bool = False
) -> None:
    """Apply a lifecycle transition, tracing it and rejecting illegal edges."""
    edge = (sandbox.state, new_state)
    if edge not in _ALLOWED and not (worker_death and edge in _WORKER_DEATH_ONLY):
        raise IllegalTransitionError(
            f"sandbox {sandbox.sandbox_id} ({sandbox.fn_key}): "
            f"{sandbox.state.value} -> {new_state.value}"
        )
    sandbox.state = new_state
    engine.trace(
        "sandbox-transition",
        f"sb={sandbox.sandbox_id} fn={sandbox.fn_key} worker={sandbox.worker_id} "
        f"{edge[0].value}->{new_state.value}",
    )


class Worker:
    """One machine: a fixed core count plus a sandbox memory pool."""

    def __init__(self, worker_id: int, sgs_id: int, cores: int, pool_capacity_mb: int):
        self.worker_id = worker_id
        self.sgs_id = sgs_id
        self.total_cores = cores
        self.free_cores = cores
        self.pool_capacity_mb = pool_capacity_mb
        self.pool_used_mb = 0
        self.alive = True
        self.sandboxes: dict[str, list[Sandbox]] = defaultdict(list)
        self.running_tasks: set = set()

    # -- memory accounting ---------------------------------------------------

    @property
    def headroom_mb(self) -> int:
        return self.pool_capacity_mb - self.pool_used_mb

    def add_sandbox(self, sandbox: Sandbox) -> None:
        if sandbox.memory_mb > self.headroom_mb:
            raise PoolExhaustedError(
                f"worker {self.worker_id}: {sandbox.memory_mb}MB > headroom {self.headroom_mb}MB"
            )
        self.pool_used_mb += sandbox.memory_mb
        self.sandboxes[sandbox.fn_key].append(sandbox)

    def remove_sandbox(self, sandbox: Sandbox, engine: "Engine", worker_death: bool = False) -> None:
        transition(sandbox, SandboxState.REMOVED, engine, worker_death=worker_death)
        self.pool_used_mb -= sandbox.memory_mb
        self.sandboxes[sandbox.fn_key].remove(sandbox)

    # -- sandbox queries -----------------------------------------------------

    def active_count(self, fn_key: str) -> int:
        """Sandboxes usable by (or becoming usable to) the scheduler."""
        return sum(
            1 for s in self.sandboxes.get(fn_key, ()) if s.state is not SandboxState.SOFT_EVICTED
        )

    def resident_count(self, fn_key: str) -> int:
        return len(self.sandboxes.get(fn_key, ()))

    def idle_warm(self, fn_key: str) -> Sandbox | None:
        for s in self.sandboxes.get(fn_key, ()):
            if s.state is SandboxState.IDLE:
                return s
        return None

    def idle_warm_count(self, fn_key: str) -> int:
        return sum(1 for s in self.sandboxes.get(fn_key, ()) if s.state is SandboxState.IDLE)

    def soft_evicted_sandbox(self, fn_key: str) -> Sandbox | None:
        for s in self.sandboxes.get(fn_key, ()):
            if s.state is SandboxState.SOFT_EVICTED:
                return s
        return None

    def evictable_memory_mb(self) -> int:
        """Memory reclaimable right now: idle + soft-evicted sandboxes."""
        total = 0
        for boxes in self.sandboxes.values():
            for s in boxes:
                if s.state in (SandboxState.IDLE, SandboxState.SOFT_EVICTED):
                    total += s.memory_mb
        return total

    def evictable_sandboxes(self) -> list[Sandbox]:
        out = []
        for boxes in self.sandboxes.values():
            for s in boxes:
                if s.state in (SandboxState.IDLE, SandboxState.SOFT_EVICTED):
                    out.append(s)
        return out

    def can_host_new(self, memory_mb: int) -> bool:
        """Could a new sandbox be placed here, evicting idle/soft ones if needed?"""
        return self.headroom_mb + self.evictable_memory_mb() >= memory_mb

    def check_pool_invariant(self) -> None:
        used = sum(s.memory_mb for boxes in self.sandboxes.values() for s in boxes)
        assert used == self.pool_used_mb, (
            f"worker {self.worker_id}: accounted {self.pool_used_mb}MB, actual {used}MB"
        )
        assert 0 <= self.pool_used_mb <= self.pool_capacity_mb
        assert 0 <= self.free_cores <= self.total_cores


def choose_worker(
    workers: list[Worker], fn_key: str, memory_mb: int
) -> tuple[Worker | None, bool]:
    """Pick a worker for one dispatch; returns (worker, warm).

    Preference order: free-core workers holding a warm idle sandbox for the
    function (most idle-warm first, then lowest id), else the lowest-id
    free-core worker where a new sandbox fits (counting evictable memory).
    Returns (None, False) when nothing is feasible.
    """
    best_warm: Worker | None = None
    best_warm_count = 0
    for w in workers:
        if not w.alive or w.free_cores <= 0:
            continue
        count = w.idle_warm_count(fn_key)
        if count == 0:
            continue
        if (
            best_warm is None
            or count > best_warm_count
            or (count == best_warm_count and w.worker_id < best_warm.worker_id)
        ):
            best_warm = w
            best_warm_count = count
    if best_warm is not None:
        return best_warm, True
    best_cold: Worker | None = None
    for w in workers:
        if not (w.alive and w.free_cores > 0 and w.can_host_new(memory_mb)):
            continue
        if best_cold is None or w.worker_id < best_cold.worker_id:
            best_cold = w
    return best_cold, False
