"""Centralized reactive baseline: one FIFO queue over every worker.

Requests run in ready-time order (ties by request id, then enqueue order)
with the same worker-selection rule and per-decision overhead as the
semi-global scheduler, so comparisons isolate the policies rather than the
plumbing. Sandboxes are created reactively on cold dispatch, evicted
least-recently-used under memory pressure, and swept after a fixed idle
timeout (default 15 minutes).
"""
from __future__ import annotations

import itertools
from typing import Callable

from .cluster import Sandbox, SandboxState, Worker, transition
from .engine import Engine
from .model import DagRequest
from .sgs import SchedulerCore, TaskInstance

DEFAULT_IDLE_TIMEOUT_US = 15 * 60 * 1_000_000
DEFAULT_SWEEP_PERIOD_US = 1_000_000


class CentralScheduler(SchedulerCore):
    def __init__(
        self,
        workers: list[Worker],
        engine: Engine,
        decision_overhead_us: int = 0,
        idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
        sweep_period_us: int = DEFAULT_SWEEP_PERIOD_US,
        completion_cb: Callable[[DagRequest, int], None] | None = None,
    ):
        super().__init__("central", workers, engine, decision_overhead_us, completion_cb)
        self.idle_timeout_us = idle_timeout_us
        self.sweep_period_us = sweep_period_us
        self._ids = itertools.count()

    def ingest_request(self, request: DagRequest, now_us: int) -> None:
        self.make_tasks(request, request.ready_roots(), now_us)
        self.dispatch(now_us)

    def queue_key(self, task: TaskInstance) -> tuple:
        return (task.ready_time_us, task.request.req_id, next(self._seq))

    def free_space(self, worker: Worker, memory_mb: int) -> bool:
        """Reactive platforms make room by dropping the stalest idle sandbox."""
        while worker.headroom_mb < memory_mb:
            boxes = worker.evictable_sandboxes()
            if not boxes:
                return False
            victim = min(boxes, key=lambda s: (s.last_used_us, s.sandbox_id))
            worker.remove_sandbox(victim, self.engine)
        return True

    def release_sandbox(self, sandbox: Sandbox, now_us: int) -> None:
        transition(sandbox, SandboxState.IDLE, self.engine)
        sandbox.last_used_us = now_us

    def new_sandbox_id(self) -> int:
        return next(self._ids)

    # -- keep-alive sweep ----------------------------------------------------

    def start_sweeper(self) -> None:
        self.engine.schedule(
            self.engine.now_us + self.sweep_period_us, "estimator-tick",
            self._sweep, summary="idle-timeout sweep",
        )

    def _sweep(self, now_us: int) -> None:
        for worker in self.workers:
            if not worker.alive:
                continue
            for fn_key in sorted(worker.sandboxes):
                for sandbox in list(worker.sandboxes[fn_key]):
                    if (
                        sandbox.state is SandboxState.IDLE
                        and now_us - sandbox.last_used_us >= self.idle_timeout_us
                    ):
                        worker.remove_sandbox(sandbox, self.engine)
        self.engine.schedule(
            now_us + self.sweep_period_us, "estimator-tick", self._sweep,
            summary="idle-timeout sweep",
        )
