"""Schedulers: a shared dispatch core plus the deadline-aware semi-global one.

Dispatch policy of the semi-global scheduler (SGS): among queued tasks pick
the minimum remaining slack, i.e. (absolute deadline - now) minus the task's
critical path to the sink; ties fall to least remaining work, then lowest
request id. Because `now` shifts every candidate equally, the relative order
is static and the queue can live in a heap keyed on (deadline - cp, cp,
req_id, seq). Tasks are never preempted; a task is dispatched only where a
free core exists and a warm sandbox, pool headroom, or evictable surplus
makes it runnable (feasibility filter), and no feasible task is left queued
while a compatible core is free (work conservation).
"""
from __future__ import annotations

import heapq
import itertools
from collections import deque
from enum import Enum
from typing import Callable

from .cluster import Sandbox, SandboxState, Worker, choose_worker, transition
from .engine import Engine
from .model import DagRequest, FnState, FunctionSpec, critical_path_from


class TaskState(Enum):
    QUEUED = "queued"
    DISPATCHED = "dispatched"  # cold: sandbox setting up on its core
    RUNNING = "running"
    DONE = "done"


class TaskInstance:
    __slots__ = (
        "request",
        "fn",
        "fn_key",
        "ready_time_us",
        "state",
        "worker",
        "sandbox",
        "cold",
        "run_token",
    )

    def __init__(self, request: DagRequest, fn: FunctionSpec, fn_key: str, ready_time_us: int):
        self.request = request
        self.fn = fn
        self.fn_key = fn_key
        self.ready_time_us = ready_time_us
        self.state = TaskState.QUEUED
        self.worker: Worker | None = None
        self.sandbox: Sandbox | None = None
        self.cold = False
        # Bumped when the task's execution is invalidated (worker death);
        # stale completion/setup events check it and turn into no-ops.
        self.run_token = 0


class QDelayTracker:
    """Per-DAG queuing delay: EWMA plus a fill-gated sample window.

    After a scale action the window (and the EWMA with it) resets; the tracker
    reports not-ready until window_len fresh samples arrive, which is what
    pauses further scaling decisions.
    """

    def __init__(self, alpha: float = 0.25, window_len: int = 50):
        self.alpha = alpha
        self.window_len = window_len
        self._ewma: dict[str, float] = {}
        self._windows: dict[str, deque] = {}

    def record(self, dag_id: str, delay_us: int) -> None:
        if delay_us < 0:
            raise ValueError(f"negative queuing delay {delay_us}")
        prev = self._ewma.get(dag_id)
        self._ewma[dag_id] = (
            float(delay_us) if prev is None else self.alpha * delay_us + (1 - self.alpha) * prev
        )
        window = self._windows.get(dag_id)
        if window is None:
            window = deque(maxlen=self.window_len)
            self._windows[dag_id] = window
        window.append(delay_us)

    def ewma_us(self, dag_id: str) -> float:
        return self._ewma.get(dag_id, 0.0)

    def ready(self, dag_id: str) -> bool:
        window = self._windows.get(dag_id)
        return window is not None and len(window) == self.window_len

    def reset(self, dag_id: str) -> None:
        self._ewma.pop(dag_id, None)
        self._windows.pop(dag_id, None)


class SchedulerCore:
    """Queue + dispatch machinery shared by the semi-global and the
    centralized baseline scheduler; subclasses choose the queue order and the
    sandbox policy hooks."""

    def __init__(
        self,
        name: str,
        workers: list[Worker],
        engine: Engine,
        decision_overhead_us: int = 0,
        completion_cb: Callable[[DagRequest, int], None] | None = None,
    ):
        self.name = name
        self.workers = workers
        self.engine = engine
        self.decision_overhead_us = decision_overhead_us
        self.completion_cb = completion_cb
        self._heap: list[tuple[tuple, TaskInstance]] = []
        self._seq = itertools.count()
        self._queued_fn: dict[str, int] = {}

    # -- subclass hooks ------------------------------------------------------

    def queue_key(self, task: TaskInstance) -> tuple:
        raise NotImplementedError

    def free_space(self, worker: Worker, memory_mb: int) -> bool:
        raise NotImplementedError

    def release_sandbox(self, sandbox: Sandbox, now_us: int) -> None:
        raise NotImplementedError

    def finish_release(self, sandbox: Sandbox, now_us: int) -> None:
        """Called after the post-completion dispatch pass; the released sandbox
        is by then either reused, evicted, or confirmed surplus."""
        pass

    def new_sandbox_id(self) -> int:
        raise NotImplementedError

    def record_queue_delay(self, task: TaskInstance, delay_us: int, now_us: int) -> None:
        pass

    def on_request_finished(self, request: DagRequest, now_us: int) -> None:
        pass

    # -- queue ---------------------------------------------------------------

    def enqueue_task(self, task: TaskInstance) -> None:
        task.state = TaskState.QUEUED
        task.request.state[task.fn.fn_id] = FnState.QUEUED
        self._queued_fn[task.fn_key] = self._queued_fn.get(task.fn_key, 0) + 1
        heapq.heappush(self._heap, (self.queue_key(task), task))

    def queued_fn_count(self, fn_key: str) -> int:
        """Queued (not yet dispatched) tasks of one function."""
        return self._queued_fn.get(fn_key, 0)

    def make_tasks(self, request: DagRequest, fn_ids: list[str], now_us: int) -> None:
        for fn_id in fn_ids:
            fn = request.dag.by_id[fn_id]
            self.enqueue_task(
                TaskInstance(request, fn, request.dag.fn_key(fn_id), now_us)
            )

    @property
    def queued_count(self) -> int:
        return len(self._heap)

    def _any_free_core(self) -> bool:
        return any(w.alive and w.free_cores > 0 for w in self.workers)

    # -- dispatch ------------------------------------------------------------

    def dispatch(self, now_us: int) -> None:
        """Run tasks in queue order while cores and sandboxes allow.

        Infeasible tasks (memory-bound) are skipped, not blocking; dispatching
        never adds capacity, so skipped tasks stay infeasible within one pass.
        """
        stash: list[tuple[tuple, TaskInstance]] = []
        while self._heap and self._any_free_core():
            key, task = heapq.heappop(self._heap)
            worker, warm = choose_worker(self.workers, task.fn_key, task.fn.memory_mb)
            if worker is None:
                stash.append((key, task))
                continue
            self._start(task, worker, warm, now_us)
        for item in stash:
            heapq.heappush(self._heap, item)

    def _start(self, task: TaskInstance, worker: Worker, warm: bool, now_us: int) -> None:
        request = task.request
        self._queued_fn[task.fn_key] -= 1
        worker.free_cores -= 1
        worker.running_tasks.add(task)
        task.worker = worker
        delay = now_us - task.ready_time_us
        request.queue_delay_us += delay
        self.record_queue_delay(task, delay, now_us)
        start_us = now_us + self.decision_overhead_us
        token = task.run_token
        fn = task.fn
        if warm:
            sandbox = worker.idle_warm(task.fn_key)
            transition(sandbox, SandboxState.BUSY, self.engine)
            task.sandbox = sandbox
            task.state = TaskState.RUNNING
            request.state[fn.fn_id] = FnState.RUNNING
            done_us = start_us + fn.exec_time_us
        else:
            task.cold = True
            request.cold_starts += 1
            if worker.headroom_mb < fn.memory_mb:
                freed = self.free_space(worker, fn.memory_mb)
                assert freed, "choose_worker promised evictable headroom"
            sandbox = Sandbox(
                self.new_sandbox_id(), task.fn_key, worker.worker_id, fn.memory_mb, now_us
            )
            worker.add_sandbox(sandbox)
            self.engine.trace(
                "sandbox-transition",
                f"sb={sandbox.sandbox_id} fn={task.fn_key} worker={worker.worker_id} "
                "created->setting-up",
            )
            task.sandbox = sandbox
            task.state = TaskState.DISPATCHED
            request.state[fn.fn_id] = FnState.RUNNING
            setup_done = start_us + fn.setup_overhead_us
            self.engine.schedule(
                setup_done,
                "sandbox-setup-complete",
                lambda t, task=task, token=token: self._on_cold_setup(task, token, t),
                summary=f"req={request.req_id} fn={task.fn_key} cold",
            )
            done_us = setup_done + fn.exec_time_us
        self.engine.schedule(
            done_us,
            "function-complete",
            lambda t, task=task, token=token: self._on_complete(task, token, t),
            summary=f"req={request.req_id} fn={task.fn_key}",
        )

    def _on_cold_setup(self, task: TaskInstance, token: int, now_us: int) -> None:
        if task.run_token != token:
            return
        sandbox = task.sandbox
        transition(sandbox, SandboxState.IDLE, self.engine)
        transition(sandbox, SandboxState.BUSY, self.engine)
        task.state = TaskState.RUNNING

    def _on_complete(self, task: TaskInstance, token: int, now_us: int) -> None:
        if task.run_token != token:
            return
        request = task.request
        worker = task.worker
        worker.free_cores += 1
        worker.running_tasks.discard(task)
        task.state = TaskState.DONE
        self.release_sandbox(task.sandbox, now_us)
        newly_ready = request.mark_done(task.fn.fn_id)
        if newly_ready:
            self.make_tasks(request, newly_ready, now_us)
        if request.finished:
            request.completion_time_us = now_us
            if self.completion_cb is not None:
                self.completion_cb(request, now_us)
            self.on_request_finished(request, now_us)
        self.dispatch(now_us)
        self.finish_release(task.sandbox, now_us)

    # -- failure injection ---------------------------------------------------

    def worker_failed(self, worker: Worker, now_us: int) -> None:
        """Drop a worker: lose its sandboxes, re-queue its in-flight tasks.

        Re-queued tasks keep their original ready_time, so the queuing delay
        they eventually report includes the lost execution attempt.
        """
        worker.alive = False
        for task in sorted(worker.running_tasks, key=lambda t: (t.request.req_id, t.fn.fn_id)):
            task.run_token += 1
            task.sandbox = None
            task.worker = None
            self.enqueue_task(task)
        worker.running_tasks.clear()
        for fn_key in sorted(worker.sandboxes):
            for sandbox in list(worker.sandboxes[fn_key]):
                worker.remove_sandbox(sandbox, self.engine, worker_death=True)
        worker.free_cores = 0
        self.dispatch(now_us)


class SemiGlobalScheduler(SchedulerCore):
    """Deadline-aware scheduler over one worker partition, with proactive
    sandbox management and queuing-delay telemetry for the load balancer."""

    def __init__(
        self,
        sgs_id: int,
        workers: list[Worker],
        engine: Engine,
        manager,
        decision_overhead_us: int = 0,
        qdelay_alpha: float = 0.25,
        window_len: int = 50,
        completion_cb: Callable[[DagRequest, int], None] | None = None,
        telemetry_cb: Callable[[int, str, float, int, bool], None] | None = None,
    ):
        super().__init__(f"sgs{sgs_id}", workers, engine, decision_overhead_us, completion_cb)
        self.sgs_id = sgs_id
        self.manager = manager
        manager.notify_capacity = self.dispatch
        manager.queued_demand = self.queued_fn_count
        self.qdelay = QDelayTracker(qdelay_alpha, window_len)
        self.telemetry_cb = telemetry_cb
        self.arrival_counts: dict[str, int] = {}

    def ingest_request(self, request: DagRequest, now_us: int) -> None:
        request.routed_sgs = self.sgs_id
        dag_id = request.dag.dag_id
        self.arrival_counts[dag_id] = self.arrival_counts.get(dag_id, 0) + 1
        self.manager.note_dag(request.dag)
        self.make_tasks(request, request.ready_roots(), now_us)
        self.dispatch(now_us)

    def estimator_tick(self, now_us: int) -> list[tuple]:
        rows = self.manager.on_tick(now_us, self.arrival_counts)
        self.arrival_counts = {}
        return rows

    def queue_key(self, task: TaskInstance) -> tuple:
        cp = critical_path_from(task.request.dag, task.fn.fn_id)
        return (
            task.request.absolute_deadline_us - cp,  # remaining slack + now
            cp,  # least remaining work
            task.request.req_id,
            next(self._seq),
        )

    def free_space(self, worker: Worker, memory_mb: int) -> bool:
        return self.manager.free_space_on(worker, memory_mb)

    def release_sandbox(self, sandbox: Sandbox, now_us: int) -> None:
        # Idle only; the over-quota check runs in finish_release, after the
        # dispatch pass has had the chance to re-task the warm sandbox.
        self.manager.make_idle(sandbox, now_us)

    def finish_release(self, sandbox: Sandbox, now_us: int) -> None:
        self.manager.apply_release_quota(sandbox)

    def new_sandbox_id(self) -> int:
        return self.manager.new_sandbox_id()

    def record_queue_delay(self, task: TaskInstance, delay_us: int, now_us: int) -> None:
        self.qdelay.record(task.request.dag.dag_id, delay_us)

    def on_request_finished(self, request: DagRequest, now_us: int) -> None:
        if self.telemetry_cb is None:
            return
        dag = request.dag
        self.telemetry_cb(
            self.sgs_id,
            dag.dag_id,
            self.qdelay.ewma_us(dag.dag_id),
            self.manager.sandbox_level(dag),
            self.qdelay.ready(dag.dag_id),
        )
