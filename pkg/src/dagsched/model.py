"""Application model: function DAGs, deadlines, and slack arithmetic.

Every duration inside the simulator is an integer number of microseconds.
Scenario files speak milliseconds and are converted on ingest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

US_PER_MS = 1_000
US_PER_S = 1_000_000

CLASS_TAGS = ("C1", "C2", "C3", "C4", "custom")


class DagValidationError(ValueError):
    """A DAG definition violates a structural invariant."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class UnknownFunctionError(LookupError):
    """A function id was looked up that does not exist in the DAG."""


@dataclass(frozen=True)
class FunctionSpec:
    """One function node in an application DAG."""

    fn_id: str
    exec_time_us: int
    memory_mb: int
    setup_overhead_us: int = 0
    predecessors: frozenset[str] = field(default_factory=frozenset)


@dataclass(eq=False)
class DagSpec:
    """An application: a DAG of functions plus a relative deadline.

    The deadline is relative to request arrival; ``static_slack`` is what is
    left of it after the longest execution path.
    """

    dag_id: str
    functions: tuple[FunctionSpec, ...]
    deadline_us: int
    class_tag: str = "custom"

    def __post_init__(self) -> None:
        self.by_id: dict[str, FunctionSpec] = {f.fn_id: f for f in self.functions}
        self.successors: dict[str, list[str]] = {f.fn_id: [] for f in self.functions}
        for f in self.functions:
            for pred in sorted(f.predecessors):
                if pred in self.successors:
                    self.successors[pred].append(f.fn_id)
        self._cp_cache: dict[str, int] = {}

    def fn_key(self, fn_id: str) -> str:
        """Cluster-wide sandbox key for one of this DAG's functions."""
        return f"{self.dag_id}/{fn_id}"

    @property
    def source_ids(self) -> list[str]:
        return [f.fn_id for f in self.functions if not f.predecessors]

    @property
    def sink_ids(self) -> list[str]:
        return [fid for fid, succ in self.successors.items() if not succ]


def validate_dag(spec: DagSpec) -> None:
    """Check structural invariants, raising DagValidationError on the first hit.

    Checks, in order: duplicate ids, positive durations, predecessor
    resolution, acyclicity (the error names one offending edge), non-empty
    graph, and deadline >= critical path.
    """
    if not spec.functions:
        raise DagValidationError("empty-dag", f"{spec.dag_id} has no functions")
    if len(spec.by_id) != len(spec.functions):
        seen: set[str] = set()
        for f in spec.functions:
            if f.fn_id in seen:
                raise DagValidationError(
                    "duplicate-function", f"{spec.dag_id}: {f.fn_id} defined twice"
                )
            seen.add(f.fn_id)
    for f in spec.functions:
        if f.exec_time_us <= 0:
            raise DagValidationError(
                "nonpositive-duration",
                f"{spec.dag_id}/{f.fn_id}: exec_time_us={f.exec_time_us}",
            )
        if f.setup_overhead_us < 0:
            raise DagValidationError(
                "nonpositive-duration",
                f"{spec.dag_id}/{f.fn_id}: setup_overhead_us={f.setup_overhead_us}",
            )
        if f.memory_mb <= 0:
            raise DagValidationError(
                "nonpositive-memory", f"{spec.dag_id}/{f.fn_id}: memory_mb={f.memory_mb}"
            )
        for pred in f.predecessors:
            if pred not in spec.by_id:
                raise DagValidationError(
                    "dangling-predecessor",
                    f"{spec.dag_id}/{f.fn_id} references missing {pred}",
                )

    # Kahn's algorithm; whatever survives sits on a cycle.
    indeg = {f.fn_id: len(f.predecessors) for f in spec.functions}
    frontier = sorted(fid for fid, d in indeg.items() if d == 0)
    seen_count = 0
    while frontier:
        fid = frontier.pop()
        seen_count += 1
        for succ in spec.successors[fid]:
            indeg[succ] -= 1
            if indeg[succ] == 0:
                frontier.append(succ)
    if seen_count != len(spec.functions):
        remaining = {fid for fid, d in indeg.items() if d > 0}
        offender = min(remaining)
        edge_from = min(p for p in spec.by_id[offender].predecessors if p in remaining)
        raise DagValidationError(
            "cycle-detected", f"{spec.dag_id}: edge {edge_from} -> {offender} is on a cycle"
        )

    if spec.deadline_us < critical_path_us(spec):
        raise DagValidationError(
            "deadline-infeasible",
            f"{spec.dag_id}: deadline {spec.deadline_us}us < critical path "
            f"{critical_path_us(spec)}us",
        )


def critical_path_from(spec: DagSpec, fn_id: str) -> int:
    """Longest exec-time path from fn_id (inclusive) to any sink, in us.

    Setup overheads are not part of the path; they are a scheduling artifact,
    not work that must always happen.
    """
    if fn_id not in spec.by_id:
        raise UnknownFunctionError(f"{spec.dag_id} has no function {fn_id}")
    cached = spec._cp_cache.get(fn_id)
    if cached is not None:
        return cached
    # Iterative DFS so deep chains cannot blow the stack.
    stack: list[tuple[str, bool]] = [(fn_id, False)]
    on_path: set[str] = set()
    while stack:
        fid, expanded = stack.pop()
        if expanded:
            on_path.discard(fid)
            best_tail = 0
            for succ in spec.successors[fid]:
                best_tail = max(best_tail, spec._cp_cache[succ])
            spec._cp_cache[fid] = spec.by_id[fid].exec_time_us + best_tail
            continue
        if fid in spec._cp_cache:
            continue
        if fid in on_path:
            raise DagValidationError("cycle-detected", f"{spec.dag_id}: cycle through {fid}")
        on_path.add(fid)
        stack.append((fid, True))
        for succ in spec.successors[fid]:
            if succ not in spec._cp_cache:
                stack.append((succ, False))
    return spec._cp_cache[fn_id]


def critical_path_us(spec: DagSpec) -> int:
    """Length of the longest exec-time path through the whole DAG."""
    return max(critical_path_from(spec, fid) for fid in spec.by_id)


def static_slack_us(spec: DagSpec) -> int:
    """Deadline headroom under zero queuing: deadline minus critical path."""
    return spec.deadline_us - critical_path_us(spec)


class FnState(Enum):
    WAITING = "waiting"
    READY = "ready"
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"


@dataclass(eq=False)
class DagRequest:
    """One in-flight invocation of a DAG."""

    req_id: int
    dag: DagSpec
    arrival_time_us: int
    absolute_deadline_us: int = field(init=False)
    state: dict[str, FnState] = field(init=False)
    pending_preds: dict[str, int] = field(init=False)
    completion_time_us: int | None = None
    routed_sgs: int | None = None
    cold_starts: int = 0
    queue_delay_us: int = 0

    def __post_init__(self) -> None:
        self.absolute_deadline_us = self.arrival_time_us + self.dag.deadline_us
        self.state = {fid: FnState.WAITING for fid in self.dag.by_id}
        self.pending_preds = {
            f.fn_id: len(f.predecessors) for f in self.dag.functions
        }

    def ready_roots(self) -> list[str]:
        """Mark all source functions ready; returns their ids."""
        roots = self.dag.source_ids
        for fid in roots:
            self.state[fid] = FnState.READY
        return roots

    def mark_done(self, fn_id: str) -> list[str]:
        """Record fn_id finished; returns newly-ready successor ids."""
        self.state[fn_id] = FnState.DONE
        newly_ready = []
        for succ in self.dag.successors[fn_id]:
            self.pending_preds[succ] -= 1
            if self.pending_preds[succ] == 0:
                self.state[succ] = FnState.READY
                newly_ready.append(succ)
        return newly_ready

    @property
    def finished(self) -> bool:
        return all(s is FnState.DONE for s in self.state.values())

    @property
    def e2e_us(self) -> int | None:
        if self.completion_time_us is None:
            return None
        return self.completion_time_us - self.arrival_time_us

    @property
    def deadline_met(self) -> bool | None:
        if self.completion_time_us is None:
            return None
        return self.completion_time_us <= self.absolute_deadline_us


def remaining_work_us(request: DagRequest, fn_id: str) -> int:
    """Work that must still run after (and including) fn_id: its critical path."""
    return critical_path_from(request.dag, fn_id)


def remaining_slack_us(request: DagRequest, fn_id: str, now_us: int) -> int:
    """Slack left if fn_id started now: time-to-deadline minus its critical path.

    Negative values mean the deadline can no longer be met; such tasks still
    get scheduled (most negative first among themselves).
    """
    return (request.absolute_deadline_us - now_us) - critical_path_from(request.dag, fn_id)
