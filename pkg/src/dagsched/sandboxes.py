"""Proactive sandbox management: demand estimation, placement, eviction.

Per estimator tick (default 100 ms) each scheduler's manager turns the
EWMA-smoothed arrival rate of every DAG it serves into a sandbox demand:

    level  = max(1, smallest k with Poisson_cdf(k; rate * interval) >= p)
    target = level * max(1, ceil(exec_time / interval))   per function

and then reconciles live sandbox counts against the targets: allocations go
to the worker with the fewest usable sandboxes of that function (reactivating
a soft-evicted one there for free when possible), surplus is soft-evicted
from the fullest worker, and hard evictions under memory pressure remove the
function whose allocation most exceeds its own estimate.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable

from .cluster import Sandbox, SandboxState, Worker, transition
from .engine import Engine
from .model import DagSpec, US_PER_S

_MAX_QUANTILE_ITER = 10_000_000


def poisson_quantile(mean: float, p: float) -> int:
    """Smallest k with P[X <= k] >= p for X ~ Poisson(mean).

    Plain running-sum CDF up to mean 700; beyond that the p0 term underflows
    a double, so the summation switches to log space.
    """
    if mean < 0:
        raise ValueError(f"mean must be >= 0, got {mean}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if mean == 0:
        return 0
    if mean <= 700.0:
        term = math.exp(-mean)
        cdf = term
        k = 0
        while cdf < p:
            k += 1
            term *= mean / k
            cdf += term
            if k > _MAX_QUANTILE_ITER:
                raise RuntimeError("poisson_quantile failed to converge")
        return k
    log_mean = math.log(mean)
    log_term = -mean
    log_cdf = log_term
    log_p = math.log(p)
    k = 0
    while log_cdf < log_p:
        k += 1
        log_term += log_mean - math.log(k)
        # log-sum-exp of the running cdf and the new term
        hi, lo = max(log_cdf, log_term), min(log_cdf, log_term)
        log_cdf = hi + math.log1p(math.exp(lo - hi))
        if k > _MAX_QUANTILE_ITER:
            raise RuntimeError("poisson_quantile failed to converge")
    return k


def overflow_factor(exec_time_us: int, interval_us: int) -> int:
    """How many estimation intervals one execution spans (>= 1)."""
    return max(1, math.ceil(exec_time_us / interval_us))


def fn_demand(exec_time_us: int, level: int, interval_us: int) -> int:
    """Sandboxes needed for one function at a given per-DAG demand level."""
    return level * overflow_factor(exec_time_us, interval_us)


class SandboxManager:
    """One scheduler's proactive sandbox pool across its workers."""

    def __init__(
        self,
        sgs_id: int,
        workers: list[Worker],
        engine: Engine,
        interval_us: int = 100_000,
        alpha_r: float = 0.3,
        sla_p: float = 0.99,
        placement: str = "even",
        eviction: str = "fair",
        sandbox_ids: Iterable[int] | None = None,
    ):
        if placement not in ("even", "packed"):
            raise ValueError(f"unknown placement policy {placement!r}")
        if eviction not in ("fair", "lru"):
            raise ValueError(f"unknown eviction policy {eviction!r}")
        self.sgs_id = sgs_id
        self.workers = workers
        self.engine = engine
        self.interval_us = interval_us
        self.alpha_r = alpha_r
        self.sla_p = sla_p
        self.placement = placement
        self.eviction = eviction
        self._ids = iter(sandbox_ids) if sandbox_ids is not None else itertools.count()
        self.rate_ewma: dict[str, float] = {}
        self.dag_level: dict[str, int] = {}
        self.fn_target: dict[str, int] = {}
        self.managed: dict[str, DagSpec] = {}
        # DAGs pre-allocated by a scale-out instruction: their level is held
        # until the first request actually arrives here, then the estimator
        # takes over (soft eviction would otherwise undo the pre-allocation
        # during the 100 ms before routed traffic ramps up).
        self.pinned: set[str] = set()
        # Invoked when warm capacity appears (setup done / reactivation);
        # the owning scheduler hooks its dispatch loop in here.
        self.notify_capacity: Callable[[int], None] | None = None
        # Queued-task count per function, supplied by the owning scheduler.
        # Parking a warm sandbox while requests for its function sit in the
        # queue would force a pointless cold start, so trims consult this.
        self.queued_demand: Callable[[str], int] = lambda fn_key: 0

    # -- bookkeeping ---------------------------------------------------------

    def note_dag(self, dag: DagSpec) -> None:
        self.managed.setdefault(dag.dag_id, dag)

    def _alive_workers(self) -> list[Worker]:
        return [w for w in self.workers if w.alive]

    def active_sgs_wide(self, fn_key: str) -> int:
        return sum(w.active_count(fn_key) for w in self.workers if w.alive)

    def resident_sgs_wide(self, fn_key: str) -> int:
        return sum(w.resident_count(fn_key) for w in self.workers if w.alive)

    def sandbox_level(self, dag: DagSpec) -> int:
        """Per-function allocation level for telemetry (demand units)."""
        total = sum(self.active_sgs_wide(dag.fn_key(f.fn_id)) for f in dag.functions)
        return math.ceil(total / len(dag.functions))

    # -- estimator tick ------------------------------------------------------

    def on_tick(self, now_us: int, arrival_counts: dict[str, int]) -> list[tuple]:
        """Re-estimate demand for every served DAG; returns per-fn CSV rows."""
        rows: list[tuple] = []
        interval_s = self.interval_us / US_PER_S
        for dag_id in sorted(self.managed):
            dag = self.managed[dag_id]
            count = arrival_counts.get(dag_id, 0)
            if dag_id in self.pinned:
                if count == 0:
                    rows.extend(self._tick_rows(now_us, dag))
                    continue
                self.pinned.discard(dag_id)
            measured = count / interval_s
            prev = self.rate_ewma.get(dag_id)
            ewma = measured if prev is None else (
                self.alpha_r * measured + (1.0 - self.alpha_r) * prev
            )
            self.rate_ewma[dag_id] = ewma
            level = max(1, poisson_quantile(ewma * interval_s, self.sla_p))
            self.set_dag_demand(dag, level, now_us)
            rows.extend(self._tick_rows(now_us, dag))
        return rows

    def _tick_rows(self, now_us: int, dag: DagSpec) -> list[tuple]:
        rows = []
        for f in dag.functions:
            key = dag.fn_key(f.fn_id)
            active = self.active_sgs_wide(key)
            rows.append(
                (
                    now_us,
                    self.sgs_id,
                    dag.dag_id,
                    f.fn_id,
                    self.rate_ewma.get(dag.dag_id, 0.0),
                    self.fn_target.get(key, 0),
                    active,
                    self.resident_sgs_wide(key) - active,
                )
            )
        return rows

    # -- demand application --------------------------------------------------

    def set_dag_demand(self, dag: DagSpec, level: int, now_us: int) -> None:
        """Apply a new demand level to each of the DAG's functions.

        Increases reconcile: allocate however many sandboxes it takes to cover
        the target, counting whatever already exists. Decreases park only the
        demand delta (old target − new target): sandboxes the dispatcher
        created reactively beyond the estimate are left in service, because
        they embody observed concurrency the rate quantile missed; the
        release-path quota retires them one at a time once they actually sit
        idle with no queued work.
        """
        self.note_dag(dag)
        self.dag_level[dag.dag_id] = level
        for f in dag.functions:
            key = dag.fn_key(f.fn_id)
            target = fn_demand(f.exec_time_us, level, self.interval_us)
            old = self.fn_target.get(key)
            self.fn_target[key] = target
            active = self.active_sgs_wide(key)
            if active < target:
                self._allocate(f, key, target - active, now_us)
            elif old is not None and target < old:
                self._soft_evict(key, old - target)

    def preallocate(self, dag: DagSpec, level: int, now_us: int) -> None:
        """Scale-out instruction: bring this DAG up to a demand level now."""
        self.note_dag(dag)
        if dag.dag_id not in self.rate_ewma:
            self.pinned.add(dag.dag_id)
        self.set_dag_demand(dag, max(level, self.dag_level.get(dag.dag_id, 0)), now_us)

    def zero_demand(self, dag_id: str, now_us: int) -> None:
        """Scale-in drop: release everything this DAG holds here."""
        dag = self.managed.pop(dag_id, None)
        if dag is None:
            return
        self.set_dag_demand(dag, 0, now_us)
        self.managed.pop(dag_id, None)  # set_dag_demand re-registered it
        self.rate_ewma.pop(dag_id, None)
        self.dag_level.pop(dag_id, None)
        self.pinned.discard(dag_id)

    # -- placement -----------------------------------------------------------

    def _allocate(self, fn, fn_key: str, n: int, now_us: int) -> None:
        place = self._place_even if self.placement == "even" else self._place_packed
        for _ in range(n):
            if not place(fn, fn_key, now_us):
                # Nothing can host the sandbox right now; leave the shortfall
                # for the next tick rather than over-evicting busy workers.
                self.engine.trace("allocation-deferred", f"fn={fn_key}")
                break

    def _place_even(self, fn, fn_key: str, now_us: int) -> bool:
        alive = self._alive_workers()
        if not alive:
            return False
        w = min(alive, key=lambda x: (x.active_count(fn_key), -x.headroom_mb, x.worker_id))
        return self._materialize_on(w, fn, fn_key, now_us, may_evict=True)

    def _place_packed(self, fn, fn_key: str, now_us: int) -> bool:
        alive = self._alive_workers()
        if not alive:
            return False
        ordered = sorted(alive, key=lambda x: (-x.active_count(fn_key), x.worker_id))
        for w in ordered:
            if w.soft_evicted_sandbox(fn_key) or w.headroom_mb >= fn.memory_mb:
                return self._materialize_on(w, fn, fn_key, now_us, may_evict=False)
        # Everything is saturated: fall back to evicting on the fullest worker.
        return self._materialize_on(ordered[0], fn, fn_key, now_us, may_evict=True)

    def _materialize_on(self, w: Worker, fn, fn_key: str, now_us: int, may_evict: bool) -> bool:
        reusable = w.soft_evicted_sandbox(fn_key)
        if reusable is not None:
            # SoftAllocate: zero cost, no setup event.
            transition(reusable, SandboxState.IDLE, self.engine)
            if self.notify_capacity is not None:
                self.notify_capacity(now_us)
            return True
        if w.headroom_mb < fn.memory_mb:
            if not (may_evict and self.free_space_on(w, fn.memory_mb)):
                return False
        sb = Sandbox(next(self._ids), fn_key, w.worker_id, fn.memory_mb, now_us)
        w.add_sandbox(sb)
        self.engine.trace(
            "sandbox-transition",
            f"sb={sb.sandbox_id} fn={fn_key} worker={w.worker_id} created->setting-up",
        )
        setup_done = now_us + fn.setup_overhead_us
        self.engine.schedule(
            setup_done,
            "sandbox-setup-complete",
            lambda t, sb=sb: self._on_setup_complete(sb, t),
            summary=f"sb={sb.sandbox_id} fn={fn_key} worker={w.worker_id}",
        )
        return True

    def _on_setup_complete(self, sb: Sandbox, now_us: int) -> None:
        if sb.state is not SandboxState.SETTING_UP:
            return  # worker died while setting up
        transition(sb, SandboxState.IDLE, self.engine)
        sb.last_used_us = now_us
        # The DAG may have been scaled off this scheduler while the setup ran;
        # don't hand a ghost sandbox to the dispatcher.
        if self.fn_target.get(sb.fn_key, 0) == 0:
            transition(sb, SandboxState.SOFT_EVICTED, self.engine)
            return
        if self.notify_capacity is not None:
            self.notify_capacity(now_us)

    # -- eviction ------------------------------------------------------------

    def _soft_evict(self, fn_key: str, n: int) -> None:
        if self.queued_demand(fn_key) > 0:
            # Backlogged function: its idle sandboxes are between jobs, not
            # surplus. The quota applies again once the queue is clear.
            return
        for _ in range(n):
            ordered = sorted(
                (w for w in self._alive_workers() if w.active_count(fn_key) > 0),
                key=lambda x: (-x.active_count(fn_key), x.worker_id),
            )
            sb = None
            for w in ordered:
                sb = w.idle_warm(fn_key)
                if sb is not None:
                    break
            if sb is None:
                # Everything usable is busy or still setting up; the release
                # path's quota check finishes the job.
                return
            transition(sb, SandboxState.SOFT_EVICTED, self.engine)

    def on_sandbox_release(self, sb: Sandbox, now_us: int) -> None:
        """Busy sandbox finished executing; park it idle or soft-evict surplus."""
        self.make_idle(sb, now_us)
        self.apply_release_quota(sb)

    def make_idle(self, sb: Sandbox, now_us: int) -> None:
        transition(sb, SandboxState.IDLE, self.engine)
        sb.last_used_us = now_us

    def apply_release_quota(self, sb: Sandbox) -> None:
        """Soft-evict a just-released sandbox if its function is over target.

        The scheduler calls this after its post-completion dispatch pass, so a
        sandbox with a queued task waiting goes straight back to work instead
        of being parked and cold-replaced a moment later; only a sandbox still
        idle once the queue has had its chance is surplus. The check also
        waits for the function's first estimated target: a sandbox created
        reactively before any estimator tick stays warm rather than being
        parked at birth. No-op unless the sandbox is still idle (it may have
        been reused, or hard-evicted by the dispatch pass for space).
        """
        if sb.state is not SandboxState.IDLE:
            return
        if self.queued_demand(sb.fn_key) > 0:
            return
        target = self.fn_target.get(sb.fn_key)
        if target is not None and self.active_sgs_wide(sb.fn_key) > target:
            transition(sb, SandboxState.SOFT_EVICTED, self.engine)

    def free_space_on(self, w: Worker, needed_mb: int, fair: bool | None = None) -> bool:
        """Hard-evict on one worker until `needed_mb` fits; False if impossible.

        Fair policy: victim function = the one whose SGS-wide allocation most
        exceeds its estimated demand (ties: larger allocation, then function
        id); within it a soft-evicted sandbox goes before an idle one.
        LRU policy: oldest idle/soft-evicted sandbox on the worker, full stop.
        """
        use_fair = self.eviction == "fair" if fair is None else fair
        while w.headroom_mb < needed_mb:
            if use_fair:
                candidates = sorted(
                    {
                        s.fn_key
                        for s in w.evictable_sandboxes()
                    },
                    key=lambda fk: (
                        self.fn_target.get(fk, 0) - self.resident_sgs_wide(fk),
                        -self.resident_sgs_wide(fk),
                        fk,
                    ),
                )
                if not candidates:
                    return False
                victim_fn = candidates[0]
                sb = w.soft_evicted_sandbox(victim_fn) or w.idle_warm(victim_fn)
            else:
                boxes = w.evictable_sandboxes()
                if not boxes:
                    return False
                sb = min(boxes, key=lambda s: (s.last_used_us, s.sandbox_id))
            w.remove_sandbox(sb, self.engine)
        return True

    def new_sandbox_id(self) -> int:
        return next(self._ids)
