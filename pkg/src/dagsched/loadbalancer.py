"""Load balancing service: hash-ring placement, lottery routing, scaling.

Each DAG starts on the scheduler its id hashes to. Requests are routed by
lottery: an active scheduler holds tickets equal to its reported sandbox
count for the DAG (min 1), so a freshly added scheduler starts with a sliver
of traffic that grows as its proactive pool fills. Schedulers removed by
scale-in keep receiving a geometrically discounted share until their weight
decays away, at which point their sandboxes are released.

Scaling decisions compare (sum N_i * qdelay_i / sum N_i) / static_slack
against the scale-out/in thresholds, where N_i is the sandbox count each
active scheduler reported. A decision fires only when every active
scheduler's delay window is full, and any action resets those windows, so
consecutive actions cannot outrun their own feedback.

Under the `instant` scale-out policy the ramp is disabled entirely: requests
round-robin across the active set the moment it changes (ignoring sandbox
counts), and a scheduler removed by scale-in is dropped outright instead of
draining through the discounted removed list.
"""
from __future__ import annotations

import bisect
import hashlib
import math
from typing import Callable

from .engine import Engine
from .model import DagSpec, static_slack_us


def stable_hash64(key: str) -> int:
    """Process-independent 64-bit hash (builtin hash() is salted per run)."""
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


class HashRing:
    """Consistent-hash ring over scheduler ids with virtual nodes."""

    def __init__(self, sgs_ids: list[int], virtual_nodes: int = 64):
        if virtual_nodes < 1:
            raise ValueError("virtual_nodes must be >= 1")
        points: list[tuple[int, int]] = []
        for sgs_id in sgs_ids:
            for v in range(virtual_nodes):
                points.append((stable_hash64(f"sgs-{sgs_id}#vn{v}"), sgs_id))
        points.sort()
        self._hashes = [h for h, _ in points]
        self._owners = [s for _, s in points]
        self.sgs_ids = list(sgs_ids)

    def lookup(self, key: str) -> int:
        """First scheduler clockwise from the key's point."""
        idx = bisect.bisect_right(self._hashes, stable_hash64(key)) % len(self._hashes)
        return self._owners[idx]

    def order_from(self, key: str) -> list[int]:
        """All distinct schedulers in clockwise order starting at the key."""
        start = bisect.bisect_right(self._hashes, stable_hash64(key))
        seen: list[int] = []
        n = len(self._owners)
        for i in range(n):
            owner = self._owners[(start + i) % n]
            if owner not in seen:
                seen.append(owner)
        return seen


class DagRoutingState:
    """Load-balancer view of one DAG: membership, tickets, reported delays."""

    def __init__(self, dag: DagSpec, ring_order: list[int]):
        self.dag = dag
        self.ring_order = ring_order
        self.active: list[int] = [ring_order[0]]
        self.removed_age: dict[int, int] = {}
        self.tickets: dict[int, int] = {self.active[0]: 1}
        self.qdelay_us: dict[int, float] = {}
        self.sandbox_count: dict[int, int] = {}
        self.window_ready: dict[int, bool] = {}
        self.rr_counter = 0

    def is_member(self, sgs_id: int) -> bool:
        return sgs_id in self.active or sgs_id in self.removed_age


class LoadBalancer:
    def __init__(
        self,
        engine: Engine,
        schedulers: list,
        dags: dict[str, DagSpec],
        sot: float = 0.3,
        sit: float = 0.1,
        discount_factor: float = 0.5,
        virtual_nodes: int = 64,
        routing: str = "lottery",
        scaleout: str = "gradual",
        scaling_log: list | None = None,
        active_series: list | None = None,
        journal: list | None = None,
    ):
        if routing not in ("lottery", "round-robin", "all-spread"):
            raise ValueError(f"unknown routing policy {routing!r}")
        if scaleout not in ("gradual", "instant"):
            raise ValueError(f"unknown scaleout policy {scaleout!r}")
        if not 0 < sit <= sot:
            raise ValueError("thresholds must satisfy 0 < SIT <= SOT")
        if not 0 < discount_factor < 1:
            raise ValueError("discount_factor must be in (0, 1)")
        self.engine = engine
        self.schedulers = schedulers
        self.dags = dags
        self.sot = sot
        self.sit = sit
        self.discount = discount_factor
        self.routing = routing
        self.scaleout = scaleout
        self.ring = HashRing([s.sgs_id for s in schedulers], virtual_nodes)
        self.rng = engine.stream("lb.route")
        self.states: dict[str, DagRoutingState] = {}
        self.scaling_log = scaling_log if scaling_log is not None else []
        self.active_series = active_series if active_series is not None else []
        self.journal = journal if journal is not None else []

    # -- state ---------------------------------------------------------------

    def state_for(self, dag_id: str) -> DagRoutingState:
        state = self.states.get(dag_id)
        if state is None:
            dag = self.dags[dag_id]
            state = DagRoutingState(dag, self.ring.order_from(dag_id))
            if self.routing == "all-spread":
                state.active = sorted(s.sgs_id for s in self.schedulers)
                state.tickets = {s: 1 for s in state.active}
            self.states[dag_id] = state
            self._journal("assign", state)
        return state

    def _journal(self, event: str, state: DagRoutingState, detail: str = "") -> None:
        self.journal.append(
            (self.engine.now_us, state.dag.dag_id, event,
             "|".join(str(s) for s in state.active), detail)
        )

    def _sched(self, sgs_id: int):
        for s in self.schedulers:
            if s.sgs_id == sgs_id:
                return s
        raise LookupError(f"no scheduler {sgs_id}")

    # -- routing -------------------------------------------------------------

    def route(self, dag_id: str, req_id: int) -> int:
        state = self.state_for(dag_id)
        if self.routing in ("round-robin", "all-spread") or self.scaleout == "instant":
            chosen = state.active[state.rr_counter % len(state.active)]
            state.rr_counter += 1
            self.engine.trace("route", f"req={req_id} dag={dag_id} chosen={chosen} rr")
            return chosen
        weights: list[tuple[int, int]] = [
            (sgs_id, max(1, state.tickets.get(sgs_id, 1))) for sgs_id in state.active
        ]
        for sgs_id, age in state.removed_age.items():
            raw = (self.discount ** age) * state.tickets.get(sgs_id, 1)
            if raw >= 1.0:
                weights.append((sgs_id, math.ceil(raw)))
        total = sum(w for _, w in weights)
        pick = self.rng.random() * total
        chosen = weights[-1][0]
        acc = 0.0
        for sgs_id, w in weights:
            acc += w
            if pick < acc:
                chosen = sgs_id
                break
        self.engine.trace(
            "route",
            f"req={req_id} dag={dag_id} chosen={chosen} "
            + ",".join(f"{s}:{w}" for s, w in weights),
        )
        return chosen

    # -- telemetry -----------------------------------------------------------

    def on_telemetry(
        self, sgs_id: int, dag_id: str, qdelay_ewma_us: float, sandbox_count: int,
        window_ready: bool,
    ) -> None:
        state = self.state_for(dag_id)
        state.qdelay_us[sgs_id] = qdelay_ewma_us
        state.sandbox_count[sgs_id] = sandbox_count
        state.window_ready[sgs_id] = window_ready
        if state.is_member(sgs_id):
            state.tickets[sgs_id] = max(1, sandbox_count)
        self.engine.trace(
            "telemetry",
            f"sgs={sgs_id} dag={dag_id} qdelay={qdelay_ewma_us:.1f} "
            f"sandboxes={sandbox_count} ready={int(window_ready)}",
        )

    # -- scaling -------------------------------------------------------------

    def on_tick(self, now_us: int) -> None:
        for dag_id in sorted(self.states):
            state = self.states[dag_id]
            self._age_removed(state, now_us)
            self.active_series.append((now_us, dag_id, len(state.active)))
            if self.routing == "all-spread":
                continue  # every scheduler is already active; nothing to decide
            if not all(state.window_ready.get(s, False) for s in state.active):
                continue  # feedback from the last action not in yet
            self._decide(state, now_us)

    def _age_removed(self, state: DagRoutingState, now_us: int) -> None:
        for sgs_id in list(state.removed_age):
            state.removed_age[sgs_id] += 1
            raw = (self.discount ** state.removed_age[sgs_id]) * state.tickets.get(sgs_id, 1)
            if raw < 1.0:
                self._drop_removed(state, sgs_id, now_us)

    def _drop_removed(self, state: DagRoutingState, sgs_id: int, now_us: int) -> None:
        state.removed_age.pop(sgs_id, None)
        state.tickets.pop(sgs_id, None)
        self._sched(sgs_id).manager.zero_demand(state.dag.dag_id, now_us)
        self._journal("drop", state, detail=f"sgs={sgs_id}")

    def _decide(self, state: DagRoutingState, now_us: int) -> None:
        counts = [state.sandbox_count.get(s, 0) for s in state.active]
        total = sum(counts)
        if total == 0:
            self._log(now_us, state, "hold", 0.0)
            return
        weighted = sum(
            n * state.qdelay_us.get(s, 0.0) for s, n in zip(state.active, counts)
        ) / total
        slack = static_slack_us(state.dag)
        metric = weighted / slack if slack > 0 else math.inf
        if metric > self.sot:
            self._scale_out(state, metric, now_us)
        elif metric < self.sit and len(state.active) > 1:
            self._scale_in(state, metric, now_us)
        else:
            self._log(now_us, state, "hold", metric)

    def _scale_out(self, state: DagRoutingState, metric: float, now_us: int) -> None:
        candidate = next((s for s in state.ring_order if s not in state.active), None)
        if candidate is None:
            self._log(now_us, state, "hold", metric)  # nowhere left to grow
            return
        was_removed = candidate in state.removed_age
        if was_removed:
            state.removed_age.pop(candidate)
            state.tickets[candidate] = max(1, state.sandbox_count.get(candidate, 0))
        else:
            state.tickets[candidate] = 1
        state.active.append(candidate)
        # Pre-allocate the average per-function level across the new set.
        level = math.ceil(
            sum(state.sandbox_count.get(s, 0) for s in state.active) / len(state.active)
        )
        if level > 0:
            self._sched(candidate).manager.preallocate(state.dag, level, now_us)
        self._reset_windows(state)
        self._log(now_us, state, "out", metric)
        self._journal("out", state, detail=f"sgs={candidate} level={level}")

    def _scale_in(self, state: DagRoutingState, metric: float, now_us: int) -> None:
        victim = state.active.pop()  # last added
        if self.scaleout == "instant":
            self._sched(victim).manager.zero_demand(state.dag.dag_id, now_us)
            state.tickets.pop(victim, None)
            self._journal("in", state, detail=f"sgs={victim} instant")
        else:
            state.removed_age[victim] = 0
            self._journal("in", state, detail=f"sgs={victim}")
        self._reset_windows(state)
        self._log(now_us, state, "in", metric)

    def _reset_windows(self, state: DagRoutingState) -> None:
        for sgs_id in state.active:
            self._sched(sgs_id).qdelay.reset(state.dag.dag_id)
            state.window_ready[sgs_id] = False

    def _log(self, now_us: int, state: DagRoutingState, action: str, metric: float) -> None:
        self.scaling_log.append(
            (now_us, state.dag.dag_id, action, metric, len(state.active))
        )
