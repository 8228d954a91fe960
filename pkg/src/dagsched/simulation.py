"""Run orchestration: build the cluster from a scenario, pump events, report.

Event flow per request under the semi-global stack: the arrival event routes
the request (charging the routing overhead as a second event before the
scheduler ingests it), dispatch charges the per-decision overhead inline on
the task timeline, completions feed telemetry back to the load balancer, and
periodic estimator/scaling ticks drive the proactive machinery. The
centralized baseline replaces routing with direct ingestion into one FIFO
scheduler and the estimator ticks with an idle-timeout sweep.
"""
from __future__ import annotations

import itertools
from pathlib import Path

from .baseline import CentralScheduler
from .cluster import Worker, choose_worker
from .engine import Engine
from .loadbalancer import LoadBalancer
from .metrics import RunReport, arrivals_fingerprint
from .model import US_PER_MS, DagRequest, DagSpec
from .sandboxes import SandboxManager
from .scenario import ScenarioConfig, ScenarioError
from .sgs import SemiGlobalScheduler
from .workload import generate_arrivals


class Simulation:
    def __init__(
        self,
        cfg: ScenarioConfig,
        seed: int | None = None,
        tracing: bool = False,
        invariant_checks: bool = False,
    ):
        self.cfg = cfg
        self.seed = cfg.sim.master_seed if seed is None else seed
        self.engine = Engine(self.seed, tracing=tracing)
        self.horizon_us = cfg.sim.horizon_ms * US_PER_MS

        entries = cfg.build_entries(self.engine.stream)
        self.dags: dict[str, DagSpec] = {}
        for entry in entries:
            known = self.dags.get(entry.dag.dag_id)
            if known is None:
                self.dags[entry.dag.dag_id] = entry.dag
            elif known is not entry.dag and not _same_dag(known, entry.dag):
                raise ScenarioError(
                    "workload", f"dag_id {entry.dag.dag_id!r} defined twice with different specs"
                )
        # Entries may reference a dag_id declared by an earlier entry (on/off
        # traffic windows); rebind them to the registered spec object.
        entries = [
            e if self.dags[e.dag.dag_id] is e.dag else e.__class__(
                self.dags[e.dag.dag_id], e.pattern, e.start_us, e.end_us
            )
            for e in entries
        ]
        self.arrivals = generate_arrivals(entries, self.seed, self.engine.stream)
        self.requests: list[DagRequest] = []
        self.scaling_log: list[tuple] = []
        self.active_series: list[tuple] = []
        self.sandbox_rows: list[tuple] = []
        self.journal: list[tuple] = []

        pol = cfg.policies
        sim = cfg.sim
        lb_overhead = sim.lb_decision_overhead_us if sim.charge_overheads else 0
        sched_overhead = sim.sgs_decision_overhead_us if sim.charge_overheads else 0

        self.workers: list[Worker] = []
        per_sgs: list[list[Worker]] = []
        wid = 0
        for i in range(cfg.cluster.sgs_count):
            group = []
            for _ in range(cfg.cluster.workers_per_sgs):
                w = Worker(wid, i, cfg.cluster.cores_per_worker, cfg.cluster.pool_capacity_mb)
                self.workers.append(w)
                group.append(w)
                wid += 1
            per_sgs.append(group)

        self.lb_overhead_us = lb_overhead
        self.stack = pol.stack
        sandbox_ids = itertools.count()  # one id space across all schedulers
        if pol.stack == "sgs":
            self.schedulers: list[SemiGlobalScheduler] = []
            for i, group in enumerate(per_sgs):
                manager = SandboxManager(
                    i,
                    group,
                    self.engine,
                    interval_us=pol.estimator_interval_ms * US_PER_MS,
                    alpha_r=pol.alpha_r,
                    sla_p=pol.sla_p,
                    placement=pol.placement,
                    eviction=pol.eviction,
                    sandbox_ids=sandbox_ids,
                )
                self.schedulers.append(
                    SemiGlobalScheduler(
                        i,
                        group,
                        self.engine,
                        manager,
                        decision_overhead_us=sched_overhead,
                        qdelay_alpha=pol.alpha_q,
                        window_len=pol.window_len,
                    )
                )
            self.lb = LoadBalancer(
                self.engine,
                self.schedulers,
                self.dags,
                sot=pol.sot,
                sit=pol.sit,
                discount_factor=pol.discount_factor,
                virtual_nodes=pol.virtual_nodes,
                routing=pol.routing,
                scaleout=pol.scaleout,
                scaling_log=self.scaling_log,
                active_series=self.active_series,
                journal=self.journal,
            )
            for s in self.schedulers:
                s.telemetry_cb = self.lb.on_telemetry
            self.central = None
        else:
            self.lb = None
            self.schedulers = []
            self.central = CentralScheduler(
                self.workers,
                self.engine,
                decision_overhead_us=sched_overhead,
                idle_timeout_us=pol.idle_timeout_ms * US_PER_MS,
            )
            self.central.start_sweeper()

        self._schedule_arrivals()
        if pol.stack == "sgs":
            self._schedule_estimator_ticks(pol.estimator_interval_ms * US_PER_MS)
            self._schedule_lb_ticks(pol.lb_tick_ms * US_PER_MS)
        for i, failure in enumerate(sim.failures):
            self._schedule_failure(failure, f"sim.failures[{i}]")
        self.engine.schedule(
            self.horizon_us, "simulation-end", lambda t: None, summary="horizon"
        )
        if invariant_checks:
            self.engine.post_event_hook = self._check_invariants

    # -- construction helpers ------------------------------------------------

    def _schedule_arrivals(self) -> None:
        for req_id, arrival in enumerate(self.arrivals):
            if arrival.arrival_time_us > self.horizon_us:
                continue
            self.engine.schedule(
                arrival.arrival_time_us,
                "request-arrival",
                lambda t, rid=req_id, dag=arrival.dag: self._on_arrival(rid, dag, t),
                summary=f"req={req_id} dag={arrival.dag.dag_id}",
            )

    def _on_arrival(self, req_id: int, dag: DagSpec, now_us: int) -> None:
        request = DagRequest(req_id, dag, now_us)
        self.requests.append(request)
        if self.central is not None:
            self.central.ingest_request(request, now_us)
            return
        sgs_id = self.lb.route(dag.dag_id, req_id)
        scheduler = self.schedulers[sgs_id]
        if self.lb_overhead_us == 0:
            scheduler.ingest_request(request, now_us)
        else:
            self.engine.schedule(
                now_us + self.lb_overhead_us,
                "request-arrival",
                lambda t, r=request, s=scheduler: s.ingest_request(r, t),
                summary=f"req={req_id} dag={dag.dag_id} ingest sgs={sgs_id}",
            )

    def _schedule_estimator_ticks(self, interval_us: int) -> None:
        def make_handler(scheduler):
            def handler(now_us: int) -> None:
                self.sandbox_rows.extend(scheduler.estimator_tick(now_us))
                self.engine.schedule(
                    now_us + interval_us, "estimator-tick", handler,
                    summary=f"sgs={scheduler.sgs_id}",
                )
            return handler

        for scheduler in self.schedulers:
            self.engine.schedule(
                interval_us, "estimator-tick", make_handler(scheduler),
                summary=f"sgs={scheduler.sgs_id}",
            )

    def _schedule_lb_ticks(self, interval_us: int) -> None:
        def handler(now_us: int) -> None:
            self.lb.on_tick(now_us)
            self.engine.schedule(
                now_us + interval_us, "lb-scaling-tick", handler, summary=""
            )

        self.engine.schedule(interval_us, "lb-scaling-tick", handler, summary="")

    def _schedule_failure(self, failure: dict, path: str) -> None:
        t_us = int(failure["time_ms"] * US_PER_MS)
        if "worker_id" in failure:
            ids = [int(failure["worker_id"])]
            if ids[0] >= len(self.workers):
                raise ScenarioError(f"{path}.worker_id", f"no worker {ids[0]}")
        else:
            sgs_index = int(failure["sgs_index"])
            count = int(failure.get("count", 1))
            group = [w.worker_id for w in self.workers if w.sgs_id == sgs_index]
            if not group:
                raise ScenarioError(f"{path}.sgs_index", f"no such partition {sgs_index}")
            ids = group[: min(count, len(group))]
        for worker_id in ids:
            self.inject_worker_failure(worker_id, t_us)

    def inject_worker_failure(self, worker_id: int, t_us: int) -> None:
        """Kill a worker at t: its sandboxes vanish, in-flight work re-queues."""
        worker = self.workers[worker_id]
        self.engine.schedule(
            t_us,
            "worker-failure",
            lambda t, w=worker: self._on_worker_failure(w, t),
            summary=f"worker={worker_id}",
        )

    def _on_worker_failure(self, worker: Worker, now_us: int) -> None:
        if not worker.alive:
            return
        scheduler = self.central if self.central is not None else self.schedulers[worker.sgs_id]
        scheduler.worker_failed(worker, now_us)

    # -- running -------------------------------------------------------------

    def run(self) -> RunReport:
        self.engine.run_until(self.horizon_us)
        return RunReport(
            seed=self.seed,
            horizon_us=self.horizon_us,
            stack=self.stack,
            workload_fingerprint=arrivals_fingerprint(self.arrival_tuples()),
            requests=self.requests,
            scaling_log=self.scaling_log,
            active_series=self.active_series,
            sandbox_rows=self.sandbox_rows,
            journal=self.journal,
        )

    def arrival_tuples(self) -> list[tuple[int, str, int]]:
        return [
            (a.arrival_time_us, a.dag.dag_id, i) for i, a in enumerate(self.arrivals)
        ]

    # -- debug invariants (exercised by tests) -------------------------------

    def _check_invariants(self) -> None:
        for worker in self.workers:
            if worker.alive:
                worker.check_pool_invariant()
        schedulers = self.schedulers if self.central is None else [self.central]
        for scheduler in schedulers:
            for _, task in scheduler._heap:
                w, _ = choose_worker(scheduler.workers, task.fn_key, task.fn.memory_mb)
                assert w is None, (
                    f"work conservation violated: task req={task.request.req_id} "
                    f"fn={task.fn_key} feasible on worker {w.worker_id} but queued"
                )


def _same_dag(a: DagSpec, b: DagSpec) -> bool:
    return (
        a.deadline_us == b.deadline_us
        and a.class_tag == b.class_tag
        and a.functions == b.functions
    )


def run_scenario(
    cfg: ScenarioConfig,
    seed: int | None = None,
    outdir: str | Path | None = None,
    trace: bool = False,
    emit_arrivals: bool = False,
    invariant_checks: bool = False,
) -> RunReport:
    sim = Simulation(cfg, seed=seed, tracing=trace, invariant_checks=invariant_checks)
    report = sim.run()
    if outdir is not None:
        report.write(
            outdir,
            trace_lines=sim.engine.trace_lines if trace else None,
            arrivals=sim.arrival_tuples() if emit_arrivals else None,
        )
    return report
