"""Scenario files: the JSON schema describing one simulated run.

Top-level keys: cluster, policies, sim, workload. All durations are
milliseconds in the file (suffixed _ms) and converted to microseconds on
load. Validation errors carry the offending field path and exit the CLI
with status 2.

Workload entries come in two shapes:

  explicit  {"dag": {...}, "pattern": {...}, "start_ms": 0, "end_ms": 60000}
  class     {"class": "C1", "count": 2, "arrival": "sinusoid",
             "rate_scale": 1.0, "start_ms": 0, "end_ms": 60000}

Class entries sample exec/slack/setup/pattern parameters once per DAG from
the class table, seeded from the master seed, so a scenario file plus a seed
pins the workload exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model import (
    US_PER_MS,
    DagSpec,
    DagValidationError,
    FunctionSpec,
    validate_dag,
)
from .workload import (
    CLASS_EXEC_MS,
    RatePattern,
    WorkloadEntry,
    sample_class_dag,
    sample_class_pattern,
)


class ScenarioError(ValueError):
    """Invalid scenario file; `path` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ScenarioError(path, message)


def _reject_unknown(obj: dict, known: set[str], path: str) -> None:
    """Misspelled keys must not silently fall back to defaults."""
    for key in obj:
        _require(key in known, f"{path}.{key}", "unknown field")


def _get_num(obj: dict, key: str, path: str, default=None, minimum=None, integral=False):
    if key not in obj:
        if default is None:
            raise ScenarioError(f"{path}.{key}", "missing required field")
        return default
    val = obj[key]
    ok = isinstance(val, (int, float)) and not isinstance(val, bool)
    _require(ok, f"{path}.{key}", f"expected a number, got {val!r}")
    if integral:
        _require(float(val).is_integer(), f"{path}.{key}", "expected an integer")
        val = int(val)
    if minimum is not None:
        _require(val >= minimum, f"{path}.{key}", f"must be >= {minimum}, got {val}")
    return val


@dataclass
class ClusterConfig:
    sgs_count: int = 2
    workers_per_sgs: int = 4
    cores_per_worker: int = 8
    pool_capacity_mb: int = 4096


@dataclass
class PolicyConfig:
    stack: str = "sgs"  # "sgs" (semi-global, proactive) or "centralized" baseline
    placement: str = "even"  # or "packed"
    eviction: str = "fair"  # or "lru"
    scaleout: str = "gradual"  # or "instant"
    routing: str = "lottery"  # or "round-robin" / "all-spread"
    idle_timeout_ms: int = 900_000
    sot: float = 0.3
    sit: float = 0.1
    discount_factor: float = 0.5
    alpha_r: float = 0.3
    alpha_q: float = 0.25
    window_len: int = 50
    estimator_interval_ms: int = 100
    sla_p: float = 0.99
    lb_tick_ms: int = 500
    virtual_nodes: int = 64


@dataclass
class SimConfig:
    horizon_ms: int = 60_000
    master_seed: int = 0
    charge_overheads: bool = True
    lb_decision_overhead_us: int = 190
    sgs_decision_overhead_us: int = 241
    failures: list[dict] = field(default_factory=list)


@dataclass
class ScenarioConfig:
    cluster: ClusterConfig
    policies: PolicyConfig
    sim: SimConfig
    workload_raw: list[dict]

    def build_entries(self, stream_factory) -> list[WorkloadEntry]:
        """Materialize workload entries; class entries draw from the table."""
        entries: list[WorkloadEntry] = []
        horizon_us = self.sim.horizon_ms * US_PER_MS
        for i, raw in enumerate(self.workload_raw):
            path = f"workload[{i}]"
            start_us = int(_get_num(raw, "start_ms", path, default=0, minimum=0) * US_PER_MS)
            end_us = int(
                _get_num(raw, "end_ms", path, default=self.sim.horizon_ms, minimum=0) * US_PER_MS
            )
            _require(end_us > start_us, f"{path}.end_ms", "window must not be empty")
            _require(start_us <= horizon_us, f"{path}.start_ms", "window starts past horizon")
            if "dag" in raw:
                _reject_unknown(raw, {"dag", "pattern", "start_ms", "end_ms"}, path)
                dag = parse_dag(raw["dag"], f"{path}.dag")
                pattern = parse_pattern(raw.get("pattern"), f"{path}.pattern")
                entries.append(WorkloadEntry(dag, pattern, start_us, end_us))
            elif "class" in raw:
                _reject_unknown(
                    raw,
                    {"class", "count", "arrival", "rate_scale", "start_ms", "end_ms"},
                    path,
                )
                tag = raw["class"]
                _require(tag in CLASS_EXEC_MS, f"{path}.class", f"unknown class {tag!r}")
                count = _get_num(raw, "count", path, default=1, minimum=1, integral=True)
                arrival = raw.get("arrival", "sinusoid")
                rate_scale = _get_num(raw, "rate_scale", path, default=1.0, minimum=0.0)
                rng = stream_factory(f"classgen:{i}")
                for j in range(count):
                    dag = sample_class_dag(tag, f"{tag.lower()}-{i}-{j}", rng)
                    try:
                        validate_dag(dag)
                    except DagValidationError as exc:  # pragma: no cover - table is sound
                        raise ScenarioError(f"{path}.class", str(exc)) from exc
                    pattern = sample_class_pattern(tag, arrival, rng, rate_scale)
                    entries.append(WorkloadEntry(dag, pattern, start_us, end_us))
            else:
                raise ScenarioError(path, "entry needs either 'dag' or 'class'")
        _require(bool(entries), "workload", "at least one entry required")
        return entries


def parse_pattern(raw: Any, path: str) -> RatePattern:
    _require(isinstance(raw, dict), path, "expected an object")
    kind = raw.get("kind")
    if kind == "constant":
        _reject_unknown(raw, {"kind", "rate_rps"}, path)
        return RatePattern.constant(_get_num(raw, "rate_rps", path, minimum=0.0))
    if kind == "sinusoid":
        _reject_unknown(raw, {"kind", "avg_rps", "amplitude_rps", "period_ms"}, path)
        pattern = RatePattern.sinusoid(
            _get_num(raw, "avg_rps", path, minimum=0.0),
            _get_num(raw, "amplitude_rps", path, default=0.0, minimum=0.0),
            int(_get_num(raw, "period_ms", path, minimum=1) * US_PER_MS),
        )
    elif kind == "resampled-poisson":
        _reject_unknown(
            raw, {"kind", "rate_low_rps", "rate_high_rps", "resample_period_ms"}, path
        )
        pattern = RatePattern.resampled_poisson(
            _get_num(raw, "rate_low_rps", path, minimum=0.0),
            _get_num(raw, "rate_high_rps", path, minimum=0.0),
            int(_get_num(raw, "resample_period_ms", path, default=1000, minimum=1) * US_PER_MS),
        )
    else:
        raise ScenarioError(f"{path}.kind", f"unknown pattern kind {kind!r}")
    try:
        pattern.validate()
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from exc
    return pattern


def parse_dag(raw: Any, path: str) -> DagSpec:
    _require(isinstance(raw, dict), path, "expected an object")
    _reject_unknown(raw, {"dag_id", "functions", "deadline_ms", "class_tag"}, path)
    dag_id = raw.get("dag_id")
    _require(isinstance(dag_id, str) and dag_id != "", f"{path}.dag_id", "required string")
    fns_raw = raw.get("functions")
    _require(isinstance(fns_raw, list) and fns_raw, f"{path}.functions", "non-empty list required")
    fns = []
    for k, fr in enumerate(fns_raw):
        fpath = f"{path}.functions[{k}]"
        _require(isinstance(fr, dict), fpath, "expected an object")
        _reject_unknown(
            fr, {"fn_id", "exec_ms", "memory_mb", "setup_ms", "predecessors"}, fpath
        )
        fn_id = fr.get("fn_id")
        _require(isinstance(fn_id, str) and fn_id != "", f"{fpath}.fn_id", "required string")
        preds = fr.get("predecessors", [])
        _require(
            isinstance(preds, list) and all(isinstance(p, str) for p in preds),
            f"{fpath}.predecessors", "expected a list of fn ids",
        )
        fns.append(
            FunctionSpec(
                fn_id=fn_id,
                exec_time_us=int(_get_num(fr, "exec_ms", fpath, minimum=0) * US_PER_MS),
                memory_mb=_get_num(fr, "memory_mb", fpath, default=128, minimum=1, integral=True),
                setup_overhead_us=int(
                    _get_num(fr, "setup_ms", fpath, default=250, minimum=0) * US_PER_MS
                ),
                predecessors=frozenset(preds),
            )
        )
    dag = DagSpec(
        dag_id=dag_id,
        functions=tuple(fns),
        deadline_us=int(_get_num(raw, "deadline_ms", path, minimum=0) * US_PER_MS),
        class_tag=raw.get("class_tag", "custom"),
    )
    try:
        validate_dag(dag)
    except DagValidationError as exc:
        raise ScenarioError(path, str(exc)) from exc
    return dag


def load_scenario(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    if not p.exists():
        raise ScenarioError(str(path), "scenario file not found")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(str(path), f"invalid JSON: {exc}") from exc
    return parse_scenario(raw)


def parse_scenario(raw: dict) -> ScenarioConfig:
    _require(isinstance(raw, dict), "$", "scenario must be an object")

    c = raw.get("cluster", {})
    _require(isinstance(c, dict), "cluster", "expected an object")
    _reject_unknown(
        c,
        {"sgs_count", "workers_per_sgs", "cores_per_worker", "pool_capacity_mb"},
        "cluster",
    )
    cluster = ClusterConfig(
        sgs_count=_get_num(c, "sgs_count", "cluster", default=2, minimum=1, integral=True),
        workers_per_sgs=_get_num(c, "workers_per_sgs", "cluster", default=4, minimum=1, integral=True),
        cores_per_worker=_get_num(c, "cores_per_worker", "cluster", default=8, minimum=1, integral=True),
        pool_capacity_mb=_get_num(c, "pool_capacity_mb", "cluster", default=4096, minimum=1, integral=True),
    )

    p = raw.get("policies", {})
    _require(isinstance(p, dict), "policies", "expected an object")
    _reject_unknown(
        p,
        {"stack", "placement", "eviction", "scaleout", "routing", "idle_timeout_ms",
         "sot", "sit", "discount_factor", "alpha_r", "alpha_q", "window_len",
         "estimator_interval_ms", "sla_p", "lb_tick_ms", "virtual_nodes"},
        "policies",
    )
    policies = PolicyConfig(
        stack=p.get("stack", "sgs"),
        placement=p.get("placement", "even"),
        eviction=p.get("eviction", "fair"),
        scaleout=p.get("scaleout", "gradual"),
        routing=p.get("routing", "lottery"),
        idle_timeout_ms=_get_num(p, "idle_timeout_ms", "policies", default=900_000, minimum=1, integral=True),
        sot=_get_num(p, "sot", "policies", default=0.3, minimum=0.0),
        sit=_get_num(p, "sit", "policies", default=0.1, minimum=0.0),
        discount_factor=_get_num(p, "discount_factor", "policies", default=0.5, minimum=0.0),
        alpha_r=_get_num(p, "alpha_r", "policies", default=0.3, minimum=0.0),
        alpha_q=_get_num(p, "alpha_q", "policies", default=0.25, minimum=0.0),
        window_len=_get_num(p, "window_len", "policies", default=50, minimum=1, integral=True),
        estimator_interval_ms=_get_num(p, "estimator_interval_ms", "policies", default=100, minimum=1, integral=True),
        sla_p=_get_num(p, "sla_p", "policies", default=0.99, minimum=0.0),
        lb_tick_ms=_get_num(p, "lb_tick_ms", "policies", default=500, minimum=1, integral=True),
        virtual_nodes=_get_num(p, "virtual_nodes", "policies", default=64, minimum=1, integral=True),
    )
    _require(policies.stack in ("sgs", "centralized"), "policies.stack",
             f"must be 'sgs' or 'centralized', got {policies.stack!r}")
    _require(policies.placement in ("even", "packed"), "policies.placement",
             f"must be 'even' or 'packed', got {policies.placement!r}")
    _require(policies.eviction in ("fair", "lru"), "policies.eviction",
             f"must be 'fair' or 'lru', got {policies.eviction!r}")
    _require(policies.scaleout in ("gradual", "instant"), "policies.scaleout",
             f"must be 'gradual' or 'instant', got {policies.scaleout!r}")
    _require(policies.routing in ("lottery", "round-robin", "all-spread"), "policies.routing",
             f"must be lottery/round-robin/all-spread, got {policies.routing!r}")
    _require(0 < policies.sla_p < 1, "policies.sla_p", "must be in (0, 1)")
    _require(0 < policies.discount_factor < 1, "policies.discount_factor", "must be in (0, 1)")
    _require(0 < policies.sit <= policies.sot, "policies.sit", "need 0 < sit <= sot")
    _require(0 < policies.alpha_r <= 1, "policies.alpha_r", "must be in (0, 1]")
    _require(0 < policies.alpha_q <= 1, "policies.alpha_q", "must be in (0, 1]")

    s = raw.get("sim", {})
    _require(isinstance(s, dict), "sim", "expected an object")
    _reject_unknown(
        s,
        {"horizon_ms", "master_seed", "charge_overheads", "lb_decision_overhead_us",
         "sgs_decision_overhead_us", "failures"},
        "sim",
    )
    failures = s.get("failures", [])
    _require(isinstance(failures, list), "sim.failures", "expected a list")
    for i, f in enumerate(failures):
        fp = f"sim.failures[{i}]"
        _require(isinstance(f, dict), fp, "expected an object")
        _get_num(f, "time_ms", fp, minimum=0)
        if "worker_id" in f:
            _reject_unknown(f, {"time_ms", "worker_id"}, fp)
            _get_num(f, "worker_id", fp, minimum=0, integral=True)
        else:
            _reject_unknown(f, {"time_ms", "sgs_index", "count"}, fp)
            _get_num(f, "sgs_index", fp, minimum=0, integral=True)
            _get_num(f, "count", fp, default=1, minimum=1, integral=True)
    charge = s.get("charge_overheads", True)
    _require(isinstance(charge, bool), "sim.charge_overheads", "expected true/false")
    sim = SimConfig(
        horizon_ms=_get_num(s, "horizon_ms", "sim", default=60_000, minimum=1, integral=True),
        master_seed=_get_num(s, "master_seed", "sim", default=0, minimum=0, integral=True),
        charge_overheads=charge,
        lb_decision_overhead_us=_get_num(s, "lb_decision_overhead_us", "sim", default=190, minimum=0, integral=True),
        sgs_decision_overhead_us=_get_num(s, "sgs_decision_overhead_us", "sim", default=241, minimum=0, integral=True),
        failures=failures,
    )

    workload = raw.get("workload")
    _require(isinstance(workload, list) and workload, "workload", "non-empty list required")
    known = {"cluster", "policies", "sim", "workload"}
    for key in raw:
        _require(key in known, key, "unknown top-level key")
    return ScenarioConfig(cluster=cluster, policies=policies, sim=sim, workload_raw=workload)


def set_by_path(raw: dict, dotted: str, value: Any) -> None:
    """Override a nested scenario field in place, e.g. 'policies.sot'."""
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value
