"""Run metrics: nearest-rank percentiles, per-run reports, run comparison.

Requests still in flight at the horizon are excluded from latency
percentiles and deadline accounting but show up in the `incomplete` count,
so saturation cannot silently improve a run's tail.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .model import DagRequest


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample."""
    if not samples:
        raise ValueError("percentile of empty sample set")
    if not 0 < p <= 100:
        raise ValueError(f"p must be in (0, 100], got {p}")
    ordered = sorted(samples)
    rank = math.ceil(p / 100.0 * len(ordered))
    return ordered[rank - 1]


def aggregate(requests: Iterable[DagRequest]) -> dict:
    """Latency/deadline/cold-start aggregates over completed requests."""
    done = [r for r in requests if r.completion_time_us is not None]
    out: dict = {"count": len(done)}
    if not done:
        out.update(
            p50_e2e_us=None, p99_e2e_us=None, p999_e2e_us=None,
            deadline_met_fraction=None, cold_starts=0,
            qdelay_p50_us=None, qdelay_p99_us=None, qdelay_p999_us=None,
        )
        return out
    e2e = [r.e2e_us for r in done]
    qd = [r.queue_delay_us for r in done]
    out["p50_e2e_us"] = percentile(e2e, 50)
    out["p99_e2e_us"] = percentile(e2e, 99)
    out["p999_e2e_us"] = percentile(e2e, 99.9)
    out["deadline_met_fraction"] = sum(1 for r in done if r.deadline_met) / len(done)
    out["cold_starts"] = sum(r.cold_starts for r in done)
    out["qdelay_p50_us"] = percentile(qd, 50)
    out["qdelay_p99_us"] = percentile(qd, 99)
    out["qdelay_p999_us"] = percentile(qd, 99.9)
    return out


def arrivals_fingerprint(arrivals: Iterable[tuple[int, str, int]]) -> str:
    """Digest of (arrival_time_us, dag_id, req_id); compare() matches on it."""
    h = hashlib.sha256()
    for t, dag_id, req_id in arrivals:
        h.update(f"{t},{dag_id},{req_id};".encode())
    return h.hexdigest()[:16]


@dataclass
class RunReport:
    seed: int
    horizon_us: int
    stack: str
    workload_fingerprint: str
    requests: list[DagRequest]
    scaling_log: list[tuple] = field(default_factory=list)
    active_series: list[tuple] = field(default_factory=list)
    sandbox_rows: list[tuple] = field(default_factory=list)
    journal: list[tuple] = field(default_factory=list)

    def summary(self) -> dict:
        total = len(self.requests)
        completed = sum(1 for r in self.requests if r.completion_time_us is not None)
        per_class: dict[str, dict] = {}
        per_dag: dict[str, dict] = {}
        for tag in sorted({r.dag.class_tag for r in self.requests}):
            per_class[tag] = aggregate(r for r in self.requests if r.dag.class_tag == tag)
        for dag_id in sorted({r.dag.dag_id for r in self.requests}):
            per_dag[dag_id] = aggregate(r for r in self.requests if r.dag.dag_id == dag_id)
        actions = [row[2] for row in self.scaling_log]
        return {
            "seed": self.seed,
            "horizon_us": self.horizon_us,
            "stack": self.stack,
            "workload_fingerprint": self.workload_fingerprint,
            "requests": {
                "total": total,
                "completed": completed,
                "incomplete": total - completed,
            },
            "overall": aggregate(self.requests),
            "per_class": per_class,
            "per_dag": per_dag,
            "scaling": {
                "out": actions.count("out"),
                "in": actions.count("in"),
                "hold": actions.count("hold"),
            },
        }

    # -- output files --------------------------------------------------------

    def write(self, outdir: str | Path, trace_lines: list[str] | None = None,
              arrivals: list[tuple[int, str, int]] | None = None) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(
            json.dumps(self.summary(), indent=2) + "\n", encoding="utf-8"
        )
        with (out / "requests.csv").open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(
                ["req_id", "dag_id", "class", "sgs", "arrival_us", "completion_us",
                 "e2e_us", "qdelay_us", "cold_starts", "deadline_met"]
            )
            for r in self.requests:
                w.writerow([
                    r.req_id, r.dag.dag_id, r.dag.class_tag,
                    "" if r.routed_sgs is None else r.routed_sgs,
                    r.arrival_time_us,
                    "" if r.completion_time_us is None else r.completion_time_us,
                    "" if r.e2e_us is None else r.e2e_us,
                    r.queue_delay_us, r.cold_starts,
                    "" if r.deadline_met is None else int(r.deadline_met),
                ])
        with (out / "scaling.csv").open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["time_us", "dag_id", "action", "metric", "active_count"])
            for t, dag_id, action, metric, count in self.scaling_log:
                w.writerow([t, dag_id, action, f"{metric:.6f}", count])
        with (out / "active_sgs.csv").open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["time_us", "dag_id", "active_count"])
            for row in self.active_series:
                w.writerow(list(row))
        with (out / "sandboxes.csv").open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["tick_time_us", "sgs", "dag_id", "fn_id", "rate_ewma",
                        "demand", "allocated", "soft_evicted"])
            for t, sgs, dag_id, fn_id, rate, demand, alloc, soft in self.sandbox_rows:
                w.writerow([t, sgs, dag_id, fn_id, f"{rate:.4f}", demand, alloc, soft])
        with (out / "lb_journal.csv").open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["time_us", "dag_id", "event", "active_sgs", "detail"])
            for row in self.journal:
                w.writerow(list(row))
        if trace_lines is not None:
            (out / "trace.tsv").write_text(
                "".join(line + "\n" for line in trace_lines), encoding="utf-8"
            )
        if arrivals is not None:
            with (out / "arrivals.csv").open("w", newline="", encoding="utf-8") as f:
                w = csv.writer(f)
                w.writerow(["arrival_time_us", "dag_id", "req_id"])
                for t, dag_id, req_id in arrivals:
                    w.writerow([t, dag_id, req_id])


def load_summary(rundir: str | Path) -> dict:
    path = Path(rundir) / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"no summary.json under {rundir}")
    return json.loads(path.read_text(encoding="utf-8"))


class WorkloadMismatchError(ValueError):
    """Two runs cannot be compared: different arrival streams or horizons."""


def _ratio(a, b):
    if a is None or b is None:
        return None
    if b == 0:
        return 1.0 if a == 0 else None  # None renders as n/a (division by zero)
    return a / b


def compare_runs(summary_a: dict, summary_b: dict) -> dict:
    """Ratios of run A's metrics over run B's (tail, cold starts, misses)."""
    if summary_a["workload_fingerprint"] != summary_b["workload_fingerprint"]:
        raise WorkloadMismatchError(
            "workload fingerprints differ: "
            f"{summary_a['workload_fingerprint']} vs {summary_b['workload_fingerprint']}"
        )
    if summary_a["horizon_us"] != summary_b["horizon_us"]:
        raise WorkloadMismatchError("horizons differ")

    def block(agg_a: dict, agg_b: dict) -> dict:
        miss_a = None if agg_a["deadline_met_fraction"] is None else 1 - agg_a["deadline_met_fraction"]
        miss_b = None if agg_b["deadline_met_fraction"] is None else 1 - agg_b["deadline_met_fraction"]
        return {
            "p50_e2e": _ratio(agg_a["p50_e2e_us"], agg_b["p50_e2e_us"]),
            "p99_e2e": _ratio(agg_a["p99_e2e_us"], agg_b["p99_e2e_us"]),
            "p999_e2e": _ratio(agg_a["p999_e2e_us"], agg_b["p999_e2e_us"]),
            "cold_starts": _ratio(agg_a["cold_starts"], agg_b["cold_starts"]),
            "deadline_miss": _ratio(miss_a, miss_b),
        }

    out = {
        "a_stack": summary_a["stack"],
        "b_stack": summary_b["stack"],
        "overall": block(summary_a["overall"], summary_b["overall"]),
        "per_class": {},
    }
    shared = sorted(set(summary_a["per_class"]) & set(summary_b["per_class"]))
    for tag in shared:
        out["per_class"][tag] = block(summary_a["per_class"][tag], summary_b["per_class"][tag])
    return out


def render_comparison(cmp: dict) -> str:
    def fmt(x):
        return "n/a" if x is None else f"{x:.3f}"

    lines = [f"ratios A/B (A={cmp['a_stack']}, B={cmp['b_stack']})"]
    header = f"{'scope':<10}{'p50':>8}{'p99':>8}{'p99.9':>8}{'cold':>8}{'miss':>8}"
    lines.append(header)
    scopes = [("overall", cmp["overall"])] + sorted(cmp["per_class"].items())
    for name, b in scopes:
        lines.append(
            f"{name:<10}{fmt(b['p50_e2e']):>8}{fmt(b['p99_e2e']):>8}"
            f"{fmt(b['p999_e2e']):>8}{fmt(b['cold_starts']):>8}{fmt(b['deadline_miss']):>8}"
        )
    return "\n".join(lines)
