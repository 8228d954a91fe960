"""Command line front end: run one scenario, compare two runs, sweep a knob.

Exit codes: 0 on success, 2 for configuration errors (bad scenario file,
bad parameter path), 3 for runtime failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .metrics import WorkloadMismatchError, compare_runs, load_summary, render_comparison
from .scenario import ScenarioError, load_scenario, parse_scenario, set_by_path
from .simulation import run_scenario

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dagsched",
        description="Deterministic simulator for deadline-aware serverless DAG scheduling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one scenario")
    run_p.add_argument("--scenario", required=True, help="scenario JSON file")
    run_p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides sim.master_seed)")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--trace", action="store_true", help="write trace.tsv")
    run_p.add_argument("--emit-arrivals", action="store_true", help="write arrivals.csv")

    cmp_p = sub.add_parser("compare", help="metric ratios between two run dirs")
    cmp_p.add_argument("--a", required=True, help="first run directory (numerator)")
    cmp_p.add_argument("--b", required=True, help="second run directory (denominator)")

    sweep_p = sub.add_parser("sweep", help="run a scenario once per parameter value")
    sweep_p.add_argument("--scenario", required=True)
    sweep_p.add_argument("--param", required=True,
                         help="dotted path and values, e.g. policies.sot=0.1,0.3,0.6")
    sweep_p.add_argument("--seed", type=int, default=None)
    sweep_p.add_argument("--out", default=None, help="parent directory for per-value runs")
    return parser


def _cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    report = run_scenario(
        cfg, seed=args.seed, outdir=args.out,
        trace=args.trace, emit_arrivals=args.emit_arrivals,
    )
    s = report.summary()
    overall = s["overall"]
    print(f"requests: {s['requests']['total']} "
          f"(completed {s['requests']['completed']}, incomplete {s['requests']['incomplete']})")
    if overall["p999_e2e_us"] is not None:
        met = overall["deadline_met_fraction"]
        print(f"e2e p50/p99/p99.9 us: {overall['p50_e2e_us']}/"
              f"{overall['p99_e2e_us']}/{overall['p999_e2e_us']}")
        print(f"deadline met: {met:.4f}  cold starts: {overall['cold_starts']}")
    print(f"wrote {args.out}")
    return 0


def _cmd_compare(args) -> int:
    cmp = compare_runs(load_summary(args.a), load_summary(args.b))
    print(render_comparison(cmp))
    return 0


def _parse_param(spec: str):
    if "=" not in spec:
        raise ScenarioError("--param", "expected <dotted.path>=<v1,v2,...>")
    path, _, values_raw = spec.partition("=")
    values = []
    for chunk in values_raw.split(","):
        chunk = chunk.strip()
        if chunk == "":
            raise ScenarioError("--param", "empty value in list")
        try:
            values.append(json.loads(chunk))
        except json.JSONDecodeError:
            values.append(chunk)  # bare strings (e.g. policy names)
    if not values:
        raise ScenarioError("--param", "needs at least one value")
    return path.strip(), values


def _cmd_sweep(args) -> int:
    path, values = _parse_param(args.param)
    raw = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    rows = []
    for value in values:
        variant = json.loads(json.dumps(raw))  # deep copy
        set_by_path(variant, path, value)
        cfg = parse_scenario(variant)
        outdir = None
        if args.out is not None:
            outdir = Path(args.out) / f"{path.replace('.', '_')}={value}"
        report = run_scenario(cfg, seed=args.seed, outdir=outdir)
        s = report.summary()["overall"]
        rows.append((value, s))
    print(f"{'value':>12} {'p99.9_us':>12} {'met':>8} {'cold':>8}")
    for value, s in rows:
        p999 = "n/a" if s["p999_e2e_us"] is None else s["p999_e2e_us"]
        met = "n/a" if s["deadline_met_fraction"] is None else f"{s['deadline_met_fraction']:.4f}"
        print(f"{value!s:>12} {p999!s:>12} {met:>8} {s['cold_starts']:>8}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_sweep(args)
    except (ScenarioError, WorkloadMismatchError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
