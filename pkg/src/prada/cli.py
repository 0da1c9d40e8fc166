"""Command-line entry point.

Three subcommands:

* ``run``: execute statements on a simulated cluster (one random
  coordinator per statement), print typed replies, write timing CSV;
* ``experiment``: run a built-in experiment suite and write its CSV set;
* ``check``: run the consistency scan over a cluster snapshot.

Reported query completion times assume an idealized network (zero node
service time); they are lower bounds, not wall-clock predictions.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import experiments
from .messages import ReplyStatus
from .node import SECOND_NS
from .query import ParseError, parse
from .recovery import ClusterSnapshot, global_scan
from .simnet import ConfigError, SimConfig, Simulation

SEED_ENV = "PRADA_SEED"


def _master_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get(SEED_ENV, "1"))


def _write_timings(path: Path, ops) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "op_id", "kind", "key", "dhr", "status", "error", "degraded",
            "coordinator", "submitted_ns", "completed_ns", "qct_ns",
            "latency_ns", "reissues", "recovered",
        ])
        for rec in ops:
            writer.writerow([
                rec.op_id, rec.kind, rec.key, int(rec.has_dhr),
                rec.status.value if rec.status else "incomplete", rec.error,
                int(rec.degraded), rec.coordinator, rec.submitted_ns,
                rec.completed_ns, rec.qct_ns, rec.latency_ns,
                rec.reissues, int(rec.recovered),
            ])


def cmd_run(args) -> int:
    try:
        config = SimConfig.from_json(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    statements: list[str] = []
    if args.execute:
        statements.extend(args.execute)
    if args.statements:
        text = Path(args.statements).read_text(encoding="utf-8")
        statements.extend(
            line.strip().rstrip(";") for line in text.splitlines()
            if line.strip() and not line.strip().startswith("--")
        )
    if not statements:
        print("no statements given (use --execute or --statements)", file=sys.stderr)
        return 2

    sim = Simulation(config, _master_seed(args))
    failed = False
    for text in statements:
        try:
            stmt = parse(text, config.registry)
        except ParseError as exc:
            print(f"parse error: {exc}")
            if not args.keep_going:
                return 1
            failed = True
            continue
        except Exception as exc:  # unknown type/property
            print(f"requirement error: {exc}")
            if not args.keep_going:
                return 1
            failed = True
            continue
        root = sim.submit(stmt, sim.now_ns + SECOND_NS // 1000)
        sim.run()
        rec = sim.records[root]
        status = rec.status.value if rec.status else "incomplete"
        extra = ""
        if rec.status is ReplyStatus.OK and rec.kind == "read":
            pass
        if rec.error:
            extra = f" ({rec.error})"
        print(f"{rec.op_id} {rec.kind} {rec.key}: {status}{extra} qct={rec.qct_ns / 1e6:.3f}ms")
        if rec.status is ReplyStatus.ERROR:
            failed = True
            if not args.keep_going:
                break
    if args.out:
        out = Path(args.out)
        _write_timings(out / "timings.csv", sim.ops())
        sim.snapshot().save(out / "cluster_snapshot.json")
        summary = {
            "statements": len(statements),
            "qct_model": "idealized network, zero service time (lower bound)",
            "messages": {
                "sent": sim.counters.sent,
                "delivered": sim.counters.delivered,
                "dropped_fault": sim.counters.dropped_fault,
                "dropped_crash": sim.counters.dropped_crash,
            },
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return 1 if (failed and not args.keep_going) else 0


def cmd_experiment(args) -> int:
    out = Path(args.out)
    seed = _master_seed(args)
    n_items = experiments.FULL_ITEMS if args.full_scale else experiments.DESK_ITEMS
    if args.name == "fig6":
        aggregates = experiments.run_fig6(
            out, master_seed=seed, repeats=args.repeats, n_items=n_items
        )
        for rate, (mean, half) in aggregates.items():
            print(f"rate {rate:>9.0f}/s: load balance {mean:.6f} +- {half:.6f}")
    elif args.name == "fig7":
        aggregates = experiments.run_fig7(
            out, master_seed=seed, repeats=args.repeats, n_items=n_items
        )
        for shift, agg in aggregates.items():
            print(
                f"shift {shift:.1f}: load balance {agg['mean_metric']:.6f} "
                f"(optimum {agg['mean_optimal']:.6f}, gap {agg['gap']:.6f})"
            )
    elif args.name == "hopcount":
        for row in experiments.run_hopcount(out):
            print(
                f"rtt {row['rtt_ms']:.0f}ms {row['mode']:>8}: "
                f"indirected read {row['dhr_read_ms']:.1f}ms, "
                f"plain read {row['std_read_ms']:.1f}ms"
            )
    elif args.name == "faults":
        results = experiments.run_faults(out, seeds=tuple(range(1, args.repeats + 1)))
        dirty = [r for r in results if not r.clean]
        print(f"{len(results)} scenarios, {len(dirty)} with violations")
        if dirty:
            for res in dirty:
                sc = res.scenario
                print(f"  {sc.op_kind} victim={sc.victim} {sc.trigger}: "
                      f"{len(res.violations)} violations")
            return 1
    else:
        print(f"unknown experiment {args.name!r}", file=sys.stderr)
        return 2
    return 0


def cmd_check(args) -> int:
    path = Path(args.snapshot)
    if path.is_dir():
        path = path / "cluster_snapshot.json"
    snapshot = ClusterSnapshot.load(path)
    violations = global_scan(snapshot)
    if not violations:
        print("clean: no dangling references, no unreferenced data")
        return 0
    for v in violations:
        print(f"{v.kind}: node={v.node} key={v.key} {v.detail}")
    print(f"{len(violations)} violations")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prada",
        description="Policy-aware key-value store on a simulated cluster",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute statements on a cluster")
    p_run.add_argument("--config", required=True, help="cluster config JSON")
    p_run.add_argument("--statements", help="file with one statement per line")
    p_run.add_argument("--execute", "-e", action="append", help="inline statement")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--keep-going", action="store_true",
                       help="continue after errors and exit 0")
    p_run.add_argument("--out", help="directory for timings CSV and snapshot")
    p_run.set_defaults(func=cmd_run)

    p_exp = sub.add_parser("experiment", help="run a built-in experiment")
    p_exp.add_argument("--name", required=True,
                       choices=["fig6", "fig7", "hopcount", "faults"])
    p_exp.add_argument("--out", required=True, help="output directory")
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--repeats", type=int, default=10)
    p_exp.add_argument("--full-scale", action="store_true",
                       help="paper-scale item counts instead of desk scale")
    p_exp.set_defaults(func=cmd_experiment)

    p_check = sub.add_parser("check", help="consistency-scan a snapshot")
    p_check.add_argument("--snapshot", required=True,
                         help="cluster_snapshot.json or its directory")
    p_check.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
