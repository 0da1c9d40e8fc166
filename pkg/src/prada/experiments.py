"""Built-in experiments: load balance vs throughput, load balance vs
placement fit, read hop costs, and the crash-recovery scenario suite.

Each experiment writes one CSV with per-run rows and one with aggregates
(mean and 99% confidence interval over the repeats, Student-t). Aggregates
are always recomputable from the per-run files.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from math import sqrt
from pathlib import Path

from scipy import stats

from .balance import GossipConfig
from .dhr import DhrRequest
from .loadsim import simulate_load_balance
from .messages import ReplyStatus
from .node import EngineParams, SECOND_NS
from .query import Delete, Insert, Select, Statement, Update
from .recovery import global_scan
from .ring import TokenRing
from .simnet import FaultRule, NodeSpec, SimConfig, Simulation, Topology
from .workload import (
    GRID_COMBOS,
    fit_demand_distribution,
    fit_eligible_sets,
    fit_node_counts,
    grid_eligible_sets,
    optimal_balance_oracle,
)

DEFAULT_FIG6_RATES = (100.0, 1_000.0, 10_000.0, 100_000.0)
DEFAULT_FIG7_SHIFTS = tuple(i / 10 for i in range(11))
DESK_ITEMS = 1_000_000
FULL_ITEMS = 10_000_000


def derive_seeds(master_seed: int, repeats: int) -> list[int]:
    return [master_seed * 1_000 + i for i in range(repeats)]


def aggregate(values: list[float], confidence: float = 0.99) -> tuple[float, float]:
    """Mean and half-width of the Student-t confidence interval."""
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    half = stats.t.ppf(0.5 + confidence / 2, n - 1) * sqrt(var / n)
    return mean, half


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# --------------------------------------------------------------------------
# load balance vs insert throughput
# --------------------------------------------------------------------------

def run_fig6(
    out_dir: str | Path,
    master_seed: int = 1,
    repeats: int = 10,
    n_items: int = DESK_ITEMS,
    rates: tuple[float, ...] = DEFAULT_FIG6_RATES,
) -> dict[float, tuple[float, float]]:
    """Ten nodes, the 2x2 requirement grid, a throughput sweep; returns
    {rate: (mean metric, ci99 half-width)}."""
    eligible = grid_eligible_sets()
    out = Path(out_dir)
    run_rows, agg_rows = [], []
    aggregates: dict[float, tuple[float, float]] = {}
    for rate in rates:
        metrics = []
        for seed in derive_seeds(master_seed, repeats):
            t0 = time.perf_counter()
            res = simulate_load_balance(
                10, eligible, None, n_items, rate, seed,
            )
            metrics.append(res.metric)
            run_rows.append([
                "fig6", rate, seed, n_items, f"{res.metric:.9f}",
                f"{res.direct_hits / n_items:.6f}", f"{time.perf_counter() - t0:.2f}",
            ])
        mean, half = aggregate(metrics)
        aggregates[rate] = (mean, half)
        agg_rows.append([rate, len(metrics), f"{mean:.9f}", f"{half:.9f}"])
    _write_csv(out / "fig6_runs.csv",
               ["experiment", "rate_per_s", "seed", "n_items", "metric",
                "direct_fraction", "runtime_s"], run_rows)
    _write_csv(out / "fig6_aggregate.csv",
               ["rate_per_s", "n_runs", "mean_metric", "ci99_half"], agg_rows)
    return aggregates


# --------------------------------------------------------------------------
# load balance vs requirement fit
# --------------------------------------------------------------------------

def run_fig7(
    out_dir: str | Path,
    master_seed: int = 1,
    repeats: int = 10,
    n_items: int = DESK_ITEMS,
    rate: float = 20_000.0,
    shifts: tuple[float, ...] = DEFAULT_FIG7_SHIFTS,
    total_nodes: int = 100,
) -> dict[float, dict]:
    """Hundred nodes over five regions, demand shifted off the node
    distribution; returns per-shift aggregates including the optimality gap."""
    eligible = fit_eligible_sets(total_nodes)
    node_counts = fit_node_counts(total_nodes)
    out = Path(out_dir)
    run_rows, agg_rows = [], []
    aggregates: dict[float, dict] = {}
    for shift in shifts:
        weights = list(fit_demand_distribution(shift))
        metrics, optima = [], []
        for seed in derive_seeds(master_seed, repeats):
            t0 = time.perf_counter()
            res = simulate_load_balance(
                total_nodes, eligible, weights, n_items, rate, seed,
            )
            opt = optimal_balance_oracle(node_counts, res.combo_counts)
            metrics.append(res.metric)
            optima.append(opt)
            run_rows.append([
                "fig7", f"{shift:.1f}", seed, n_items, f"{res.metric:.9f}",
                f"{opt:.9f}", f"{res.metric - opt:.9f}",
                f"{time.perf_counter() - t0:.2f}",
            ])
        mean, half = aggregate(metrics)
        mean_opt, _ = aggregate(optima)
        aggregates[shift] = {
            "mean_metric": mean,
            "ci99_half": half,
            "mean_optimal": mean_opt,
            "gap": mean - mean_opt,
        }
        agg_rows.append([
            f"{shift:.1f}", len(metrics), f"{mean:.9f}", f"{half:.9f}",
            f"{mean_opt:.9f}", f"{mean - mean_opt:.9f}",
        ])
    _write_csv(out / "fig7_runs.csv",
               ["experiment", "shift", "seed", "n_items", "metric",
                "optimal_metric", "gap", "runtime_s"], run_rows)
    _write_csv(out / "fig7_aggregate.csv",
               ["shift", "n_runs", "mean_metric", "ci99_half",
                "mean_optimal", "mean_gap"], agg_rows)
    return aggregates


# --------------------------------------------------------------------------
# read hop cost
# --------------------------------------------------------------------------

HOP_REGISTRY = [{"id": "location", "kind": "equality", "domain": ["A", "B"]}]


def hop_cluster_config(
    rtt_ms: float, mode: str = "prada", n_nodes: int = 10, r: int = 1
) -> SimConfig:
    """Ten uniform-latency nodes; only the last one satisfies location A, so
    an item demanding A has a known target."""
    nodes = [
        NodeSpec(f"n{i}", "local", {"location": ["A" if i == n_nodes - 1 else "B"]})
        for i in range(n_nodes)
    ]
    from .dhr import DhrRegistry

    return SimConfig(
        nodes=nodes,
        registry=DhrRegistry.from_json(HOP_REGISTRY),
        params=EngineParams(r=r, mode=mode, gossip=GossipConfig(enabled=True)),
        topology=Topology("uniform", rtt_ms=rtt_ms),
        collect_traces=True,
    )


def find_key(ring: TokenRing, r: int, predicate, prefix: str = "hk") -> str:
    """First key (by counter) whose responsible set satisfies the predicate."""
    for i in range(100_000):
        key = f"{prefix}{i}"
        if predicate(ring.responsible_nodes(key, r)):
            return key
    raise RuntimeError("no key satisfies the placement predicate")


def measure_read_qcts(rtt_ms: float, mode: str = "prada") -> dict[str, float]:
    """QCTs (ms) for one indirected and one plain read with the coordinator
    neither responsible nor target."""
    config = hop_cluster_config(rtt_ms, mode=mode)
    sim = Simulation(config, seed=7)
    target = "n9"
    key_dhr = find_key(sim.ring, 1, lambda resp: target not in resp and "n0" not in resp)
    key_std = find_key(sim.ring, 1, lambda resp: "n0" not in resp, prefix="sk")
    req = DhrRequest({"location": frozenset({"A"})})
    columns = {f"c{i}": b"x" * 20 for i in range(10)}
    sim.submit(Insert(key_dhr, columns, req), 0, coordinator="n1")
    sim.submit(Insert(key_std, columns, DhrRequest()), SECOND_NS, coordinator="n1")
    sim.run()
    start = sim.now_ns + SECOND_NS
    dhr_read = sim.submit(Select(key_dhr), start, coordinator="n0")
    std_read = sim.submit(Select(key_std), start + SECOND_NS, coordinator="n0")
    sim.run()
    recs = {r.op_id: r for r in sim.ops()}
    return {
        "dhr_read_ms": recs[dhr_read].qct_ns / 1e6,
        "std_read_ms": recs[std_read].qct_ns / 1e6,
    }


def run_hopcount(out_dir: str | Path, rtts=(100.0, 150.0, 200.0, 250.0)) -> list[dict]:
    rows, results = [], []
    for rtt in rtts:
        for mode in ("prada", "baseline"):
            q = measure_read_qcts(rtt, mode=mode)
            results.append({"rtt_ms": rtt, "mode": mode, **q})
            rows.append([rtt, mode, f"{q['dhr_read_ms']:.3f}", f"{q['std_read_ms']:.3f}"])
    _write_csv(Path(out_dir) / "hopcount_runs.csv",
               ["rtt_ms", "mode", "dhr_read_qct_ms", "std_read_qct_ms"], rows)
    return results


# --------------------------------------------------------------------------
# crash-recovery scenario suite
# --------------------------------------------------------------------------

FAULT_REGISTRY = [{"id": "location", "kind": "equality", "domain": ["A", "B"]}]


def fault_cluster_config(r: int = 1, faults: list[FaultRule] | None = None) -> SimConfig:
    """Five nodes: n0 capability-free (pure coordinator), n1/n2 location B,
    n3/n4 location A. Short timeouts keep recovery rounds quick."""
    from .dhr import DhrRegistry

    nodes = [
        NodeSpec("n0", "local", {}),
        NodeSpec("n1", "local", {"location": ["B"]}),
        NodeSpec("n2", "local", {"location": ["B"]}),
        NodeSpec("n3", "local", {"location": ["A"]}),
        NodeSpec("n4", "local", {"location": ["A"]}),
    ]
    return SimConfig(
        nodes=nodes,
        registry=DhrRegistry.from_json(FAULT_REGISTRY),
        params=EngineParams(
            r=r, mode="prada",
            op_timeout_ns=SECOND_NS, max_retries=2,
        ),
        topology=Topology("uniform", rtt_ms=100.0),
        collect_traces=True,
        fault_rules=faults or [],
    )


@dataclass
class FaultScenario:
    op_kind: str          # 'create' | 'read' | 'update' | 'delete'
    victim: str
    role: str             # 'coordinator' | 'responsible' | 'target' | 'new_target'
    trigger: str          # human-readable boundary
    rules: list[FaultRule]


@dataclass
class ScenarioResult:
    scenario: FaultScenario
    status: str
    violations: list
    recovered: bool
    holders: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations


def _scenario_statements(key: str) -> dict[str, Statement]:
    req_a = DhrRequest({"location": frozenset({"A"})})
    req_b = DhrRequest({"location": frozenset({"B"})})
    columns = {f"c{i}": b"v" * 20 for i in range(10)}
    return {
        "prep": Insert(key, columns, req_a),
        "create": Insert(key, columns, req_a),
        "read": Select(key),
        "update": Update(key, {"c0": b"updated!"}, req_b),
        "delete": Delete(key),
    }


def _run_scenario_ops(sim: Simulation, op_kind: str, key: str, coordinator: str) -> str:
    stmts = _scenario_statements(key)
    if op_kind != "create":
        sim.submit(stmts["prep"], 0, coordinator="n1")
        sim.run()
    root = sim.submit(stmts[op_kind], sim.now_ns + SECOND_NS, coordinator=coordinator)
    sim.run(drain_limit_ns=900 * SECOND_NS)
    return root


def enumerate_fault_scenarios(r: int = 1, coordinator: str = "n0") -> list[FaultScenario]:
    """Rehearse each operation fault-free, then produce one crash scenario
    per involved node and protocol-step boundary (before its first receipt,
    and after each message it sends for the operation)."""
    scenarios: list[FaultScenario] = []
    base = fault_cluster_config(r)
    key = find_key(
        TokenRing.equal_spaced([n.id for n in base.nodes]), r,
        lambda resp: coordinator not in resp,
    )
    for op_kind in ("create", "read", "update", "delete"):
        rehearsal = Simulation(fault_cluster_config(r), seed=11)
        root = _run_scenario_ops(rehearsal, op_kind, key, coordinator)
        trace = rehearsal.traces.get(root, [])
        responsible = rehearsal.ring.responsible_nodes(key, r)
        old_targets = [dst for kind, _, dst in trace if kind == "TargetWrite"]
        new_targets = sorted({dst for kind, _, dst in trace if kind == "MoveData"})
        sends_by = {}
        involved = []
        for kind, src, dst in trace:
            if src != "client":
                sends_by[src] = sends_by.get(src, 0) + 1
                if src not in involved:
                    involved.append(src)
            if dst != "client" and dst not in involved:
                involved.append(dst)

        def role_of(node: str) -> str:
            if node == coordinator:
                return "coordinator"
            if node in responsible:
                return "responsible"
            if node in new_targets:
                return "new_target"
            return "target"

        for node in involved:
            scenarios.append(FaultScenario(
                op_kind, node, role_of(node), "before first receipt",
                [FaultRule(trigger="deliver", action="crash_receiver",
                           dst=node, op=root, nth=1)],
            ))
            for k in range(1, sends_by.get(node, 0) + 1):
                scenarios.append(FaultScenario(
                    op_kind, node, role_of(node), f"after send #{k}",
                    [FaultRule(trigger="send", action="crash_sender",
                               src=node, op=root, nth=k)],
                ))
    return scenarios


def run_fault_scenario(scenario: FaultScenario, seed: int, r: int = 1) -> ScenarioResult:
    from dataclasses import replace

    rules = [replace(rule, hits=0, fired=False) for rule in scenario.rules]
    config = fault_cluster_config(r, faults=rules)
    sim = Simulation(config, seed)
    key = find_key(sim.ring, r, lambda resp: "n0" not in resp)
    root = _run_scenario_ops(sim, scenario.op_kind, key, "n0")
    rec = sim.records[root]
    snapshot = sim.snapshot()
    violations = global_scan(snapshot)
    holders = [
        nid for nid, snap in sorted(snapshot.nodes.items())
        if not snap["crashed"]
        and (key in snap["target_store"] or key in snap["data_store"])
    ]
    status = rec.status.value if rec.status else "incomplete"
    return ScenarioResult(scenario, status, violations, rec.recovered, holders)


def run_faults(out_dir: str | Path, seeds=(1, 2, 3), r: int = 1) -> list[ScenarioResult]:
    scenarios = enumerate_fault_scenarios(r)
    rows, results = [], []
    for seed in seeds:
        for i, scenario in enumerate(scenarios):
            res = run_fault_scenario(scenario, seed, r)
            results.append(res)
            rows.append([
                i, seed, scenario.op_kind, scenario.victim, scenario.role,
                scenario.trigger, res.status, len(res.violations),
                res.recovered, "+".join(res.holders),
            ])
    _write_csv(Path(out_dir) / "faults_runs.csv",
               ["scenario", "seed", "op", "victim", "role", "trigger",
                "status", "violations", "recovered", "holders"], rows)
    return results
