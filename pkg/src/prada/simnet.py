"""Deterministic discrete-event cluster simulator.

Virtual nanosecond clock, seeded randomness, a region RTT matrix, message
delivery, timers, and fault injection (node crashes, message drops and
delays). Events are processed in strict (fire_time, sequence) order, so a
given (config, workload, seed) triple always produces the identical trace.

The simulator also plays the client: it submits statements through a
randomly chosen coordinator per statement, measures query completion times
coordinator-side, and runs the client half of failure recovery (reissue
through a different coordinator, then clean up abandoned attempts).
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

from . import coordinator as coord
from . import node as node_mod
from . import recovery
from .balance import GossipConfig, load_balance_metric
from .dhr import CapabilityStore, DhrRegistry, NodeCapabilities, eligible_nodes
from .messages import (
    BACKGROUND_KINDS,
    BroadcastDelete,
    ClientReply,
    ClientRequest,
    Message,
    ReplyStatus,
)
from .node import EngineParams, NodeState, SECOND_NS
from .query import Delete, Insert, Select, Statement, Update, parse
from .recovery import ClusterSnapshot, RepairAction, RepairKind
from .ring import TokenRing

CLIENT_ID = "client"


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# topology
# --------------------------------------------------------------------------

AZURE10_REGIONS = (
    "asia-east", "asia-southeast", "canada-east", "eu-north", "eu-west",
    "japan-east", "us-central", "us-east", "us-southcentral", "us-west",
)

# Synthetic reconstruction of a 10-region public-cloud RTT matrix (ms).
# Only the extremes are anchored to measurements: eu-north <-> eu-west at
# 24.3 ms and asia-east <-> eu-west at 286.2 ms; the rest are plausible
# great-circle figures in between.
_AZURE10_RTT_MS = {
    ("asia-east", "asia-southeast"): 46.0,
    ("asia-east", "canada-east"): 212.0,
    ("asia-east", "eu-north"): 272.0,
    ("asia-east", "eu-west"): 286.2,
    ("asia-east", "japan-east"): 52.0,
    ("asia-east", "us-central"): 172.0,
    ("asia-east", "us-east"): 208.0,
    ("asia-east", "us-southcentral"): 186.0,
    ("asia-east", "us-west"): 132.0,
    ("asia-southeast", "canada-east"): 236.0,
    ("asia-southeast", "eu-north"): 252.0,
    ("asia-southeast", "eu-west"): 264.0,
    ("asia-southeast", "japan-east"): 70.0,
    ("asia-southeast", "us-central"): 196.0,
    ("asia-southeast", "us-east"): 228.0,
    ("asia-southeast", "us-southcentral"): 206.0,
    ("asia-southeast", "us-west"): 170.0,
    ("canada-east", "eu-north"): 96.0,
    ("canada-east", "eu-west"): 88.0,
    ("canada-east", "japan-east"): 158.0,
    ("canada-east", "us-central"): 30.0,
    ("canada-east", "us-east"): 26.0,
    ("canada-east", "us-southcentral"): 44.0,
    ("canada-east", "us-west"): 66.0,
    ("eu-north", "eu-west"): 24.3,
    ("eu-north", "japan-east"): 242.0,
    ("eu-north", "us-central"): 114.0,
    ("eu-north", "us-east"): 100.0,
    ("eu-north", "us-southcentral"): 124.0,
    ("eu-north", "us-west"): 146.0,
    ("eu-west", "japan-east"): 226.0,
    ("eu-west", "us-central"): 102.0,
    ("eu-west", "us-east"): 86.0,
    ("eu-west", "us-southcentral"): 110.0,
    ("eu-west", "us-west"): 134.0,
    ("japan-east", "us-central"): 120.0,
    ("japan-east", "us-east"): 156.0,
    ("japan-east", "us-southcentral"): 130.0,
    ("japan-east", "us-west"): 100.0,
    ("us-central", "us-east"): 27.0,
    ("us-central", "us-southcentral"): 26.0,
    ("us-central", "us-west"): 40.0,
    ("us-east", "us-southcentral"): 32.0,
    ("us-east", "us-west"): 60.0,
    ("us-southcentral", "us-west"): 30.0,
}


def azure10_rtt_ms(a: str, b: str) -> float:
    if a == b:
        return 0.0
    return _AZURE10_RTT_MS[(a, b) if a < b else (b, a)]


@dataclass
class Topology:
    """One-way delays between nodes, derived from region round-trip times
    (one-way = RTT/2, symmetric, zero within a node)."""

    kind: str  # 'uniform' | 'azure10' | 'matrix'
    rtt_ms: float = 100.0
    regions: tuple[str, ...] = ()
    matrix_ms: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        for (a, b), v in self.matrix_ms.items():
            if v < 0:
                raise ConfigError(f"negative RTT for {a}->{b}")
            back = self.matrix_ms.get((b, a))
            if back is not None and back != v:
                raise ConfigError(f"asymmetric RTT for {a}<->{b}")

    def rtt_between(self, region_a: str, region_b: str) -> float:
        if self.kind == "uniform":
            return self.rtt_ms
        if self.kind == "azure10":
            return azure10_rtt_ms(region_a, region_b)
        if region_a == region_b:
            return 0.0
        key = (region_a, region_b) if (region_a, region_b) in self.matrix_ms else (region_b, region_a)
        try:
            return self.matrix_ms[key]
        except KeyError:
            raise ConfigError(f"no RTT configured for {region_a}<->{region_b}") from None

    @classmethod
    def from_json(cls, doc: dict) -> "Topology":
        preset = doc.get("preset")
        if preset == "uniform":
            return cls("uniform", rtt_ms=float(doc.get("rtt_ms", 100.0)))
        if preset == "azure10":
            return cls("azure10", regions=AZURE10_REGIONS)
        if "rtt_ms_matrix" in doc:
            regions = tuple(doc["regions"])
            mat = doc["rtt_ms_matrix"]
            matrix = {
                (regions[i], regions[j]): float(mat[i][j])
                for i in range(len(regions))
                for j in range(len(regions))
                if i != j
            }
            return cls("matrix", regions=regions, matrix_ms=matrix)
        raise ConfigError(f"unrecognized topology: {doc!r}")


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class NodeSpec:
    id: str
    region: str = "local"
    capabilities: dict = field(default_factory=dict)


@dataclass
class FaultRule:
    """One injected fault. ``send``/``deliver`` rules fire on the nth
    message matching all given fields; ``time`` rules fire on the clock."""

    trigger: str  # 'send' | 'deliver' | 'time'
    action: str   # 'drop' | 'delay' | 'crash_sender' | 'crash_receiver' | 'crash'
    kind: str | None = None
    src: str | None = None
    dst: str | None = None
    op: str | None = None  # prefix match on the message's op id
    nth: int = 1
    node: str | None = None
    at_ns: int = 0
    delay_ns: int = 0
    hits: int = 0
    fired: bool = False

    def matches(self, kind: str, src: str, dst: str, op_id: str | None) -> bool:
        if self.fired:
            return False
        if self.kind is not None and self.kind != kind:
            return False
        if self.src is not None and self.src != src:
            return False
        if self.dst is not None and self.dst != dst:
            return False
        if self.op is not None and not (op_id or "").startswith(self.op):
            return False
        self.hits += 1
        if self.hits < self.nth:
            return False
        self.fired = True
        return True

    @classmethod
    def from_json(cls, doc: dict) -> "FaultRule":
        match = doc.get("match", {})
        return cls(
            trigger=doc["trigger"],
            action=doc["action"],
            kind=match.get("kind"),
            src=match.get("src"),
            dst=match.get("dst"),
            op=match.get("op"),
            nth=int(match.get("nth", 1)),
            node=doc.get("node"),
            at_ns=int(doc.get("at_s", 0) * SECOND_NS),
            delay_ns=int(doc.get("delay_s", 0) * SECOND_NS),
        )


@dataclass
class SimConfig:
    nodes: list[NodeSpec]
    registry: DhrRegistry
    params: EngineParams = field(default_factory=EngineParams)
    topology: Topology = field(default_factory=lambda: Topology("uniform", rtt_ms=100.0))
    client_timeout_ns: int = 0  # 0: derived from the retry schedule
    capability_mode: str = "preconfigured"  # or 'broadcast'
    vnodes: int = 1
    token_layout: str = "equal"  # or 'random'
    metrics_interval_ns: int = 0  # 0: no periodic load samples
    collect_traces: bool = False
    fault_rules: list[FaultRule] = field(default_factory=list)
    max_client_reissues: int = 3

    def __post_init__(self):
        if not self.nodes:
            raise ConfigError("cluster needs at least one node")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate node ids")
        if not 1 <= self.params.r <= len(self.nodes):
            raise ConfigError(f"replication factor {self.params.r} out of range")
        if self.params.mode not in ("prada", "baseline"):
            raise ConfigError(f"unknown mode {self.params.mode!r}")
        if self.client_timeout_ns <= 0:
            horizon = self.params.op_timeout_ns * (2 ** (self.params.max_retries + 2))
            self.client_timeout_ns = horizon

    @classmethod
    def from_json(cls, doc: dict | str | Path) -> "SimConfig":
        if isinstance(doc, (str, Path)):
            doc = json.loads(Path(doc).read_text(encoding="utf-8"))
        try:
            nodes = [
                NodeSpec(n["id"], n.get("region", "local"), n.get("capabilities", {}))
                for n in doc["nodes"]
            ]
            registry = DhrRegistry.from_json(doc.get("registry", []))
            gossip_doc = doc.get("gossip", {})
            gossip = GossipConfig(
                sync_interval_ns=int(gossip_doc.get("sync_interval_s", 1.0) * SECOND_NS),
                load_refresh_ns=int(gossip_doc.get("load_refresh_s", 60.0) * SECOND_NS),
                enabled=bool(gossip_doc.get("enabled", True)),
            )
            params = EngineParams(
                r=int(doc.get("replication", 1)),
                mode=doc.get("mode", "prada"),
                op_timeout_ns=int(doc.get("op_timeout_s", 1.0) * SECOND_NS),
                max_retries=int(doc.get("max_retries", 3)),
                expiry_sweep_ns=int(doc.get("expiry_sweep_s", 1.0) * SECOND_NS),
                gossip=gossip,
            )
            return cls(
                nodes=nodes,
                registry=registry,
                params=params,
                topology=Topology.from_json(doc.get("topology", {"preset": "uniform"})),
                client_timeout_ns=int(doc.get("client_timeout_s", 0) * SECOND_NS),
                capability_mode=doc.get("capability_mode", "preconfigured"),
                vnodes=int(doc.get("vnodes", 1)),
                token_layout=doc.get("token_layout", "equal"),
                metrics_interval_ns=int(doc.get("metrics_interval_s", 0) * SECOND_NS),
                collect_traces=bool(doc.get("collect_traces", False)),
                fault_rules=[FaultRule.from_json(f) for f in doc.get("faults", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed config: {exc}") from exc


# --------------------------------------------------------------------------
# workload and results
# --------------------------------------------------------------------------

@dataclass
class Submission:
    at_ns: int
    stmt: Statement | str
    coordinator: str | None = None


@dataclass
class OpRecord:
    op_id: str
    kind: str
    key: str
    has_dhr: bool
    stmt: Statement
    submitted_ns: int
    coordinator: str = ""
    last_submit_ns: int = 0
    completed_ns: int = -1
    status: ReplyStatus | None = None
    error: str = ""
    degraded: bool = False
    reissues: int = 0
    recovered: bool = False
    wire_ops: list[str] = field(default_factory=list)
    cleanup_after: list[str] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return self.completed_ns >= 0

    @property
    def qct_ns(self) -> int:
        return self.completed_ns - self.last_submit_ns

    @property
    def latency_ns(self) -> int:
        return self.completed_ns - self.submitted_ns


@dataclass
class Counters:
    sent: int = 0
    delivered: int = 0
    dropped_fault: int = 0
    dropped_crash: int = 0
    undelivered: int = 0  # still in the heap when the run stopped
    bytes_sent: int = 0

    def conserved(self) -> bool:
        return self.sent == (
            self.delivered + self.dropped_fault + self.dropped_crash + self.undelivered
        )


@dataclass
class _Envelope:
    src: str
    dst: str
    msg: Message
    send_ns: int
    deliver_ns: int


class _Ctx:
    """What handlers see of the simulator."""

    __slots__ = ("now_ns", "rng", "params", "registry", "_sim")

    def __init__(self, sim: "Simulation"):
        self.now_ns = 0
        self.rng = sim.rng_sim
        self.params = sim.config.params
        self.registry = sim.config.registry
        self._sim = sim

    def set_timer(self, node_id: str, at_ns: int, kind: str, payload) -> None:
        self._sim._schedule(at_ns, "timer", (node_id, kind, payload))


class Simulation:
    """A cluster plus its event loop. Use :func:`run` for the common case."""

    def __init__(self, config: SimConfig, seed: int):
        self.config = config
        self.seed = seed
        self.rng_sim = Random(f"{seed}/sim")
        self.rng_client = Random(f"{seed}/client")
        self.now_ns = 0
        self._heap: list = []
        self._seq = 0
        self._in_flight = 0
        self.counters = Counters()
        self.records: dict[str, OpRecord] = {}
        self._order: list[str] = []
        self._wire_to_root: dict[str, str] = {}
        self._completed = 0
        self._total = 0
        self._next_root = 0
        self.traces: dict[str, list[tuple[str, str, str]]] = {}
        self.metric_series: list[tuple[float, float, tuple[int, ...]]] = []
        self.client_repairs: list[RepairAction] = []
        self.drain_exhausted = False

        node_ids = [n.id for n in config.nodes]
        if config.token_layout == "equal":
            self.ring = TokenRing.equal_spaced(node_ids, config.vnodes)
        else:
            self.ring = TokenRing.random_tokens(node_ids, Random(f"{seed}/ring"), config.vnodes)

        registry = config.registry
        validated = {
            spec.id: NodeCapabilities(spec.id, spec.capabilities).validate(registry)
            for spec in config.nodes
        }
        self.regions = {spec.id: spec.region for spec in config.nodes}
        self.nodes: dict[str, NodeState] = {
            spec.id: NodeState(spec.id, self.ring, validated[spec.id], config.params)
            for spec in config.nodes
        }
        if config.capability_mode == "preconfigured":
            store = CapabilityStore()
            for nid in node_ids:
                store.apply(validated[nid], 1)
            for state in self.nodes.values():
                state.capability_replica = store.copy()
        self._client_capabilities = validated  # clients know the capability registry

        self._ctx = _Ctx(self)
        params = config.params
        for nid in node_ids:
            if params.gossip.enabled:
                g0 = self.rng_sim.randrange(params.gossip.sync_interval_ns)
                self._schedule(g0, "timer", (nid, "gossip", None))
                r0 = self.rng_sim.randrange(params.gossip.load_refresh_ns)
                self._schedule(r0, "timer", (nid, "refresh", None))
            s0 = self.rng_sim.randrange(params.expiry_sweep_ns)
            self._schedule(s0, "timer", (nid, "sweep", None))
        if config.capability_mode == "broadcast":
            for nid in node_ids:
                self._schedule(0, "timer", (nid, "bootstrap", None))
        if config.metrics_interval_ns:
            self._schedule(config.metrics_interval_ns, "timer", (node_ids[0], "metrics", None))
        for rule in config.fault_rules:
            if rule.trigger == "time":
                self._schedule(rule.at_ns, "fault", rule)

    # --- scheduling -------------------------------------------------------

    def _schedule(self, at_ns: int, kind: str, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (at_ns, self._seq, kind, payload))

    def delay_ns(self, src: str, dst: str) -> int:
        if src == dst or CLIENT_ID in (src, dst):
            return 0
        rtt = self.config.topology.rtt_between(self.regions[src], self.regions[dst])
        return int(rtt * 1e6 / 2)  # one-way = RTT/2, in ns

    def _send(self, src: str, dst: str, msg: Message, now: int) -> None:
        self.counters.sent += 1
        from .messages import wire_size

        self.counters.bytes_sent += wire_size(msg)
        op_id = getattr(msg, "op_id", None)
        if self.config.collect_traces:
            root = self._wire_to_root.get((op_id or "").split("/")[0])
            if root is not None:
                self.traces.setdefault(root, []).append((type(msg).__name__, src, dst))
        extra = 0
        for rule in self.config.fault_rules:
            if rule.trigger != "send":
                continue
            if rule.matches(type(msg).__name__, src, dst, op_id):
                if rule.action == "drop":
                    self.counters.dropped_fault += 1
                    return
                if rule.action == "delay":
                    extra = rule.delay_ns
                elif rule.action == "crash_sender":
                    self._deliver_later(src, dst, msg, now, extra)
                    self.crash(src)
                    return
        self._deliver_later(src, dst, msg, now, extra)

    def _deliver_later(self, src: str, dst: str, msg: Message, now: int, extra: int) -> None:
        deliver_ns = now + self.delay_ns(src, dst) + extra
        if not isinstance(msg, BACKGROUND_KINDS):
            self._in_flight += 1
        self._schedule(deliver_ns, "deliver", _Envelope(src, dst, msg, now, deliver_ns))

    def _send_batch(self, src: str, outbound, now: int) -> None:
        for dst, msg in outbound:
            if src != CLIENT_ID and self.nodes[src].crashed:
                break  # the sender died mid-batch
            self._send(src, dst, msg, now)

    def crash(self, node_id: str) -> None:
        self.nodes[node_id].crashed = True

    # --- client harness ----------------------------------------------------

    def submit(self, stmt: Statement | str, at_ns: int, coordinator: str | None = None) -> str:
        """Schedule a statement; returns the operation id used in results."""
        if isinstance(stmt, str):
            stmt = parse(stmt, self.config.registry)
        root = f"q{self._next_root}"
        self._next_root += 1
        kind = {Insert: "create", Select: "read", Update: "update", Delete: "delete"}[type(stmt)]
        has_dhr = bool(getattr(stmt, "req", None))
        self.records[root] = OpRecord(root, kind, stmt.key, has_dhr, stmt, at_ns)
        self._order.append(root)
        self._total += 1
        self._schedule(at_ns, "client_submit", (root, coordinator))
        return root

    def _client_submit(self, root: str, coordinator: str | None) -> None:
        rec = self.records[root]
        wire = root if not rec.wire_ops else f"{root}r{len(rec.wire_ops)}"
        rec.wire_ops.append(wire)
        self._wire_to_root[wire] = root
        if coordinator is None:
            choices = sorted(self.nodes)
            if rec.coordinator and len(choices) > 1:
                choices = [n for n in choices if n != rec.coordinator]
            coordinator = choices[self.rng_client.randrange(len(choices))]
        rec.coordinator = coordinator
        rec.last_submit_ns = self.now_ns
        self._send(CLIENT_ID, coordinator, ClientRequest(wire, rec.stmt), self.now_ns)
        self._schedule(self.now_ns + self.config.client_timeout_ns, "client_deadline", (root, wire))

    def _client_reply(self, msg: ClientReply) -> None:
        root = self._wire_to_root.get(msg.op_id)
        if root is None:
            return
        rec = self.records[root]
        if rec.completed:
            return
        rec.completed_ns = self.now_ns
        rec.status = msg.status
        rec.error = msg.error.value if msg.error else ""
        rec.degraded = msg.degraded
        self._completed += 1
        if rec.cleanup_after and msg.status is ReplyStatus.OK:
            eligible = self._eligible_for(rec.stmt)
            for old_wire in rec.cleanup_after:
                self.client_repairs.append(
                    RepairAction(RepairKind.CLIENT_BROADCAST_CLEANUP, rec.key, tuple(eligible))
                )
                self._send_batch(
                    CLIENT_ID,
                    recovery.client_cleanup_messages(rec.key, old_wire, eligible),
                    self.now_ns,
                )
            rec.cleanup_after = []

    def _eligible_for(self, stmt: Statement) -> list[str]:
        req = getattr(stmt, "req", None)
        if not req:
            return []
        store = CapabilityStore()
        for nid, caps in self._client_capabilities.items():
            store.apply(caps, 1)
        return eligible_nodes(store, req, self.config.registry)

    def _client_deadline(self, root: str, wire: str) -> None:
        rec = self.records[root]
        if rec.completed or rec.wire_ops[-1] != wire:
            return  # answered, or a newer reissue owns the deadline
        if rec.reissues >= self.config.max_client_reissues:
            rec.completed_ns = self.now_ns
            rec.status = ReplyStatus.ERROR
            rec.error = "timeout"
            self._completed += 1
            return
        rec.reissues += 1
        rec.recovered = True
        if rec.kind == "delete":
            # reference state is unknowable without the coordinator: wipe the key
            self.client_repairs.append(
                RepairAction(RepairKind.BROADCAST_DELETE, rec.key, tuple(sorted(self.nodes)))
            )
            self._send_batch(
                CLIENT_ID,
                recovery.client_broadcast_delete_messages(rec.key, wire, sorted(self.nodes)),
                self.now_ns,
            )
            rec.completed_ns = self.now_ns
            rec.status = ReplyStatus.OK
            self._completed += 1
            return
        if rec.kind in ("create", "update") and rec.has_dhr:
            rec.cleanup_after.append(wire)
        kind = {
            "create": RepairKind.REISSUE_CREATE,
            "read": RepairKind.REISSUE_READ,
            "update": RepairKind.REISSUE_UPDATE,
        }[rec.kind]
        self.client_repairs.append(RepairAction(kind, rec.key))
        self._client_submit(root, None)

    # --- event processing ----------------------------------------------------

    def _dispatch_to_node(self, state: NodeState, envelope: _Envelope) -> None:
        msg = envelope.msg
        handler = coord.COORDINATOR_HANDLERS.get(type(msg))
        if handler is not None:
            out = handler(state, msg, envelope.src, self._ctx)
        elif isinstance(msg, ClientReply):
            out = recovery.handle_client_reply_at_node(state, msg, envelope.src, self._ctx)
        else:
            out = node_mod.local_apply(state, msg, envelope.src, self._ctx)
        self._send_batch(state.node_id, out, self.now_ns)

    def _fire_timer(self, node_id: str, kind: str, payload) -> None:
        state = self.nodes[node_id]
        params = self.config.params
        if kind == "metrics":
            loads = tuple(self.nodes[n].stored_payload_bytes() for n in sorted(self.nodes))
            self.metric_series.append(
                (self.now_ns / SECOND_NS, load_balance_metric(loads), loads)
            )
            self._schedule(self.now_ns + self.config.metrics_interval_ns, "timer", (node_id, kind, None))
            return
        if state.crashed:
            return
        if kind == "gossip":
            self._send_batch(node_id, node_mod.gossip_round(state, self._ctx), self.now_ns)
            self._schedule(self.now_ns + params.gossip.sync_interval_ns, "timer", (node_id, kind, None))
        elif kind == "refresh":
            node_mod.load_refresh(state, self._ctx)
            self._schedule(self.now_ns + params.gossip.load_refresh_ns, "timer", (node_id, kind, None))
        elif kind == "sweep":
            self._send_batch(node_id, recovery.expire_items(state, self._ctx), self.now_ns)
            self._schedule(self.now_ns + params.expiry_sweep_ns, "timer", (node_id, kind, None))
        elif kind == "bootstrap":
            out = node_mod.capability_bootstrap(state, state.caps, self._ctx)
            self._send_batch(node_id, out, self.now_ns)
        elif kind == coord.OP_DEADLINE:
            self._send_batch(node_id, coord.handle_op_deadline(state, payload, self._ctx), self.now_ns)
        else:
            raise ValueError(f"unknown timer kind {kind!r}")

    def _quiescent(self) -> bool:
        if self._completed < self._total or self._in_flight > 0:
            return False
        for state in self.nodes.values():
            if not state.crashed and (state.pending or state.expiring):
                return False
        return True

    def run(self, until_ns: int | None = None, drain_limit_ns: int = 600 * SECOND_NS) -> "Simulation":
        """Process events until the workload has completed and the cluster is
        quiescent (but at least to ``until_ns``). ``drain_limit_ns`` bounds
        how long after ``until_ns`` recovery chatter may keep running."""
        if until_ns is None:
            until_ns = 0
        hard_stop = until_ns + drain_limit_ns
        while self._heap:
            fire_ns, _, kind, payload = heapq.heappop(self._heap)
            if fire_ns > hard_stop:
                self.drain_exhausted = not self._quiescent()
                break
            self.now_ns = max(self.now_ns, fire_ns)
            self._ctx.now_ns = self.now_ns
            if kind == "deliver":
                env: _Envelope = payload
                if not isinstance(env.msg, BACKGROUND_KINDS):
                    self._in_flight -= 1
                dropped = False
                for rule in self.config.fault_rules:
                    if rule.trigger != "deliver":
                        continue
                    if rule.matches(type(env.msg).__name__, env.src, env.dst,
                                    getattr(env.msg, "op_id", None)):
                        if rule.action == "drop":
                            self.counters.dropped_fault += 1
                            dropped = True
                        elif rule.action == "crash_receiver":
                            if env.dst != CLIENT_ID:
                                self.crash(env.dst)
                if dropped:
                    continue
                if env.dst == CLIENT_ID:
                    self.counters.delivered += 1
                    if isinstance(env.msg, ClientReply):
                        self._client_reply(env.msg)
                    continue
                state = self.nodes[env.dst]
                if state.crashed:
                    self.counters.dropped_crash += 1
                    continue
                self.counters.delivered += 1
                self._dispatch_to_node(state, env)
            elif kind == "timer":
                node_id, tkind, tpayload = payload
                self._fire_timer(node_id, tkind, tpayload)
            elif kind == "client_submit":
                root, coordinator = payload
                self._client_submit(root, coordinator)
            elif kind == "client_deadline":
                root, wire = payload
                self._client_deadline(root, wire)
            elif kind == "fault":
                rule: FaultRule = payload
                if rule.action == "crash" and rule.node:
                    self.crash(rule.node)
            if self.now_ns >= until_ns and self._quiescent():
                break
        self.counters.undelivered = sum(
            1 for _, _, kind, _ in self._heap if kind == "deliver"
        )
        return self

    # --- results ---------------------------------------------------------------

    def ops(self) -> list[OpRecord]:
        return [self.records[r] for r in self._order]

    def snapshot(self) -> ClusterSnapshot:
        return ClusterSnapshot(
            self.config.params.r,
            self.ring,
            {nid: state.snapshot() for nid, state in self.nodes.items()},
        )

    def stored_payload_bytes(self) -> int:
        return sum(state.stored_payload_bytes() for state in self.nodes.values())

    def final_metric(self) -> float:
        return load_balance_metric(
            [self.nodes[n].stored_payload_bytes() for n in sorted(self.nodes)]
        )


def run(
    config: SimConfig,
    workload: list[Submission],
    seed: int,
    until_ns: int | None = None,
    drain_limit_ns: int = 600 * SECOND_NS,
) -> Simulation:
    """Execute a workload on a fresh cluster; returns the finished simulation
    with per-op records, counters, traces, and snapshot access."""
    sim = Simulation(config, seed)
    horizon = 0
    for item in workload:
        sim.submit(item.stmt, item.at_ns, item.coordinator)
        horizon = max(horizon, item.at_ns)
    target = horizon if until_ns is None else max(horizon, until_ns)
    return sim.run(until_ns=target, drain_limit_ns=drain_limit_ns)
