"""Failure repair: consistency scanning, requirement-triggered expiry, and
the building blocks for client-driven recovery.

The two inconsistencies the indirection layer can suffer are dangling
references (a relay entry pointing at a node that lacks the item) and
unreferenced data (a target copy no live responsible node points to).
``global_scan`` detects both over a quiescent cluster's store dumps; the
protocol never checks for them inline, repairs run reactively through the
ordinary operation flows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .messages import BroadcastDelete, CleanupOp, ClientReply, ClientRequest
from .node import NodeState, Outbound
from .query import Delete
from .ring import TokenRing

EXPIRY_SWEEP = "expiry_sweep"


class RepairKind(Enum):
    REISSUE_CREATE = "reissue_create"
    ROLLBACK_CREATE = "rollback_create"
    CLIENT_BROADCAST_CLEANUP = "client_broadcast_cleanup"
    REISSUE_READ = "reissue_read"
    REISSUE_UPDATE = "reissue_update"
    BROADCAST_DELETE = "broadcast_delete"
    EXPIRY_DELETE = "expiry_delete"


@dataclass(frozen=True)
class RepairAction:
    kind: RepairKind
    key: str
    scope: tuple[str, ...] = ()


@dataclass(frozen=True)
class Violation:
    kind: str  # 'dangling' | 'unreferenced' | 'data_and_relay'
    node: str
    key: str
    detail: str = ""


@dataclass
class ClusterSnapshot:
    """Store dumps of the whole cluster plus the placement metadata needed
    to judge them."""

    r: int
    ring: TokenRing
    nodes: dict[str, dict]  # node id -> NodeState.snapshot()

    def live_nodes(self) -> list[str]:
        return [n for n, snap in sorted(self.nodes.items()) if not snap.get("crashed")]

    def to_json(self) -> dict:
        return {"r": self.r, "ring": self.ring.to_json(), "nodes": self.nodes}

    @classmethod
    def from_json(cls, doc: dict) -> "ClusterSnapshot":
        return cls(int(doc["r"]), TokenRing.from_json(doc["ring"]), dict(doc["nodes"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ClusterSnapshot":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def global_scan(snapshot: ClusterSnapshot) -> list[Violation]:
    """Check referential integrity across all live nodes.

    Crashed nodes are skipped entirely: their stores are unreachable and a
    rejoin would go through ordinary repair.
    """
    live = set(snapshot.live_nodes())
    violations: list[Violation] = []
    for nid in sorted(live):
        snap = snapshot.nodes[nid]
        target_keys_of = lambda n: snapshot.nodes[n]["target_store"]  # noqa: E731
        for key, entry in sorted(snap["relay_store"].items()):
            for target in entry["targets"]:
                if target in live and key not in target_keys_of(target):
                    violations.append(Violation("dangling", nid, key, target))
        for key in sorted(snap["target_store"]):
            responsible = snapshot.ring.responsible_nodes(key, snapshot.r)
            if nid in responsible:
                continue  # the responsible node is itself the target
            live_responsible = [n for n in responsible if n in live]
            for resp in live_responsible:
                relay = snapshot.nodes[resp]["relay_store"].get(key)
                if relay is None or nid not in relay["targets"]:
                    violations.append(Violation("unreferenced", nid, key, resp))
                    break
        for key in sorted(set(snap["data_store"]) & set(snap["relay_store"])):
            violations.append(Violation("data_and_relay", nid, key))
    return violations


# --- requirement-triggered expiry ---------------------------------------------

def expire_items(state: NodeState, ctx) -> Outbound:
    """Delete overdue target-store items through a randomly chosen peer
    acting as coordinator, so the ordinary delete flow (and its recovery)
    applies. Failed attempts are retried on a later sweep."""
    now = ctx.now_ns
    retry_after = ctx.params.op_timeout_ns * (2 ** (ctx.params.max_retries + 1))
    out: Outbound = []
    for key, item in sorted(state.target_store.items()):
        if item.expiry_ns is None or item.expiry_ns > now:
            continue
        if state.expiring.get(key, 0) > now:
            continue  # an attempt is still in flight
        peers = [n for n in state.ring.node_ids if n != state.node_id]
        coordinator = peers[ctx.rng.randrange(len(peers))] if peers else state.node_id
        state.expiry_seq += 1
        op_id = f"x.{state.node_id}.{state.expiry_seq}"
        state.expiry_ops[op_id] = key
        state.expiring[key] = now + retry_after
        state.repair_log.append(RepairAction(RepairKind.EXPIRY_DELETE, key, (coordinator,)))
        out.append((coordinator, ClientRequest(op_id, Delete(key))))
    return out


def handle_client_reply_at_node(state: NodeState, msg: ClientReply, src: str, ctx) -> Outbound:
    """Completion of a delete this node delegated for an expired item."""
    key = state.expiry_ops.pop(msg.op_id, None)
    if key is not None:
        state.expiring.pop(key, None)
    return []


# --- client-driven recovery helpers ---------------------------------------------

def client_cleanup_messages(key: str, wire_op_id: str, eligible: list[str]) -> Outbound:
    """After reissuing a create/update whose coordinator died, remove any
    copies its attempts left behind on eligible nodes."""
    cleanup = CleanupOp(key, f"{wire_op_id}/")
    return [(n, cleanup) for n in eligible]


def client_broadcast_delete_messages(key: str, wire_op_id: str, nodes: list[str]) -> Outbound:
    bcast = BroadcastDelete(f"{wire_op_id}/client", key)
    return [(n, bcast) for n in nodes]
