"""Per-node state and the storage-side message handlers.

A node owns three stores: the ordinary data store (items it holds as a
responsible node, requirement-free path), the relay store (key -> target
list references for items this node would be responsible for but cannot
store compliantly), and the target store (items redirected here because
this node satisfies their requirements). A local replica of the global
capability store and a load view complete the state.

Transitions are pure in the sense that they touch only the node's own
state and return the messages to send; the simulator (or any transport)
owns delivery, timers, and randomness via the context object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from random import Random
from typing import Callable, Mapping, Protocol

from .balance import GossipConfig, LoadView
from .dhr import (
    CapabilityStore,
    DhrRegistry,
    DhrRequest,
    EMPTY_REQUEST,
    NodeCapabilities,
)
from .messages import (
    BroadcastDelete,
    CapabilityAnnounce,
    CleanupOp,
    DataWrite,
    DeleteAck,
    DeleteForward,
    DeleteRequest,
    GossipSync,
    GossipSyncReply,
    Message,
    MoveData,
    MoveInstruct,
    OldTargetRelease,
    ReadForward,
    ReadReply,
    ReadRequest,
    RelayAck,
    RelayWrite,
    RollbackWrite,
    TargetStored,
    TargetUpdate,
    TargetWrite,
    UpdateRequest,
    WriteAck,
    columns_bytes,
)
from .ring import TokenRing

# Requirement type whose demanded level doubles as an item expiry, in seconds.
LIFETIME_TYPE_ID = "max-lifetime"

SECOND_NS = 1_000_000_000

Outbound = list[tuple[str, Message]]


@dataclass
class EngineParams:
    """Engine knobs shared by every node of a cluster."""

    r: int = 1
    mode: str = "prada"  # 'prada' | 'baseline' (indirection layer compiled out)
    op_timeout_ns: int = 1 * SECOND_NS
    max_retries: int = 3
    expiry_sweep_ns: int = 1 * SECOND_NS
    gossip: GossipConfig = field(default_factory=GossipConfig)


class SimContext(Protocol):
    """What a transition needs from its surroundings."""

    now_ns: int
    rng: Random
    params: EngineParams
    registry: DhrRegistry

    def set_timer(self, node_id: str, at_ns: int, kind: str, payload: object) -> None: ...


@dataclass
class DataItem:
    key: str
    columns: dict[str, bytes]
    version: int
    dhr: DhrRequest = EMPTY_REQUEST
    expiry_ns: int | None = None
    op_id: str = ""

    @property
    def size_bytes(self) -> int:
        return len(self.key.encode("utf-8")) + columns_bytes(self.columns)

    def to_json(self) -> dict:
        return {
            "key": self.key,
            "columns": {c: v.decode("latin-1") for c, v in sorted(self.columns.items())},
            "version": self.version,
            "dhr": self.dhr.to_json(),
            "expiry_ns": self.expiry_ns,
            "op_id": self.op_id,
        }


@dataclass
class RelayEntry:
    """Reference to where a key's data actually lives. Deliberately free of
    column data so its size never depends on the payload."""

    key: str
    targets: tuple[str, ...]
    dhr: DhrRequest
    op_id: str = ""

    def serialized(self) -> bytes:
        doc = {"key": self.key, "targets": list(self.targets), "dhr": self.dhr.to_json()}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def to_json(self) -> dict:
        return {
            "key": self.key,
            "targets": list(self.targets),
            "dhr": self.dhr.to_json(),
            "op_id": self.op_id,
        }


@dataclass
class PendingSwap:
    """Responsible-side bookkeeping for an update whose target set changes:
    the relay entry is swapped over only once a new target confirms. Keyed
    by item key; a retried attempt supersedes the previous one."""

    op_id: str
    key: str
    new_targets: tuple[str, ...]
    dhr: DhrRequest
    reply_to: str
    old_targets: tuple[str, ...] = ()
    old_op_id: str = ""
    drop_data: bool = False


class NodeState:
    """All state owned by one node. Single-owner: only the event loop that
    owns a node may apply transitions to it."""

    def __init__(
        self,
        node_id: str,
        ring: TokenRing,
        caps: NodeCapabilities,
        params: EngineParams,
    ):
        self.node_id = node_id
        self.ring = ring
        self.caps = caps
        self.params = params
        self.data_store: dict[str, DataItem] = {}
        self.relay_store: dict[str, RelayEntry] = {}
        self.target_store: dict[str, DataItem] = {}
        self.capability_replica = CapabilityStore()
        self.load_view = LoadView(ring.node_ids)
        self.pending: dict[str, object] = {}  # coordinator-side ops (see coordinator.py)
        self.pending_swaps: dict[str, PendingSwap] = {}  # key -> swap of the latest attempt
        self.seen_ops: set[tuple[str, str]] = set()
        self.expiring: dict[str, int] = {}  # key -> retry deadline
        self.expiry_ops: dict[str, str] = {}  # op id -> key
        self.expiry_seq = 0
        self.repair_log: list = []
        self.announce_seq = 0
        self.crashed = False

    # --- derived helpers -------------------------------------------------

    def responsible(self, key: str) -> list[str]:
        return self.ring.responsible_nodes(key, self.params.r)

    def is_designated(self, key: str) -> bool:
        """First responsible node in ring order leads move/release chores."""
        return self.responsible(key)[0] == self.node_id

    def stored_payload_bytes(self) -> int:
        return sum(i.size_bytes for i in self.data_store.values()) + sum(
            i.size_bytes for i in self.target_store.values()
        )

    def snapshot(self) -> dict:
        return {
            "node_id": self.node_id,
            "crashed": self.crashed,
            "data_store": {k: i.to_json() for k, i in sorted(self.data_store.items())},
            "relay_store": {k: e.to_json() for k, e in sorted(self.relay_store.items())},
            "target_store": {k: i.to_json() for k, i in sorted(self.target_store.items())},
            "capabilities": self.caps.to_json(),
        }

    # --- store mutations --------------------------------------------------

    def _note_stored(self, delta: int) -> None:
        if delta > 0:
            self.load_view.note_pending(self.node_id, delta)

    def put_data(self, key: str, columns: Mapping[str, bytes], replace: bool, op_id: str) -> None:
        old = self.data_store.get(key)
        new_columns = dict(columns) if replace or old is None else {**old.columns, **columns}
        item = DataItem(key, new_columns, (old.version + 1) if old else 1, EMPTY_REQUEST, None, op_id)
        self.data_store[key] = item
        self._note_stored(item.size_bytes - (old.size_bytes if old else 0))

    def put_target(
        self,
        key: str,
        columns: Mapping[str, bytes],
        dhr: DhrRequest,
        op_id: str,
        now_ns: int,
        version: int | None = None,
    ) -> None:
        old = self.target_store.get(key)
        if version is None:
            version = (old.version + 1) if old else 1
        item = DataItem(key, dict(columns), version, dhr, expiry_for(dhr, now_ns), op_id)
        self.target_store[key] = item
        self._note_stored(item.size_bytes - (old.size_bytes if old else 0))


def expiry_for(dhr: DhrRequest, now_ns: int) -> int | None:
    lifetimes = dhr.demands.get(LIFETIME_TYPE_ID)
    if not lifetimes:
        return None
    return now_ns + min(lifetimes) * SECOND_NS  # strictest demanded lifetime wins


# --------------------------------------------------------------------------
# storage-side handlers: (state, msg, src, ctx) -> outbound messages
# --------------------------------------------------------------------------

def handle_data_write(state: NodeState, msg: DataWrite, src: str, ctx) -> Outbound:
    relay = state.relay_store.get(msg.key)
    if relay is not None:
        if msg.replace:
            # plain INSERT supersedes the indirected item: back to the standard path
            del state.relay_store[msg.key]
            state.put_data(msg.key, msg.columns, True, msg.op_id)
            out: Outbound = [(msg.reply_to, WriteAck(msg.op_id, msg.key))]
            if state.is_designated(msg.key):
                release = OldTargetRelease(relay.op_id, msg.key, ())
                out += [(t, release) for t in relay.targets]
            return out
        # update without a requirements clause: keep requirements, update in place
        fwd = TargetUpdate(msg.op_id, msg.key, msg.columns, None, msg.reply_to)
        return [(t, fwd) for t in relay.targets]
    state.put_data(msg.key, msg.columns, msg.replace, msg.op_id)
    return [(msg.reply_to, WriteAck(msg.op_id, msg.key))]


def handle_read_request(state: NodeState, msg: ReadRequest, src: str, ctx) -> Outbound:
    item = state.data_store.get(msg.key)
    if item is None:
        item = state.target_store.get(msg.key)  # responsible node may itself be a target
    if item is not None:
        return [(msg.reply_to, ReadReply(msg.op_id, msg.key, True, dict(item.columns), item.version))]
    relay = state.relay_store.get(msg.key)
    if relay is not None:
        fwd = ReadForward(msg.op_id, msg.key, msg.reply_to)
        return [(t, fwd) for t in relay.targets]
    return [(msg.reply_to, ReadReply(msg.op_id, msg.key, False))]


def handle_read_forward(state: NodeState, msg: ReadForward, src: str, ctx) -> Outbound:
    token = (msg.op_id, "read")
    if token in state.seen_ops:
        return []  # duplicate fan-out from another responsible node
    state.seen_ops.add(token)
    item = state.target_store.get(msg.key)
    if item is None:
        return [(msg.reply_to, ReadReply(msg.op_id, msg.key, False))]
    return [(msg.reply_to, ReadReply(msg.op_id, msg.key, True, dict(item.columns), item.version))]


def handle_delete_request(state: NodeState, msg: DeleteRequest, src: str, ctx) -> Outbound:
    if msg.key in state.data_store:
        del state.data_store[msg.key]
        return [(msg.reply_to, DeleteAck(msg.op_id, msg.key, True))]
    relay = state.relay_store.pop(msg.key, None)
    if relay is not None:
        out: Outbound = []
        for t in relay.targets:
            if t == state.node_id:
                token = (msg.op_id, "delete")
                if token not in state.seen_ops:
                    state.seen_ops.add(token)
                    existed = state.target_store.pop(msg.key, None) is not None
                    out.append((msg.reply_to, DeleteAck(msg.op_id, msg.key, existed)))
            else:
                out.append((t, DeleteForward(msg.op_id, msg.key, msg.reply_to)))
        return out
    if msg.key in state.target_store:
        # responsible-as-target whose relay entry is already gone
        token = (msg.op_id, "delete")
        if token not in state.seen_ops:
            state.seen_ops.add(token)
            del state.target_store[msg.key]
            return [(msg.reply_to, DeleteAck(msg.op_id, msg.key, True))]
        return []
    return [(msg.reply_to, DeleteAck(msg.op_id, msg.key, False))]


def handle_delete_forward(state: NodeState, msg: DeleteForward, src: str, ctx) -> Outbound:
    token = (msg.op_id, "delete")
    if token in state.seen_ops:
        return []
    state.seen_ops.add(token)
    existed = state.target_store.pop(msg.key, None) is not None
    return [(msg.reply_to, DeleteAck(msg.op_id, msg.key, existed))]


def handle_target_write(state: NodeState, msg: TargetWrite, src: str, ctx) -> Outbound:
    state.put_target(msg.key, msg.columns, msg.dhr, msg.op_id, ctx.now_ns)
    return [(msg.reply_to, WriteAck(msg.op_id, msg.key))]


def handle_relay_write(state: NodeState, msg: RelayWrite, src: str, ctx) -> Outbound:
    old_relay = state.relay_store.get(msg.key)
    state.data_store.pop(msg.key, None)  # standard-to-indirected transition
    state.pending_swaps.pop(msg.key, None)  # a fresh create supersedes any pending move
    state.relay_store[msg.key] = RelayEntry(msg.key, msg.targets, msg.dhr, msg.op_id)
    out: Outbound = [(msg.reply_to, RelayAck(msg.op_id, msg.key))]
    if (
        old_relay is not None
        and set(old_relay.targets) != set(msg.targets)
        and state.is_designated(msg.key)
    ):
        release = OldTargetRelease(old_relay.op_id, msg.key, msg.targets)
        out += [(t, release) for t in old_relay.targets if t not in msg.targets]
    return out


def handle_update_request(state: NodeState, msg: UpdateRequest, src: str, ctx) -> Outbound:
    relay = state.relay_store.get(msg.key)
    if relay is not None:
        dhr = msg.dhr if msg.dhr is not None else relay.dhr
        if set(relay.targets) == set(msg.new_targets):
            # same placement: refresh the reference, update in place at the targets
            state.pending_swaps.pop(msg.key, None)
            state.relay_store[msg.key] = RelayEntry(msg.key, msg.new_targets, dhr, msg.op_id)
            fwd = TargetUpdate(msg.op_id, msg.key, msg.columns, dhr, msg.reply_to)
            out: Outbound = [(t, fwd) for t in msg.new_targets]
            out.append((msg.reply_to, RelayAck(msg.op_id, msg.key)))
            return out
        # placement changes: old targets push the merged item to the new ones;
        # the reference swaps over only once a new target confirms storage
        state.pending_swaps[msg.key] = PendingSwap(
            msg.op_id, msg.key, msg.new_targets, dhr, msg.reply_to,
            old_targets=relay.targets, old_op_id=relay.op_id,
        )
        if state.is_designated(msg.key):
            instr = MoveInstruct(msg.op_id, msg.key, msg.columns, dhr, msg.new_targets, msg.reply_to)
            return [(t, instr) for t in relay.targets]
        return []
    dhr = msg.dhr if msg.dhr is not None else EMPTY_REQUEST
    item = state.data_store.get(msg.key)
    if item is not None:
        # item lived on the standard path so far; this node ships it out itself
        merged = {**item.columns, **msg.columns}
        state.pending_swaps[msg.key] = PendingSwap(
            msg.op_id, msg.key, msg.new_targets, dhr, msg.reply_to, drop_data=True
        )
        move = MoveData(msg.op_id, msg.key, merged, item.version + 1, dhr, msg.reply_to)
    else:
        # unknown key: updates act as upserts
        state.pending_swaps[msg.key] = PendingSwap(
            msg.op_id, msg.key, msg.new_targets, dhr, msg.reply_to
        )
        move = MoveData(msg.op_id, msg.key, dict(msg.columns), 1, dhr, msg.reply_to)
    for t in msg.new_targets:
        if t != state.node_id:
            state.load_view.note_pending(t, len(msg.key.encode()) + columns_bytes(move.columns))
    return [(t, move) for t in msg.new_targets]


def handle_move_instruct(state: NodeState, msg: MoveInstruct, src: str, ctx) -> Outbound:
    item = state.target_store.get(msg.key)
    if item is None:
        return []  # nothing to move here; coordinator recovery will retry
    merged = {**item.columns, **msg.columns}
    move = MoveData(msg.op_id, msg.key, merged, item.version + 1, msg.dhr, msg.reply_to)
    size = len(msg.key.encode()) + columns_bytes(merged)
    for t in msg.new_targets:
        if t != state.node_id:
            state.load_view.note_pending(t, size)
    # keep the local copy until a responsible node confirms the move
    return [(t, move) for t in msg.new_targets]


def handle_move_data(state: NodeState, msg: MoveData, src: str, ctx) -> Outbound:
    token = (msg.op_id, "move")
    if token in state.seen_ops:
        return []
    state.seen_ops.add(token)
    state.put_target(msg.key, msg.columns, msg.dhr, msg.op_id, ctx.now_ns, version=msg.version)
    out: Outbound = [(msg.reply_to, WriteAck(msg.op_id, msg.key))]
    stored = TargetStored(msg.op_id, msg.key)
    out += [(n, stored) for n in state.responsible(msg.key)]
    return out


def handle_target_stored(state: NodeState, msg: TargetStored, src: str, ctx) -> Outbound:
    swap = state.pending_swaps.get(msg.key)
    if swap is None or swap.op_id != msg.op_id:
        return []  # already swapped, or confirmation of a superseded attempt
    del state.pending_swaps[msg.key]
    if swap.drop_data:
        state.data_store.pop(swap.key, None)
    state.relay_store[swap.key] = RelayEntry(swap.key, swap.new_targets, swap.dhr, msg.op_id)
    out: Outbound = [(swap.reply_to, RelayAck(msg.op_id, swap.key))]
    if swap.old_targets and state.is_designated(swap.key):
        release = OldTargetRelease(swap.old_op_id, swap.key, swap.new_targets)
        out += [(t, release) for t in swap.old_targets if t not in swap.new_targets]
    return out


def handle_target_update(state: NodeState, msg: TargetUpdate, src: str, ctx) -> Outbound:
    token = (msg.op_id, "update")
    if token in state.seen_ops:
        return []
    state.seen_ops.add(token)
    item = state.target_store.get(msg.key)
    if item is None:
        dhr = msg.dhr if msg.dhr is not None else EMPTY_REQUEST
        state.put_target(msg.key, msg.columns, dhr, msg.op_id, ctx.now_ns)
    else:
        merged = {**item.columns, **msg.columns}
        dhr = msg.dhr if msg.dhr is not None else item.dhr
        state.put_target(msg.key, merged, dhr, msg.op_id, ctx.now_ns, version=item.version + 1)
    return [(msg.reply_to, WriteAck(msg.op_id, msg.key))]


def handle_old_target_release(state: NodeState, msg: OldTargetRelease, src: str, ctx) -> Outbound:
    if state.node_id in msg.keep_targets:
        return []
    item = state.target_store.get(msg.key)
    # only the copy the release was issued against; a newer item stays
    if item is not None and item.op_id == msg.op_id:
        del state.target_store[msg.key]
    return []


def handle_rollback_write(state: NodeState, msg: RollbackWrite, src: str, ctx) -> Outbound:
    for store in (state.target_store, state.data_store):
        item = store.get(msg.key)
        if item is not None and item.op_id == msg.op_id:
            del store[msg.key]
    entry = state.relay_store.get(msg.key)
    if entry is not None and entry.op_id == msg.op_id:
        del state.relay_store[msg.key]
    swap = state.pending_swaps.get(msg.key)
    if swap is not None and swap.op_id == msg.op_id:
        del state.pending_swaps[msg.key]
    return []


def handle_cleanup_op(state: NodeState, msg: CleanupOp, src: str, ctx) -> Outbound:
    item = state.target_store.get(msg.key)
    if item is not None and item.op_id.startswith(msg.op_prefix):
        del state.target_store[msg.key]
    return []


def handle_broadcast_delete(state: NodeState, msg: BroadcastDelete, src: str, ctx) -> Outbound:
    state.data_store.pop(msg.key, None)
    state.relay_store.pop(msg.key, None)
    state.target_store.pop(msg.key, None)
    return []


def handle_capability_announce(state: NodeState, msg: CapabilityAnnounce, src: str, ctx) -> Outbound:
    state.capability_replica.apply(msg.caps, msg.seqno)
    return []


def handle_gossip_sync(state: NodeState, msg: GossipSync, src: str, ctx) -> Outbound:
    state.load_view.merge_reported(msg.reported)
    return [(src, GossipSyncReply(state.load_view.snapshot_reported()))]


def handle_gossip_sync_reply(state: NodeState, msg: GossipSyncReply, src: str, ctx) -> Outbound:
    state.load_view.merge_reported(msg.reported)
    return []


# --------------------------------------------------------------------------
# timers owned by the storage side
# --------------------------------------------------------------------------

def gossip_round(state: NodeState, ctx) -> Outbound:
    """One sync round: exchange reported loads with one random peer."""
    peers = [n for n in state.ring.node_ids if n != state.node_id]
    if not peers:
        return []
    peer = peers[ctx.rng.randrange(len(peers))]
    return [(peer, GossipSync(state.load_view.snapshot_reported()))]


def load_refresh(state: NodeState, ctx) -> Outbound:
    state.load_view.refresh_own(state.node_id, state.stored_payload_bytes(), ctx.now_ns)
    return []


def capability_bootstrap(state: NodeState, caps: NodeCapabilities, ctx) -> Outbound:
    """Adopt own capabilities and announce them to the whole cluster."""
    state.caps = caps
    state.announce_seq += 1
    state.capability_replica.apply(caps, state.announce_seq)
    announce = CapabilityAnnounce(caps, state.announce_seq)
    return [(n, announce) for n in state.ring.node_ids if n != state.node_id]


_STORAGE_HANDLERS: dict[type, Callable] = {
    DataWrite: handle_data_write,
    ReadRequest: handle_read_request,
    ReadForward: handle_read_forward,
    DeleteRequest: handle_delete_request,
    DeleteForward: handle_delete_forward,
    TargetWrite: handle_target_write,
    RelayWrite: handle_relay_write,
    UpdateRequest: handle_update_request,
    MoveInstruct: handle_move_instruct,
    MoveData: handle_move_data,
    TargetStored: handle_target_stored,
    TargetUpdate: handle_target_update,
    OldTargetRelease: handle_old_target_release,
    RollbackWrite: handle_rollback_write,
    CleanupOp: handle_cleanup_op,
    BroadcastDelete: handle_broadcast_delete,
    CapabilityAnnounce: handle_capability_announce,
    GossipSync: handle_gossip_sync,
    GossipSyncReply: handle_gossip_sync_reply,
}


def local_apply(state: NodeState, msg: Message, src: str, ctx) -> Outbound:
    """Apply one storage-side message to the node, returning outbound mail.

    Coordinator-side messages (client requests and acks) are dispatched in
    the coordinator module; the simulator routes both through one table.
    """
    handler = _STORAGE_HANDLERS.get(type(msg))
    if handler is None:
        raise TypeError(f"no storage handler for {type(msg).__name__}")
    return handler(state, msg, src, ctx)
