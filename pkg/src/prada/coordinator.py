"""Coordinator-side state machines for the four CRUD flows.

Any node can coordinate a client statement. The coordinator fans the
operation out (standard path straight to the responsible nodes; items with
requirements to the chosen targets plus reference writes), collects
acknowledgments, and answers the client once every required ack arrived.
Missing acks surface as deadline timers and are repaired by rollback,
reissue with fresh target selection, or a broadcast delete, depending on
the operation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dhr import eligible_nodes
from .balance import select_targets
from .messages import (
    BroadcastDelete,
    CleanupOp,
    ClientReply,
    ClientRequest,
    DataWrite,
    DeleteAck,
    DeleteRequest,
    ErrorKind,
    Message,
    ReadReply,
    ReadRequest,
    RelayAck,
    RelayWrite,
    ReplyStatus,
    RollbackWrite,
    TargetWrite,
    UpdateRequest,
    WriteAck,
    columns_bytes,
)
from .node import NodeState, Outbound
from .query import Delete, Insert, Select, Statement, Update
from .recovery import RepairAction, RepairKind

OP_DEADLINE = "op_deadline"


@dataclass
class PendingOp:
    """One in-flight coordinator operation (current attempt)."""

    client_op_id: str
    op_id: str
    kind: str  # 'create' | 'read' | 'update' | 'delete'
    stmt: Statement
    key: str
    client: str
    started_ns: int
    timeout_ns: int
    attempt: int = 0
    dhr_path: bool = False
    awaited: set[tuple[str, str]] = field(default_factory=set)  # ('w'|'r', node)
    need_count: int = 0  # count-based completion (standard update, delete)
    ack_senders: set[str] = field(default_factory=set)
    notfound_senders: set[str] = field(default_factory=set)
    existed: bool = False
    degraded: bool = False
    chosen_targets: tuple[str, ...] = ()
    eligible: tuple[str, ...] = ()
    blacklist: set[str] = field(default_factory=set)
    prior_op_ids: list[str] = field(default_factory=list)


def _attempt_id(client_op_id: str, attempt: int) -> str:
    return f"{client_op_id}/a{attempt}"


def _reply(pend: PendingOp, status: ReplyStatus, **kw) -> tuple[str, ClientReply]:
    return (pend.client, ClientReply(pend.client_op_id, status, degraded=pend.degraded, **kw))


def _arm_deadline(state: NodeState, pend: PendingOp, ctx) -> None:
    ctx.set_timer(state.node_id, ctx.now_ns + pend.timeout_ns, OP_DEADLINE, pend.op_id)


def handle_client_request(state: NodeState, msg: ClientRequest, src: str, ctx) -> Outbound:
    stmt = msg.stmt
    pend = PendingOp(
        client_op_id=msg.op_id,
        op_id=_attempt_id(msg.op_id, 0),
        kind={Insert: "create", Select: "read", Update: "update", Delete: "delete"}[type(stmt)],
        stmt=stmt,
        key=stmt.key,
        client=src,
        started_ns=ctx.now_ns,
        timeout_ns=ctx.params.op_timeout_ns,
    )
    if isinstance(stmt, Insert):
        pend.dhr_path = ctx.params.mode == "prada" and bool(stmt.req)
    elif isinstance(stmt, Update):
        pend.dhr_path = ctx.params.mode == "prada" and stmt.req is not None and bool(stmt.req)
    out = _launch(state, pend, ctx)
    if pend.op_id in state.pending:
        _arm_deadline(state, pend, ctx)
    return out


def _launch(state: NodeState, pend: PendingOp, ctx) -> Outbound:
    """Send the messages of one attempt and register what to await."""
    stmt = pend.stmt
    responsible = state.responsible(pend.key)
    me = state.node_id
    view = state.load_view

    if pend.kind == "read":
        state.pending[pend.op_id] = pend
        req = ReadRequest(pend.op_id, pend.key, me)
        return [(n, req) for n in responsible]

    if pend.kind == "delete":
        pend.need_count = len(responsible)
        state.pending[pend.op_id] = pend
        req = DeleteRequest(pend.op_id, pend.key, me)
        return [(n, req) for n in responsible]

    if not pend.dhr_path:
        # requirement-free path: behave exactly like the unmodified store
        assert isinstance(stmt, (Insert, Update))
        replace = pend.kind == "create"
        size = len(pend.key.encode()) + columns_bytes(stmt.columns)
        if replace:
            pend.awaited = {("w", n) for n in responsible}
        else:
            # a relayed item acks from its targets instead; count acks
            pend.need_count = len(responsible)
        state.pending[pend.op_id] = pend
        write = DataWrite(pend.op_id, pend.key, stmt.columns, replace, me)
        for n in responsible:
            if n != me:
                view.note_pending(n, size)
        return [(n, write) for n in responsible]

    # indirection path
    assert isinstance(stmt, (Insert, Update))
    req = stmt.req
    assert req is not None
    if not pend.eligible:
        pend.eligible = tuple(eligible_nodes(state.capability_replica, req, ctx.registry))
    if not pend.eligible:
        return [_reply(pend, ReplyStatus.ERROR, error=ErrorKind.UNSATISFIABLE_DHR)]
    usable = [n for n in pend.eligible if n not in pend.blacklist] or list(pend.eligible)
    sel = select_targets(usable, responsible, ctx.params.r, view)
    pend.chosen_targets = tuple(sel.targets)
    pend.degraded = pend.degraded or sel.degraded
    pend.awaited = {("w", t) for t in pend.chosen_targets} | {("r", n) for n in responsible}
    state.pending[pend.op_id] = pend

    out: Outbound = []
    if pend.kind == "create":
        size = len(pend.key.encode()) + columns_bytes(stmt.columns)
        write = TargetWrite(pend.op_id, pend.key, stmt.columns, req, me)
        for t in pend.chosen_targets:
            if t != me:
                view.note_pending(t, size)
            out.append((t, write))
        relay = RelayWrite(pend.op_id, pend.key, pend.chosen_targets, req, me)
        out += [(n, relay) for n in responsible]
    else:  # update with superseding requirements: routed via the responsible nodes
        upd = UpdateRequest(pend.op_id, pend.key, stmt.columns, req, pend.chosen_targets, me)
        out += [(n, upd) for n in responsible]
    return out


# --- acknowledgment handling -------------------------------------------------

def _finish(state: NodeState, pend: PendingOp, reply: tuple[str, ClientReply]) -> Outbound:
    del state.pending[pend.op_id]
    out: Outbound = [reply]
    if pend.prior_op_ids and pend.kind == "update" and pend.dhr_path:
        # sweep target copies left behind by abandoned attempts
        for prior in pend.prior_op_ids:
            cleanup = CleanupOp(pend.key, prior)
            out += [(n, cleanup) for n in pend.eligible]
    return out


def _check_write_complete(state: NodeState, pend: PendingOp) -> Outbound:
    if pend.awaited:
        return []
    return _finish(state, pend, _reply(pend, ReplyStatus.OK))


def handle_write_ack(state: NodeState, msg: WriteAck, src: str, ctx) -> Outbound:
    pend = state.pending.get(msg.op_id)
    if pend is None:
        return []
    if pend.need_count:
        pend.ack_senders.add(src)
        if len(pend.ack_senders) >= pend.need_count:
            return _finish(state, pend, _reply(pend, ReplyStatus.OK))
        return []
    pend.awaited.discard(("w", src))
    return _check_write_complete(state, pend)


def handle_relay_ack(state: NodeState, msg: RelayAck, src: str, ctx) -> Outbound:
    pend = state.pending.get(msg.op_id)
    if pend is None:
        return []
    pend.awaited.discard(("r", src))
    return _check_write_complete(state, pend)


def handle_read_reply(state: NodeState, msg: ReadReply, src: str, ctx) -> Outbound:
    pend = state.pending.get(msg.op_id)
    if pend is None:
        return []  # duplicate replies of an answered read are ignored
    if msg.found:
        return _finish(state, pend, _reply(pend, ReplyStatus.OK, columns=msg.columns))
    pend.notfound_senders.add(src)
    if len(pend.notfound_senders) >= ctx.params.r:
        return _finish(state, pend, _reply(pend, ReplyStatus.NOT_FOUND))
    return []


def handle_delete_ack(state: NodeState, msg: DeleteAck, src: str, ctx) -> Outbound:
    pend = state.pending.get(msg.op_id)
    if pend is None:
        return []
    pend.ack_senders.add(src)
    pend.existed = pend.existed or msg.existed
    if len(pend.ack_senders) >= pend.need_count:
        status = ReplyStatus.OK if pend.existed else ReplyStatus.NOT_FOUND
        return _finish(state, pend, _reply(pend, status))
    return []


# --- deadline handling ---------------------------------------------------------

def handle_op_deadline(state: NodeState, op_id: str, ctx) -> Outbound:
    pend = state.pending.get(op_id)
    if pend is None:
        return []  # completed in time
    del state.pending[op_id]

    if pend.kind == "delete":
        # missing acks: broadcast the delete so every copy and reference goes
        state.repair_log.append(
            RepairAction(RepairKind.BROADCAST_DELETE, pend.key, tuple(state.ring.node_ids))
        )
        bcast = BroadcastDelete(pend.op_id, pend.key)
        out: Outbound = [(n, bcast) for n in state.ring.node_ids]
        out.append(_reply(pend, ReplyStatus.OK))
        return out

    out = []
    if pend.kind == "create":
        # roll the partial attempt back before trying again
        rollback = RollbackWrite(pend.op_id, pend.key)
        recipients = sorted(set(pend.chosen_targets) | set(state.responsible(pend.key)))
        state.repair_log.append(
            RepairAction(RepairKind.ROLLBACK_CREATE, pend.key, tuple(recipients))
        )
        out += [(n, rollback) for n in recipients]

    if pend.attempt + 1 > ctx.params.max_retries:
        error = ErrorKind.TIMEOUT if pend.kind == "read" else ErrorKind.RETRIES_EXHAUSTED
        out.append(_reply(pend, ReplyStatus.ERROR, error=error))
        return out

    reissue_kind = {
        "create": RepairKind.REISSUE_CREATE,
        "read": RepairKind.REISSUE_READ,
        "update": RepairKind.REISSUE_UPDATE,
    }[pend.kind]
    state.repair_log.append(RepairAction(reissue_kind, pend.key))

    # blacklist targets that never acknowledged, rerun with fresh selection
    pend.blacklist |= {n for ack, n in pend.awaited if ack == "w"}
    pend.prior_op_ids.append(pend.op_id)
    pend.attempt += 1
    pend.op_id = _attempt_id(pend.client_op_id, pend.attempt)
    pend.timeout_ns *= 2
    pend.awaited = set()
    pend.ack_senders = set()
    pend.notfound_senders = set()
    pend.need_count = 0
    out += _launch(state, pend, ctx)
    if pend.op_id in state.pending:
        _arm_deadline(state, pend, ctx)
    return out


COORDINATOR_HANDLERS = {
    ClientRequest: handle_client_request,
    WriteAck: handle_write_ack,
    RelayAck: handle_relay_ack,
    ReadReply: handle_read_reply,
    DeleteAck: handle_delete_ack,
}
