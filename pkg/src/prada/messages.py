"""Typed protocol messages exchanged between node state machines.

Every message belonging to a client operation carries the operation id of
the coordinator attempt that produced it; storage handlers use it to
deduplicate fan-out copies and to identify which writes a rollback or
cleanup refers to. Addressing (src/dst) lives in the delivery envelope,
not in the message itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .dhr import DhrRequest, NodeCapabilities
from .query import Statement


class ReplyStatus(Enum):
    OK = "ok"
    NOT_FOUND = "not_found"
    ERROR = "error"


class ErrorKind(Enum):
    UNSATISFIABLE_DHR = "unsatisfiable_dhr"
    TIMEOUT = "timeout"
    RETRIES_EXHAUSTED = "retries_exhausted"


# --- client boundary -------------------------------------------------------

@dataclass
class ClientRequest:
    op_id: str
    stmt: Statement


@dataclass
class ClientReply:
    op_id: str
    status: ReplyStatus
    error: ErrorKind | None = None
    columns: Mapping[str, bytes] | None = None
    degraded: bool = False


# --- standard (requirement-free) path --------------------------------------

@dataclass
class DataWrite:
    op_id: str
    key: str
    columns: Mapping[str, bytes]
    replace: bool  # True: row replacement (insert); False: column merge (update)
    reply_to: str


@dataclass
class WriteAck:
    op_id: str
    key: str


@dataclass
class ReadRequest:
    op_id: str
    key: str
    reply_to: str


@dataclass
class ReadReply:
    op_id: str
    key: str
    found: bool
    columns: Mapping[str, bytes] | None = None
    version: int = 0


@dataclass
class DeleteRequest:
    op_id: str
    key: str
    reply_to: str


@dataclass
class DeleteAck:
    op_id: str
    key: str
    existed: bool


# --- indirection path -------------------------------------------------------

@dataclass
class TargetWrite:
    """Coordinator sends the item to a chosen target node."""

    op_id: str
    key: str
    columns: Mapping[str, bytes]
    dhr: DhrRequest
    reply_to: str


@dataclass
class RelayWrite:
    """Coordinator installs the key -> target list reference on a
    responsible node."""

    op_id: str
    key: str
    targets: tuple[str, ...]
    dhr: DhrRequest
    reply_to: str


@dataclass
class RelayAck:
    op_id: str
    key: str


@dataclass
class ReadForward:
    """Responsible node relays a read to a target on the coordinator's
    behalf; the target answers the coordinator directly."""

    op_id: str
    key: str
    reply_to: str


@dataclass
class DeleteForward:
    op_id: str
    key: str
    reply_to: str


@dataclass
class UpdateRequest:
    """Coordinator hands an update (with superseding requirements, if any)
    to a responsible node, which routes it to the right targets."""

    op_id: str
    key: str
    columns: Mapping[str, bytes]
    dhr: DhrRequest | None  # None: keep the item's current requirements
    new_targets: tuple[str, ...]
    reply_to: str


@dataclass
class TargetUpdate:
    """In-place column merge at an unchanged target."""

    op_id: str
    key: str
    columns: Mapping[str, bytes]
    dhr: DhrRequest | None
    reply_to: str


@dataclass
class MoveInstruct:
    """Responsible node tells an old target to merge the update in and ship
    the item to the new targets."""

    op_id: str
    key: str
    columns: Mapping[str, bytes]
    dhr: DhrRequest
    new_targets: tuple[str, ...]
    reply_to: str


@dataclass
class MoveData:
    """Item payload moving to a new target (from an old target, or from a
    responsible node on a standard-to-indirected transition)."""

    op_id: str
    key: str
    columns: Mapping[str, bytes]
    version: int
    dhr: DhrRequest
    reply_to: str


@dataclass
class TargetStored:
    """New target confirms it holds the item; responsible nodes swap their
    relay entry over once they see this."""

    op_id: str
    key: str


@dataclass
class OldTargetRelease:
    """Drop a superseded copy, unless the node is itself a current target."""

    op_id: str
    key: str
    keep_targets: tuple[str, ...]


# --- recovery ----------------------------------------------------------------

@dataclass
class RollbackWrite:
    """Undo writes of a failed coordinator attempt (matched by op id)."""

    op_id: str
    key: str


@dataclass
class CleanupOp:
    """Remove target copies left behind by an abandoned attempt; matches
    any op id starting with ``op_prefix``."""

    key: str
    op_prefix: str


@dataclass
class BroadcastDelete:
    """Last-resort delete: every node drops the key from all its stores."""

    op_id: str
    key: str


# --- cluster metadata ---------------------------------------------------------

@dataclass
class CapabilityAnnounce:
    caps: NodeCapabilities
    seqno: int


@dataclass
class GossipSync:
    reported: Mapping[str, tuple[int, int]]


@dataclass
class GossipSyncReply:
    reported: Mapping[str, tuple[int, int]]


Message = (
    ClientRequest | ClientReply | DataWrite | WriteAck | ReadRequest | ReadReply
    | DeleteRequest | DeleteAck | TargetWrite | RelayWrite | RelayAck | ReadForward
    | DeleteForward | UpdateRequest | TargetUpdate | MoveInstruct | MoveData
    | TargetStored | OldTargetRelease | RollbackWrite | CleanupOp | BroadcastDelete
    | CapabilityAnnounce | GossipSync | GossipSyncReply
)

# background chatter: never blocks quiescence detection
BACKGROUND_KINDS = (GossipSync, GossipSyncReply)


def columns_bytes(columns: Mapping[str, bytes]) -> int:
    return sum(len(v) for v in columns.values())


def wire_size(msg: Message) -> int:
    """Rough on-the-wire size for traffic accounting: a fixed header plus
    key and column payload bytes."""
    size = 32
    key = getattr(msg, "key", None)
    if key is not None:
        size += len(key.encode("utf-8"))
    columns = getattr(msg, "columns", None)
    if columns:
        size += columns_bytes(columns) + 4 * len(columns)
    for attr in ("targets", "new_targets", "keep_targets"):
        ids = getattr(msg, attr, None)
        if ids:
            size += sum(len(n) for n in ids)
    reported = getattr(msg, "reported", None)
    if reported is not None:
        size += 20 * len(reported)
    return size
