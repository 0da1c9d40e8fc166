"""Direct transition tests for the per-node storage state machine."""

from random import Random

import pytest

from prada.balance import GossipConfig
from prada.dhr import DhrRegistry, DhrRequest, NodeCapabilities
from prada.messages import (
    DataWrite,
    DeleteRequest,
    ReadForward,
    ReadReply,
    ReadRequest,
    RelayWrite,
    TargetWrite,
)
from prada.node import (
    EngineParams,
    NodeState,
    RelayEntry,
    expiry_for,
    local_apply,
)
from prada.ring import TokenRing

from conftest import REGISTRY_DOC


class Ctx:
    def __init__(self, registry, params, now_ns=0):
        self.now_ns = now_ns
        self.rng = Random(0)
        self.params = params
        self.registry = registry
        self.timers = []

    def set_timer(self, node_id, at_ns, kind, payload):
        self.timers.append((node_id, at_ns, kind, payload))


@pytest.fixture
def ctx(registry):
    return Ctx(registry, EngineParams(r=1, gossip=GossipConfig(enabled=False)))


@pytest.fixture
def state(ctx):
    ring = TokenRing.equal_spaced([f"n{i}" for i in range(4)])
    caps = NodeCapabilities("n0", {"location": {"DE"}})
    return NodeState("n0", ring, caps, ctx.params)


def test_read_of_held_key_replies_directly(state, ctx):
    local_apply(state, DataWrite("op1", "k", {"c": b"v"}, True, "coord"), "coord", ctx)
    out = local_apply(state, ReadRequest("op2", "k", "coord"), "coord", ctx)
    assert len(out) == 1
    dst, reply = out[0]
    assert dst == "coord" and isinstance(reply, ReadReply)
    assert reply.found and reply.columns == {"c": b"v"}


def test_read_of_relayed_key_forwards_to_every_target(state, ctx):
    state.relay_store["k"] = RelayEntry("k", ("n2", "n3"), DhrRequest(), "op0")
    out = local_apply(state, ReadRequest("op1", "k", "coord"), "coord", ctx)
    assert [(dst, type(m).__name__) for dst, m in out] == [
        ("n2", "ReadForward"),
        ("n3", "ReadForward"),
    ]


def test_read_of_unknown_key_reports_not_found(state, ctx):
    out = local_apply(state, ReadRequest("op1", "k", "coord"), "coord", ctx)
    ((dst, reply),) = out
    assert dst == "coord" and reply.found is False


def test_target_copy_served_without_relay_hop(state, ctx):
    # the responsible node is itself the target: data comes straight back
    local_apply(state, TargetWrite("op1", "k", {"c": b"v"}, DhrRequest(), "x"), "x", ctx)
    state.relay_store["k"] = RelayEntry("k", ("n0",), DhrRequest(), "op1")
    out = local_apply(state, ReadRequest("op2", "k", "coord"), "coord", ctx)
    ((dst, reply),) = out
    assert dst == "coord" and reply.found


def test_duplicate_read_forwards_answered_once(state, ctx):
    local_apply(state, TargetWrite("op1", "k", {"c": b"v"}, DhrRequest(), "x"), "x", ctx)
    first = local_apply(state, ReadForward("op2", "k", "coord"), "n1", ctx)
    second = local_apply(state, ReadForward("op2", "k", "coord"), "n2", ctx)
    assert len(first) == 1 and second == []


def test_relay_write_replaces_standard_copy(state, ctx):
    local_apply(state, DataWrite("op1", "k", {"c": b"v"}, True, "coord"), "coord", ctx)
    local_apply(state, RelayWrite("op2", "k", ("n2",), DhrRequest(), "coord"), "coord", ctx)
    assert "k" not in state.data_store
    assert state.relay_store["k"].targets == ("n2",)


def test_plain_insert_supersedes_relay_and_releases_old_targets(state, ctx):
    # n0 is the first responsible node for this constructed entry
    key = next(k for k in (f"k{i}" for i in range(200))
               if state.ring.responsible_nodes(k, 1)[0] == "n0")
    state.relay_store[key] = RelayEntry(key, ("n2", "n3"), DhrRequest(), "op0")
    out = local_apply(state, DataWrite("op1", key, {"c": b"v"}, True, "coord"), "coord", ctx)
    kinds = sorted((dst, type(m).__name__) for dst, m in out)
    assert ("n2", "OldTargetRelease") in kinds and ("n3", "OldTargetRelease") in kinds
    assert key in state.data_store and key not in state.relay_store


def test_version_increases_on_every_write(state, ctx):
    local_apply(state, DataWrite("op1", "k", {"c": b"1"}, True, "coord"), "coord", ctx)
    local_apply(state, DataWrite("op2", "k", {"c": b"2"}, False, "coord"), "coord", ctx)
    local_apply(state, DataWrite("op3", "k", {"d": b"3"}, False, "coord"), "coord", ctx)
    item = state.data_store["k"]
    assert item.version == 3
    assert item.columns == {"c": b"2", "d": b"3"}


def test_delete_of_relayed_key_forwards_and_drops_reference(state, ctx):
    state.relay_store["k"] = RelayEntry("k", ("n2",), DhrRequest(), "op0")
    out = local_apply(state, DeleteRequest("op1", "k", "coord"), "coord", ctx)
    assert [(dst, type(m).__name__) for dst, m in out] == [("n2", "DeleteForward")]
    assert "k" not in state.relay_store


def test_relay_entry_size_is_payload_independent(registry):
    req = DhrRequest({"location": {"DE"}, "encryption": {256}})
    small = RelayEntry("k" * 20, ("n1", "n2"), req, "op1")
    large = RelayEntry("k" * 20, ("n1", "n2"), req, "op2")
    assert len(small.serialized()) == len(large.serialized())
    # and no column data can sneak in: entries only know key, targets, dhr
    assert b"columns" not in small.serialized()


def test_relay_entry_size_grows_per_target():
    req = DhrRequest({"location": {"DE"}})
    sizes = [
        len(RelayEntry("k" * 20, tuple(f"n{i}" for i in range(r)), req, "op").serialized())
        for r in (1, 2, 3)
    ]
    assert sizes[1] - sizes[0] == sizes[2] - sizes[1] > 0


def test_expiry_from_strictest_demanded_lifetime(registry):
    req = DhrRequest({"max-lifetime": {60, 3600}})
    assert expiry_for(req, 1_000) == 1_000 + 60 * 10**9
    assert expiry_for(DhrRequest(), 1_000) is None


def test_stored_payload_accounts_key_and_columns(state, ctx):
    local_apply(state, DataWrite("op1", "kk", {"c": b"x" * 10}, True, "coord"), "coord", ctx)
    assert state.stored_payload_bytes() == 2 + 10
