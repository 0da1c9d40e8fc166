import json

import pytest
from hypothesis import given, strategies as st

from prada.dhr import (
    CapabilityStore,
    DhrError,
    DhrKind,
    DhrRegistry,
    DhrRequest,
    DhrType,
    NodeCapabilities,
    UnknownDhrType,
    UnknownProperty,
    eligible_nodes,
    node_is_eligible,
    property_satisfies,
)


def test_property_satisfies_equality(registry):
    loc = registry.get("location")
    assert property_satisfies(loc, "DE", "DE") is True
    assert property_satisfies(loc, "DE", "FR") is False


def test_property_satisfies_threshold(registry):
    enc = registry.get("encryption")
    assert property_satisfies(enc, 256, 192) is True
    assert property_satisfies(enc, 0, 192) is False
    assert property_satisfies(enc, 192, 192) is True


def test_property_satisfies_unknown_literal(registry):
    loc = registry.get("location")
    with pytest.raises(UnknownProperty):
        property_satisfies(loc, "XX", "DE")
    with pytest.raises(UnknownProperty):
        property_satisfies(loc, "DE", "XX")


def test_type_invariants():
    with pytest.raises(DhrError):
        DhrType("x", DhrKind.EQUALITY, ())
    with pytest.raises(DhrError):
        DhrType("x", DhrKind.EQUALITY, ("a", "a"))
    with pytest.raises(DhrError):
        DhrType("x", DhrKind.THRESHOLD, (128, 128))
    with pytest.raises(DhrError):
        DhrType("x", DhrKind.THRESHOLD, (256, 128))
    with pytest.raises(DhrError):
        DhrType("x", DhrKind.EQUALITY, ("a",), aliases={"b": "c"})


def test_alias_resolution(registry):
    enc = registry.get("encryption")
    assert enc.resolve("AES-256") == 256
    assert enc.resolve("192") == 192
    with pytest.raises(UnknownProperty):
        enc.resolve("AES-512")


def test_registry_lookup_and_roundtrip(registry):
    with pytest.raises(UnknownDhrType):
        registry.get("nope")
    doc = registry.to_json()
    again = DhrRegistry.from_json(json.dumps(doc))
    assert again.to_json() == doc


def test_request_validation(registry):
    req = DhrRequest({"location": {"DE", "FR"}})
    req.validate(registry)
    with pytest.raises(UnknownProperty):
        DhrRequest({"location": {"XX"}}).validate(registry)
    with pytest.raises(DhrError):
        DhrRequest({"location": set()})


def test_capabilities_threshold_collapses_to_max(registry):
    caps = NodeCapabilities("n0", {"encryption": {128, 256}}).validate(registry)
    assert caps.supported["encryption"] == frozenset({256})


def test_eligibility_paper_style_example(registry):
    caps = NodeCapabilities("n0", {"location": {"DE"}, "encryption": {256}}).validate(registry)
    req = DhrRequest({"location": {"DE", "FR", "UK"}, "encryption": {256}})
    assert node_is_eligible(caps, req, registry) is True


def test_eligibility_empty_request_matches_everything(registry):
    caps = NodeCapabilities("n0", {}).validate(registry)
    assert node_is_eligible(caps, DhrRequest(), registry) is True


def test_eligibility_one_failing_type_fails(registry):
    caps = NodeCapabilities("n0", {"location": {"US"}}).validate(registry)
    req = DhrRequest({"location": {"DE"}, "encryption": {256}})
    assert node_is_eligible(caps, req, registry) is False


def _store(registry, entries):
    store = CapabilityStore()
    for node_id, supported in entries.items():
        store.apply(NodeCapabilities(node_id, supported).validate(registry), 1)
    return store


def test_eligible_nodes_distinct_properties(registry):
    # ten nodes, one distinct location-ish property each via two types
    store = CapabilityStore()
    domain = ["DE", "FR", "UK", "US", "SG"]
    for i in range(10):
        caps = {"location": {domain[i % 5]}, "encryption": {128 if i < 5 else 256}}
        store.apply(NodeCapabilities(f"n{i}", caps).validate(registry), 1)
    req = DhrRequest({"location": {"DE", "FR", "UK"}})
    chosen = eligible_nodes(store, req, registry)
    assert chosen == sorted(
        n for n in store.node_ids()
        if store.get(n).supported["location"] & {"DE", "FR", "UK"}
    )


def test_eligible_nodes_grid(registry):
    # 2x2 capability grid, demand pins one property of each type
    store = _store(registry, {
        "n0": {"location": {"DE"}, "encryption": {128}},
        "n1": {"location": {"DE"}, "encryption": {256}},
        "n2": {"location": {"FR"}, "encryption": {128}},
        "n3": {"location": {"FR"}, "encryption": {256}},
    })
    req = DhrRequest({"location": {"DE"}, "encryption": {256}})
    assert eligible_nodes(store, req, registry) == ["n1"]


def test_eligible_nodes_empty_request_returns_all(registry):
    store = _store(registry, {"n1": {}, "n0": {}, "n2": {}})
    assert eligible_nodes(store, DhrRequest(), registry) == ["n0", "n1", "n2"]


def test_capability_store_last_writer_wins(registry):
    store = CapabilityStore()
    first = NodeCapabilities("n0", {"location": {"DE"}}).validate(registry)
    second = NodeCapabilities("n0", {"location": {"FR"}}).validate(registry)
    assert store.apply(first, 1)
    assert not store.apply(second, 1)  # same seqno: keep the first
    assert store.apply(second, 2)
    assert store.get("n0").supported["location"] == frozenset({"FR"})


def test_capability_store_serialization_is_canonical(registry):
    a = _store(registry, {"n1": {"location": {"DE"}}, "n0": {"encryption": {128}}})
    b = CapabilityStore()
    b.apply(NodeCapabilities("n0", {"encryption": {128}}).validate(registry), 1)
    b.apply(NodeCapabilities("n1", {"location": {"DE"}}).validate(registry), 1)
    assert a.serialize() == b.serialize()


# --- property-based checks ----------------------------------------------------

_TYPE_IDS = ["t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7"]
_PROPS = ["p0", "p1", "p2", "p3", "p4", "p5", "p6", "p7"]


def _random_registry() -> DhrRegistry:
    return DhrRegistry(
        [DhrType(t, DhrKind.EQUALITY, tuple(_PROPS)) for t in _TYPE_IDS]
    )


_REG = _random_registry()

_demands = st.dictionaries(
    st.sampled_from(_TYPE_IDS),
    st.frozensets(st.sampled_from(_PROPS), min_size=1, max_size=8),
    max_size=8,
)
_supported = st.dictionaries(
    st.sampled_from(_TYPE_IDS),
    st.frozensets(st.sampled_from(_PROPS), max_size=8),
    max_size=8,
)


@given(caps=_supported, demands=_demands)
def test_eligibility_matches_cnf_bruteforce(caps, demands):
    node = NodeCapabilities("n", caps)
    req = DhrRequest(demands)
    # conjunction over demanded types, disjunction over demanded properties
    expected = all(
        any(p in caps.get(t, frozenset()) for p in props)
        for t, props in demands.items()
    )
    assert node_is_eligible(node, req, _REG) is expected


@given(caps=_supported, demands=_demands,
       type_id=st.sampled_from(_TYPE_IDS), prop=st.sampled_from(_PROPS))
def test_enlarging_a_demanded_set_never_shrinks_eligibility(caps, demands, type_id, prop):
    node = NodeCapabilities("n", caps)
    before = node_is_eligible(node, DhrRequest(demands), _REG)
    if type_id not in demands:
        return
    enlarged = dict(demands)
    enlarged[type_id] = demands[type_id] | {prop}
    after = node_is_eligible(node, DhrRequest(enlarged), _REG)
    assert after >= before  # True never degrades to False


@given(caps=_supported, demands=_demands,
       type_id=st.sampled_from(_TYPE_IDS), prop=st.sampled_from(_PROPS))
def test_adding_a_demanded_type_never_grows_eligibility(caps, demands, type_id, prop):
    node = NodeCapabilities("n", caps)
    before = node_is_eligible(node, DhrRequest(demands), _REG)
    if type_id in demands:
        return
    extended = dict(demands)
    extended[type_id] = frozenset({prop})
    after = node_is_eligible(node, DhrRequest(extended), _REG)
    assert after <= before


@given(caps_by_node=st.dictionaries(
    st.sampled_from([f"n{i}" for i in range(6)]), _supported, max_size=6,
), demands=_demands)
def test_eligible_nodes_is_pure(caps_by_node, demands):
    store = CapabilityStore()
    for node_id, caps in caps_by_node.items():
        store.apply(NodeCapabilities(node_id, caps), 1)
    req = DhrRequest(demands)
    first = eligible_nodes(store, req, _REG)
    second = eligible_nodes(store, req, _REG)
    assert first == second == sorted(first)
