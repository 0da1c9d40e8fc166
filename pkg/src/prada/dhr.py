"""Data handling requirement (DHR) model: requirement types, per-item demands,
node capabilities, and eligibility computation.

A requirement type pairs a domain of admissible properties with a comparison
rule. Two rules cover the supported requirements:

* ``EQUALITY``: a node satisfies a demanded property by offering exactly it
  (storage locations, medium traits).
* ``THRESHOLD``: properties are ordered levels; a node satisfies a demand by
  offering at least the demanded level (encryption strength, retention
  enforcement).

Everything in this module is immutable and free of side effects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

Property = str | int


class DhrError(Exception):
    """Base class for requirement-model errors."""


class UnknownDhrType(DhrError):
    def __init__(self, type_id: str):
        super().__init__(f"unknown requirement type: {type_id!r}")
        self.type_id = type_id


class UnknownProperty(DhrError):
    def __init__(self, type_id: str, prop: Property):
        super().__init__(f"property {prop!r} not in domain of type {type_id!r}")
        self.type_id = type_id
        self.prop = prop


class DhrKind(Enum):
    EQUALITY = "equality"
    THRESHOLD = "threshold"


@dataclass(frozen=True)
class DhrType:
    """A requirement type: identifier, comparison kind, and property domain.

    For THRESHOLD types the domain is a strictly increasing sequence of
    non-negative integer levels. ``aliases`` maps query-literal spellings
    (e.g. ``'AES-256'``) onto domain members.
    """

    id: str
    kind: DhrKind
    domain: tuple[Property, ...]
    aliases: Mapping[str, Property] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise DhrError("requirement type id must be non-empty")
        if not self.domain:
            raise DhrError(f"type {self.id!r}: property domain must be non-empty")
        if len(set(self.domain)) != len(self.domain):
            raise DhrError(f"type {self.id!r}: property domain has duplicates")
        if self.kind is DhrKind.THRESHOLD:
            if not all(isinstance(p, int) and p >= 0 for p in self.domain):
                raise DhrError(f"type {self.id!r}: threshold domain must be non-negative integers")
            if any(a >= b for a, b in zip(self.domain, self.domain[1:])):
                raise DhrError(f"type {self.id!r}: threshold domain must be strictly increasing")
        for alias, target in self.aliases.items():
            if target not in self.domain:
                raise DhrError(f"type {self.id!r}: alias {alias!r} maps outside the domain")

    def resolve(self, literal: str) -> Property:
        """Map a query literal onto a domain member.

        Tries the alias table first, then the literal itself (with integer
        conversion for threshold types). Raises UnknownProperty otherwise.
        """
        if literal in self.aliases:
            return self.aliases[literal]
        candidate: Property = literal
        if self.kind is DhrKind.THRESHOLD:
            try:
                candidate = int(literal)
            except ValueError:
                raise UnknownProperty(self.id, literal) from None
        if candidate not in self.domain:
            raise UnknownProperty(self.id, candidate)
        return candidate


class DhrRegistry:
    """Lookup table of requirement types known to the cluster."""

    def __init__(self, types: Iterable[DhrType]):
        self._types: dict[str, DhrType] = {}
        for t in types:
            if t.id in self._types:
                raise DhrError(f"duplicate requirement type {t.id!r}")
            self._types[t.id] = t

    def __iter__(self):
        return iter(self._types.values())

    def __contains__(self, type_id: str) -> bool:
        return type_id in self._types

    def get(self, type_id: str) -> DhrType:
        try:
            return self._types[type_id]
        except KeyError:
            raise UnknownDhrType(type_id) from None

    @classmethod
    def from_json(cls, doc: str | list) -> "DhrRegistry":
        """Load a registry from its JSON document form.

        Expected shape::

            [{"id": "location", "kind": "equality", "domain": ["DE", "FR"]},
             {"id": "encryption", "kind": "threshold", "domain": [0, 128, 256],
              "aliases": {"AES-256": 256}}]
        """
        entries = json.loads(doc) if isinstance(doc, str) else doc
        types = []
        for e in entries:
            types.append(
                DhrType(
                    id=e["id"],
                    kind=DhrKind(e["kind"]),
                    domain=tuple(e["domain"]),
                    aliases=dict(e.get("aliases", {})),
                )
            )
        return cls(types)

    def to_json(self) -> list:
        return [
            {
                "id": t.id,
                "kind": t.kind.value,
                "domain": list(t.domain),
                **({"aliases": dict(t.aliases)} if t.aliases else {}),
            }
            for t in self
        ]


@dataclass(frozen=True)
class DhrRequest:
    """A client's per-item demands: requirement type id -> requested properties.

    An item satisfies its demands on a node when, for every demanded type,
    the node offers at least one of the requested properties. An empty
    request means the item has no requirements at all.
    """

    demands: Mapping[str, frozenset[Property]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "demands", {t: frozenset(ps) for t, ps in self.demands.items()}
        )
        for t, ps in self.demands.items():
            if not ps:
                raise DhrError(f"demand for type {t!r} must be non-empty")

    def __bool__(self) -> bool:
        return bool(self.demands)

    def validate(self, registry: DhrRegistry) -> None:
        for type_id, props in self.demands.items():
            dhr_type = registry.get(type_id)
            for p in props:
                if p not in dhr_type.domain:
                    raise UnknownProperty(type_id, p)

    def to_json(self) -> dict:
        return {t: sorted(ps, key=str) for t, ps in sorted(self.demands.items())}

    @classmethod
    def from_json(cls, doc: Mapping) -> "DhrRequest":
        return cls({t: frozenset(ps) for t, ps in doc.items()})


EMPTY_REQUEST = DhrRequest()


@dataclass(frozen=True)
class NodeCapabilities:
    """Properties a node advertises, per requirement type.

    THRESHOLD types keep the single maximum level the node supports; the
    constructor normalizes whatever was supplied down to that maximum.
    """

    node_id: str
    supported: Mapping[str, frozenset[Property]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "supported", {t: frozenset(ps) for t, ps in self.supported.items()}
        )

    def validate(self, registry: DhrRegistry) -> "NodeCapabilities":
        """Check every advertised property against the registry and collapse
        threshold types to their maximum level."""
        normalized: dict[str, frozenset[Property]] = {}
        for type_id, props in self.supported.items():
            dhr_type = registry.get(type_id)
            for p in props:
                if p not in dhr_type.domain:
                    raise UnknownProperty(type_id, p)
            if dhr_type.kind is DhrKind.THRESHOLD and props:
                normalized[type_id] = frozenset({max(props)})  # type: ignore[type-var]
            else:
                normalized[type_id] = frozenset(props)
        return NodeCapabilities(self.node_id, normalized)

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "supported": {t: sorted(ps, key=str) for t, ps in sorted(self.supported.items())},
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "NodeCapabilities":
        return cls(doc["node_id"], {t: frozenset(ps) for t, ps in doc["supported"].items()})


def property_satisfies(dhr_type: DhrType, offered: Property, demanded: Property) -> bool:
    """Does an offered property satisfy a demanded one of the same type?

    EQUALITY compares for identity; THRESHOLD accepts any offered level at
    or above the demanded one. Both literals must be domain members.
    """
    if offered not in dhr_type.domain:
        raise UnknownProperty(dhr_type.id, offered)
    if demanded not in dhr_type.domain:
        raise UnknownProperty(dhr_type.id, demanded)
    if dhr_type.kind is DhrKind.EQUALITY:
        return offered == demanded
    return offered >= demanded  # type: ignore[operator]


def node_is_eligible(caps: NodeCapabilities, req: DhrRequest, registry: DhrRegistry) -> bool:
    """True iff the node offers, for every demanded type, at least one
    property satisfying one of the demanded ones. Empty requests match
    every node."""
    for type_id, demanded_set in req.demands.items():
        dhr_type = registry.get(type_id)
        offered_set = caps.supported.get(type_id, frozenset())
        if not any(
            property_satisfies(dhr_type, offered, demanded)
            for offered in offered_set
            for demanded in demanded_set
        ):
            return False
    return True


class CapabilityStore:
    """Globally replicated view of node capabilities.

    Entries carry a sequence number so re-announcements (a node rejoining
    with changed capabilities) resolve by last writer wins.
    """

    def __init__(self):
        self._entries: dict[str, tuple[int, NodeCapabilities]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._entries

    def node_ids(self) -> list[str]:
        return sorted(self._entries)

    def get(self, node_id: str) -> NodeCapabilities:
        return self._entries[node_id][1]

    def apply(self, caps: NodeCapabilities, seqno: int) -> bool:
        """Merge an announcement; returns True if it superseded the stored one."""
        current = self._entries.get(caps.node_id)
        if current is not None and current[0] >= seqno:
            return False
        self._entries[caps.node_id] = (seqno, caps)
        return True

    def serialize(self) -> str:
        return json.dumps(
            [
                {"seqno": seqno, **caps.to_json()}
                for seqno, caps in (self._entries[n] for n in sorted(self._entries))
            ],
            sort_keys=True,
            separators=(",", ":"),
        )

    def copy(self) -> "CapabilityStore":
        dup = CapabilityStore()
        dup._entries = dict(self._entries)
        return dup


def eligible_nodes(all_caps: CapabilityStore, req: DhrRequest, registry: DhrRegistry) -> list[str]:
    """Node ids whose capabilities satisfy the request, ordered by node id
    so that repeated evaluations are byte-identical."""
    return [
        node_id
        for node_id in all_caps.node_ids()
        if node_is_eligible(all_caps.get(node_id), req, registry)
    ]
