"""Deterministic workload streams and the posterior load-balance oracle.

Two synthetic experiment families mirror the load studies:

* throughput grid ("fig6"): ten nodes, two requirement types with two
  properties each supported by half the nodes, every insert demanding one
  property for one or both types, drawn uniformly from the eight valid
  combinations;
* placement fit ("fig7"): one hundred nodes split over five regions
  (64/17/16/2/1), every insert demanding exactly one region, with the
  demand distribution shifted away from the node distribution by 0..100%.

The same draw functions feed both the statement-level generator (full
protocol engine) and the load-focused fast simulator, so a seed means the
same stream everywhere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from random import Random

from .balance import load_balance_metric
from .dhr import DhrRegistry, DhrRequest
from .node import SECOND_NS
from .query import Delete, Insert, Select, Update
from .simnet import NodeSpec, Submission


class ParamError(Exception):
    pass


# --------------------------------------------------------------------------
# throughput-grid experiment (2 types x 2 properties over 10 nodes)
# --------------------------------------------------------------------------

GRID_REGISTRY = [
    {"id": "alpha", "kind": "equality", "domain": ["A1", "A2"]},
    {"id": "beta", "kind": "equality", "domain": ["B1", "B2"]},
]

# each property covers half the cluster; each combination lands on 2-3 nodes
_GRID_PROPERTIES = {
    "A1": {0, 1, 2, 3, 4},
    "A2": {5, 6, 7, 8, 9},
    "B1": {0, 1, 2, 5, 6},
    "B2": {3, 4, 7, 8, 9},
}

# demand one property of one type, or one of each type
GRID_COMBOS: list[dict[str, str]] = (
    [{"alpha": a} for a in ("A1", "A2")]
    + [{"beta": b} for b in ("B1", "B2")]
    + [{"alpha": a, "beta": b} for a in ("A1", "A2") for b in ("B1", "B2")]
)


def grid_node_specs() -> list[NodeSpec]:
    specs = []
    for i in range(10):
        caps: dict[str, list[str]] = {}
        for prop, members in _GRID_PROPERTIES.items():
            if i in members:
                type_id = "alpha" if prop.startswith("A") else "beta"
                caps.setdefault(type_id, []).append(prop)
        specs.append(NodeSpec(f"n{i}", "local", caps))
    return specs


def grid_eligible_sets() -> list[list[int]]:
    """Node indices eligible for each demand combination."""
    sets = []
    for combo in GRID_COMBOS:
        members = set(range(10))
        for prop in combo.values():
            members &= _GRID_PROPERTIES[prop]
        sets.append(sorted(members))
    return sets


# --------------------------------------------------------------------------
# placement-fit experiment (5 regions over 100 nodes)
# --------------------------------------------------------------------------

FIT_REGIONS = ("NA", "EU", "AP", "SA", "CN")
FIT_NODE_SHARE = (0.64, 0.17, 0.16, 0.02, 0.01)
# demand distribution once the largest region's share is removed entirely
FIT_FULL_SHIFT_SHARE = (0.0, 0.4761, 0.4473, 0.0574, 0.0191)

FIT_REGISTRY = [{"id": "location", "kind": "equality", "domain": list(FIT_REGIONS)}]


def fit_demand_distribution(shift: float) -> tuple[float, ...]:
    """Demand share per region when ``shift`` (0..1) of the biggest region's
    demand has been redistributed to the others.

    The endpoints are pinned to the published figures; intermediate shifts
    interpolate linearly, which keeps the biggest region's share at
    ``0.64 * (1 - shift)`` exactly.
    """
    if not 0.0 <= shift <= 1.0:
        raise ParamError(f"shift must be within [0, 1], got {shift}")
    return tuple(
        base + shift * (full - base)
        for base, full in zip(FIT_NODE_SHARE, FIT_FULL_SHIFT_SHARE)
    )


def fit_node_counts(total_nodes: int = 100) -> list[int]:
    counts = [round(share * total_nodes) for share in FIT_NODE_SHARE]
    if sum(counts) != total_nodes:
        raise ParamError(f"node share does not tile {total_nodes} nodes")
    return counts


def fit_node_specs(total_nodes: int = 100) -> list[NodeSpec]:
    counts = fit_node_counts(total_nodes)
    width = len(str(total_nodes - 1))
    specs = []
    idx = 0
    for region, count in zip(FIT_REGIONS, counts):
        for _ in range(count):
            specs.append(NodeSpec(f"n{idx:0{width}d}", "local", {"location": [region]}))
            idx += 1
    return specs


def fit_eligible_sets(total_nodes: int = 100) -> list[list[int]]:
    counts = fit_node_counts(total_nodes)
    sets = []
    start = 0
    for count in counts:
        sets.append(list(range(start, start + count)))
        start += count
    return sets


# --------------------------------------------------------------------------
# statement-level streams
# --------------------------------------------------------------------------

def _payload_columns(rng: Random, n_columns: int = 10, payload_bytes: int = 200) -> dict[str, bytes]:
    per = payload_bytes // n_columns
    return {f"c{i}": bytes(rng.randrange(97, 123) for _ in range(per)) for i in range(n_columns)}


def _draw_weighted(rng: Random, cumulative: list[float]) -> int:
    u = rng.random()
    for i, edge in enumerate(cumulative):
        if u < edge:
            return i
    return len(cumulative) - 1


def _cumulative(weights) -> list[float]:
    total = float(sum(weights))
    acc = 0.0
    out = []
    for w in weights:
        acc += w / total
        out.append(acc)
    return out


def grid_insert_stream(
    n_items: int, rate_per_s: float, seed: int, payload_bytes: int = 200
) -> list[Submission]:
    """Statement stream for the throughput-grid experiment (small scales)."""
    rng = Random(f"{seed}/grid")
    registry = DhrRegistry.from_json(GRID_REGISTRY)
    subs = []
    for i in range(n_items):
        combo = GRID_COMBOS[rng.randrange(len(GRID_COMBOS))]
        req = DhrRequest({t: frozenset({p}) for t, p in combo.items()})
        req.validate(registry)
        stmt = Insert(f"k{i:08d}", _payload_columns(rng, payload_bytes=payload_bytes), req)
        subs.append(Submission(int(i * SECOND_NS / rate_per_s), stmt))
    return subs


def fit_insert_stream(
    n_items: int, rate_per_s: float, shift: float, seed: int, payload_bytes: int = 200
) -> list[Submission]:
    rng = Random(f"{seed}/fit")
    cumulative = _cumulative(fit_demand_distribution(shift))
    subs = []
    for i in range(n_items):
        region = FIT_REGIONS[_draw_weighted(rng, cumulative)]
        req = DhrRequest({"location": frozenset({region})})
        stmt = Insert(f"k{i:08d}", _payload_columns(rng, payload_bytes=payload_bytes), req)
        subs.append(Submission(int(i * SECOND_NS / rate_per_s), stmt))
    return subs


def uniform_crud_stream(
    n_ops: int,
    rate_per_s: float,
    seed: int,
    key_space: int = 1000,
    mix: tuple[float, float, float, float] = (0.5, 0.3, 0.15, 0.05),
    payload_bytes: int = 200,
) -> list[Submission]:
    """Mixed requirement-free CRUD stream (insert/read/update/delete)."""
    rng = Random(f"{seed}/crud")
    cumulative = _cumulative(mix)
    subs = []
    for i in range(n_ops):
        key = f"k{rng.randrange(key_space):06d}"
        op = _draw_weighted(rng, cumulative)
        if op == 0:
            stmt = Insert(key, _payload_columns(rng, payload_bytes=payload_bytes), DhrRequest())
        elif op == 1:
            stmt = Select(key)
        elif op == 2:
            stmt = Update(key, {"c0": bytes(rng.randrange(97, 123) for _ in range(20))}, None)
        else:
            stmt = Delete(key)
        subs.append(Submission(int(i * SECOND_NS / rate_per_s), stmt))
    return subs


def microblog_stream(
    n_users: int,
    n_posts: int,
    seed: int,
    regions: tuple[str, ...] = FIT_REGIONS,
    read_fraction: float = 0.3,
) -> list[Submission]:
    """Scaled-down stand-in for a microblogging workload: every user sticks
    one uniformly chosen storage region to all their posts; reads fetch a
    random earlier post of a random user."""
    rng = Random(f"{seed}/blog")
    user_region = {u: regions[rng.randrange(len(regions))] for u in range(n_users)}
    posts: dict[int, list[str]] = {u: [] for u in range(n_users)}
    subs = []
    at = 0
    for i in range(n_posts):
        at = int(i * SECOND_NS / 1000)
        if rng.random() < read_fraction:
            candidates = [u for u, ps in posts.items() if ps]
            if candidates:
                u = candidates[rng.randrange(len(candidates))]
                subs.append(Submission(at, Select(posts[u][rng.randrange(len(posts[u]))])))
                continue
        u = rng.randrange(n_users)
        key = f"u{u:04d}.p{len(posts[u]):05d}"
        posts[u].append(key)
        req = DhrRequest({"location": frozenset({user_region[u]})})
        subs.append(Submission(at, Insert(key, _payload_columns(rng), req)))
    return subs


def workload_generate(kind: str, params: dict, seed: int) -> list[Submission]:
    """Dispatcher over the built-in statement streams."""
    try:
        if kind == "fig6-throughput":
            return grid_insert_stream(
                int(params["n_items"]), float(params["rate"]), seed,
                payload_bytes=int(params.get("payload_bytes", 200)),
            )
        if kind == "fig7-fit":
            return fit_insert_stream(
                int(params["n_items"]), float(params["rate"]), float(params["shift"]), seed,
                payload_bytes=int(params.get("payload_bytes", 200)),
            )
        if kind == "uniform-crud":
            return uniform_crud_stream(
                int(params["n_ops"]), float(params["rate"]), seed,
                key_space=int(params.get("key_space", 1000)),
                mix=tuple(params.get("mix", (0.5, 0.3, 0.15, 0.05))),
                payload_bytes=int(params.get("payload_bytes", 200)),
            )
        if kind == "synthetic-microblog":
            return microblog_stream(
                int(params.get("n_users", 50)), int(params["n_posts"]), seed,
                read_fraction=float(params.get("read_fraction", 0.3)),
            )
    except KeyError as exc:
        raise ParamError(f"missing parameter for {kind!r}: {exc}") from exc
    raise ParamError(f"unknown workload kind {kind!r}")


# --------------------------------------------------------------------------
# posterior optimum
# --------------------------------------------------------------------------

def optimal_balance_oracle(
    node_counts: list[int], items: list[int], integer: bool = False
) -> float:
    """Best achievable imbalance when each demand group may only use its own
    nodes: spread every group's items evenly over the group.

    With ``integer=True`` the even spread uses whole items (floor/ceil mix),
    which is the true optimum for indivisible items; the default fractional
    spread is the idealized lower bound.
    """
    if len(node_counts) != len(items):
        raise ParamError("node_counts and items must align")
    loads: list[float] = []
    for nodes, m in zip(node_counts, items):
        if nodes <= 0:
            raise ParamError("every group needs at least one node")
        if not integer:
            loads.extend([m / nodes] * nodes)
        else:
            q, rem = divmod(m, nodes)
            loads.extend([q + 1] * rem + [q] * (nodes - rem))
    return load_balance_metric(loads)


def brute_force_min_metric(node_counts: list[int], items: list[int]) -> float:
    """Exhaustive minimum of the balance metric over all integer assignments
    of each group's items to its nodes. Exponential; test-sized inputs only."""

    def compositions(total: int, parts: int):
        if parts == 1:
            yield (total,)
            return
        for head in range(total + 1):
            for rest in compositions(total - head, parts - 1):
                yield (head,) + rest

    best = None
    for combo in itertools.product(
        *(compositions(m, k) for k, m in zip(node_counts, items))
    ):
        loads = [x for group in combo for x in group]
        value = load_balance_metric(loads)
        if best is None or value < best:
            best = value
    assert best is not None
    return best
