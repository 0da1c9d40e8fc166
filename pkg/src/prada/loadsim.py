"""Load-focused fast simulator for the balance experiments.

The load studies need millions of inserts, where only placement matters:
which target each insert lands on given gossip-fresh load knowledge. This
simulator keeps the full placement semantics of the protocol engine (hash
ring responsibility, responsible-first target choice, least effective load
with per-coordinator in-flight estimators, gossip sync each second, load
report refresh each minute, per-node random initial offsets) but skips
message-level delivery: a gossip sync merges the two views directly.

Every insert counts one load unit; the balance metric is scale-free, so
item size cancels out.
"""

from __future__ import annotations

import heapq
from bisect import bisect_left
from dataclasses import dataclass, field
from random import Random

from .balance import load_balance_metric


@dataclass
class LoadSimResult:
    final_loads: list[int]  # items per node
    metric: float
    combo_counts: list[int]  # inserts drawn per demand combination
    series: list[tuple[float, float]] = field(default_factory=list)  # (t_s, metric)
    direct_hits: int = 0  # inserts stored on an eligible responsible node


def simulate_load_balance(
    n_nodes: int,
    eligible_sets: list[list[int]],
    combo_weights: list[float] | None,
    n_items: int,
    rate_per_s: float,
    seed: int,
    sync_interval_s: float = 1.0,
    load_refresh_s: float = 60.0,
    sample_interval_s: float = 0.0,
) -> LoadSimResult:
    """Insert ``n_items`` at ``rate_per_s``, each demanding one combination
    drawn from ``combo_weights`` (uniform when None), and report the final
    per-node load distribution."""
    rng = Random(f"{seed}/loadsim")
    n = n_nodes
    nodes = range(n)

    # per-view state, indexed [viewer][subject]
    reported = [[0] * n for _ in nodes]
    rep_time = [[0.0] * n for _ in nodes]
    est = [[0] * n for _ in nodes]
    true_load = [0] * n

    # equally spaced ring tokens; owner of token i is node i
    tokens = [(i << 64) // n for i in range(n)]
    two64 = 1 << 64

    member_flags = [[False] * n for _ in eligible_sets]
    for ci, members in enumerate(eligible_sets):
        if not members:
            raise ValueError(f"combination {ci} has no eligible nodes")
        for j in members:
            member_flags[ci][j] = True

    if combo_weights is None:
        cumulative = None
    else:
        total = float(sum(combo_weights))
        acc = 0.0
        cumulative = []
        for w in combo_weights:
            acc += w / total
            cumulative.append(acc)

    # (time, seq, kind, node); kind 0 = gossip sync, 1 = load refresh
    events: list[tuple[float, int, int, int]] = []
    seq = 0
    for i in nodes:
        seq += 1
        events.append((rng.random() * sync_interval_s, seq, 0, i))
        seq += 1
        events.append((rng.random() * load_refresh_s, seq, 1, i))
    heapq.heapify(events)

    combo_counts = [0] * len(eligible_sets)
    series: list[tuple[float, float]] = []
    next_sample = sample_interval_s if sample_interval_s else float("inf")
    direct_hits = 0

    rnd = rng.random
    grb = rng.getrandbits
    rr = rng.randrange
    n_combos = len(eligible_sets)

    def merge(a: int, b: int) -> None:
        ra, ta, ea = reported[a], rep_time[a], est[a]
        rb, tb, eb = reported[b], rep_time[b], est[b]
        for j in nodes:
            if tb[j] > ta[j]:
                ra[j] = rb[j]
                ta[j] = tb[j]
                ea[j] = 0
            elif ta[j] > tb[j]:
                rb[j] = ra[j]
                tb[j] = ta[j]
                eb[j] = 0

    def handle_events_until(t: float) -> None:
        nonlocal seq
        while events and events[0][0] <= t:
            when, _, kind, i = heapq.heappop(events)
            if kind == 0:
                peer = rr(n - 1)
                if peer >= i:
                    peer += 1
                merge(i, peer)
                seq += 1
                heapq.heappush(events, (when + sync_interval_s, seq, 0, i))
            else:
                reported[i][i] = true_load[i]
                rep_time[i][i] = when
                est[i][i] = 0
                seq += 1
                heapq.heappush(events, (when + load_refresh_s, seq, 1, i))

    for item in range(n_items):
        now = item / rate_per_s
        handle_events_until(now)
        if now >= next_sample:
            series.append((next_sample, load_balance_metric(true_load)))
            next_sample += sample_interval_s

        combo = rr(n_combos) if cumulative is None else _draw(cumulative, rnd())
        combo_counts[combo] += 1
        coordinator = rr(n)

        # responsible node for a fresh random key
        token = grb(64)
        resp = bisect_left(tokens, token)
        if resp == n:
            resp = 0

        if member_flags[combo][resp]:
            target = resp  # responsible node complies: no indirection needed
            direct_hits += 1
        else:
            rep_c = reported[coordinator]
            est_c = est[coordinator]
            best = -1
            best_load = None
            for j in eligible_sets[combo]:
                load = rep_c[j] + est_c[j]
                if best_load is None or load < best_load:
                    best_load = load
                    best = j
            target = best

        est[coordinator][target] += 1
        if target != coordinator:
            est[target][target] += 1
        true_load[target] += 1

    return LoadSimResult(
        final_loads=true_load,
        metric=load_balance_metric(true_load),
        combo_counts=combo_counts,
        series=series,
        direct_hits=direct_hits,
    )


def _draw(cumulative: list[float], u: float) -> int:
    lo, hi = 0, len(cumulative) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if u < cumulative[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo
