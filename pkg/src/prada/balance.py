"""Cluster load dissemination and balanced target selection.

Each node keeps a view of every peer's storage load: the last load figure
the peer reported (spread via gossip) plus a local in-flight estimator for
bytes this node has seen heading to that peer since the report. The
estimator bridges the window between two load reports, so target selection
reacts to inserts faster than the gossip cadence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt
from typing import Iterable, Mapping, Sequence

SECOND_NS = 1_000_000_000


@dataclass
class GossipConfig:
    """Cadence of load dissemination.

    Per default every node syncs its load table with one random peer each
    second and refreshes its own load figure once a minute; both timers
    start at a per-node random offset so the cluster never beats in
    lockstep.
    """

    sync_interval_ns: int = SECOND_NS
    load_refresh_ns: int = 60 * SECOND_NS
    enabled: bool = True

    def __post_init__(self):
        if self.sync_interval_ns <= 0 or self.load_refresh_ns <= 0:
            raise ValueError("gossip intervals must be positive")


class LoadView:
    """One node's knowledge of per-node storage loads.

    ``reported`` holds (load_bytes, report_time) per node, merged by
    freshest report time. ``estimators`` holds bytes locally known to be
    in flight to a node since its last report; a strictly newer report
    resets the estimator.
    """

    def __init__(self, node_ids: Iterable[str]):
        self.reported: dict[str, tuple[int, int]] = {n: (0, 0) for n in node_ids}
        self.estimators: dict[str, int] = {n: 0 for n in node_ids}

    def effective_load(self, node_id: str) -> int:
        return self.reported[node_id][0] + self.estimators[node_id]

    def note_pending(self, node_id: str, nbytes: int) -> None:
        self.estimators[node_id] += nbytes

    def refresh_own(self, node_id: str, load_bytes: int, now_ns: int) -> None:
        self.reported[node_id] = (load_bytes, now_ns)
        self.estimators[node_id] = 0

    def merge_reported(self, incoming: Mapping[str, tuple[int, int]]) -> None:
        """Fold a peer's reported map into ours, freshest report wins."""
        reported = self.reported
        estimators = self.estimators
        for node_id, entry in incoming.items():
            if entry[1] > reported[node_id][1]:
                reported[node_id] = entry
                estimators[node_id] = 0

    def snapshot_reported(self) -> dict[str, tuple[int, int]]:
        return dict(self.reported)


def load_balance_metric(loads: Sequence[float]) -> float:
    """Normalized load imbalance: population standard deviation of the
    per-node loads divided by their mean. 0 means perfectly even; an
    all-zero cluster counts as balanced."""
    n = len(loads)
    if n == 0:
        raise ValueError("need at least one load value")
    mean = sum(loads) / n
    if mean == 0:
        return 0.0
    var = sum((x - mean) ** 2 for x in loads) / n
    return sqrt(var) / mean


@dataclass
class Selection:
    targets: list[str]
    degraded: bool = False


def select_targets(
    eligible: Sequence[str],
    responsible: Sequence[str],
    r: int,
    view: LoadView,
    item_bytes: int = 0,
) -> Selection:
    """Pick up to r target nodes from the eligible set.

    Eligible nodes that are also responsible for the key come first (in
    ring-walk order) since storing there avoids the indirection hop
    entirely; the rest fill up by ascending effective load, ties broken by
    node id. Returns fewer than r targets (flagged degraded) when the
    eligible set is too small. When ``item_bytes`` is given, the caller's
    estimator is bumped for every chosen node.
    """
    if not eligible:
        raise ValueError("eligible set must be non-empty")
    eligible_set = set(eligible)
    chosen = [n for n in responsible if n in eligible_set][:r]
    if len(chosen) < r:
        chosen_set = set(chosen)
        rest = sorted(
            (n for n in eligible if n not in chosen_set),
            key=lambda n: (view.effective_load(n), n),
        )
        chosen.extend(rest[: r - len(chosen)])
    if item_bytes:
        for n in chosen:
            view.note_pending(n, item_bytes)
    return Selection(chosen, degraded=len(chosen) < r)
