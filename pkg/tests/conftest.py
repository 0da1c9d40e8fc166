import hypothesis
import pytest

from prada.balance import GossipConfig
from prada.dhr import DhrRegistry, DhrRequest
from prada.node import EngineParams
from prada.simnet import NodeSpec, SimConfig, Simulation, Topology

hypothesis.settings.register_profile(
    "suite", max_examples=60, deadline=None,
    suppress_health_check=[hypothesis.HealthCheck.too_slow],
)
hypothesis.settings.load_profile("suite")


REGISTRY_DOC = [
    {
        "id": "location",
        "kind": "equality",
        "domain": ["DE", "FR", "UK", "US", "SG"],
    },
    {
        "id": "encryption",
        "kind": "threshold",
        "domain": [0, 128, 192, 256],
        "aliases": {"AES-128": 128, "AES-192": 192, "AES-256": 256},
    },
    {
        "id": "max-lifetime",
        "kind": "threshold",
        "domain": [30, 60, 3600, 86400],
    },
]


@pytest.fixture
def registry() -> DhrRegistry:
    return DhrRegistry.from_json(REGISTRY_DOC)


# ten nodes, two locations, mixed encryption levels; n9 is the only DE+256 node
TEN_NODE_CAPS = {
    f"n{i}": {
        "location": ["DE" if i >= 5 else "FR"],
        "encryption": [256 if i in (2, 4, 9) else 128],
    }
    for i in range(10)
}


def make_sim(
    caps_by_node: dict | None = None,
    r: int = 1,
    mode: str = "prada",
    rtt_ms: float = 100.0,
    seed: int = 5,
    gossip: bool = True,
    registry_doc: list | None = None,
    **config_kw,
) -> Simulation:
    caps_by_node = caps_by_node if caps_by_node is not None else TEN_NODE_CAPS
    nodes = [NodeSpec(nid, "local", caps) for nid, caps in caps_by_node.items()]
    config = SimConfig(
        nodes=nodes,
        registry=DhrRegistry.from_json(registry_doc or REGISTRY_DOC),
        params=EngineParams(r=r, mode=mode, gossip=GossipConfig(enabled=gossip)),
        topology=Topology("uniform", rtt_ms=rtt_ms),
        collect_traces=True,
        **config_kw,
    )
    return Simulation(config, seed)


def columns_10x20() -> dict[str, bytes]:
    return {f"c{i}": b"x" * 20 for i in range(10)}


def req_of(**demands) -> DhrRequest:
    return DhrRequest({k.replace("_", "-"): frozenset(v) for k, v in demands.items()})
