import hashlib
import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tip.crypto import NodeIdentity
from tip.node import Node, NodeConfig
from tip.simnet import SimNetwork, SimTransport


def identity_for(name: str) -> NodeIdentity:
    return NodeIdentity.from_seed(hashlib.sha256(f"test:{name}".encode()).digest())


class Cluster:
    """A simulated network plus helpers to stamp out nodes."""

    def __init__(self, seed: int = 0, **net_kwargs):
        self.net = SimNetwork(seed=seed, **net_kwargs)
        self.seed = seed
        self.nodes: dict[str, Node] = {}

    def add(self, name: str, config: NodeConfig | None = None, registry=None,
            mdns: bool = True) -> Node:
        transport = SimTransport(self.net, name)
        node = Node(
            identity_for(f"{self.seed}:{name}"),
            transport,
            config or NodeConfig(),
            registry=registry,
            rng=random.Random(f"{self.seed}:{name}"),
        )
        if mdns:
            transport.join_group(node.config.mdns_group)
        self.nodes[name] = node
        return node

    def settle(self, ms: int = 1000) -> None:
        self.net.run_until_idle(max_time_us=self.net.now_us() + ms * 1000)

    def run_until(self, predicate, timeout_ms: int = 30_000):
        return self.net.run_until(predicate,
                                  max_time_us=self.net.now_us() + timeout_ms * 1000)


@pytest.fixture
def cluster():
    return Cluster()
