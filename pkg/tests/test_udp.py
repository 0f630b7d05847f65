"""Integration over real loopback UDP: CoAP-framed TIP, bootstrap via
FIND_NODE, DHT publish, intent negotiation and an encrypted data exchange."""

import random
import threading
import time

from tip import orchestrator as orch
from tip.adapter import AdapterRegistry, parse_adapter_toml
from tip.model import Capability, DataSchema, Intent
from tip.node import Node, NodeConfig
from tip.scenario import PULSE_ADAPTER_U16
from tip.udp import UdpTransport

from conftest import identity_for

FILL = "machine:fluid:fill"


def udp_node(name: str, registry=None) -> tuple[Node, UdpTransport]:
    transport = UdpTransport("127.0.0.1:0")
    config = NodeConfig(
        early_cancel=False,           # no local-link bus over plain UDP
        discover_timeout_us=1_500_000,
        rpc_timeout_us=500_000,
        proposal_timeout_us=1_500_000,
        data_timeout_us=1_500_000,
    )
    node = Node(identity_for(f"udp:{name}"), transport, config, registry=registry,
                rng=random.Random(name))
    return node, transport


def test_udp_loopback_intent_exchange():
    registry = AdapterRegistry()
    registry.register(parse_adapter_toml(PULSE_ADAPTER_U16))

    provider, provider_transport = udp_node("provider")
    requester, requester_transport = udp_node("requester", registry=registry)
    provider_transport.start_thread()
    requester_transport.start_thread()
    try:
        capability = Capability(FILL, DataSchema.U16, "1.0.0", 0.995, 10.0)
        provider_transport.run_soon(
            lambda: provider.serve(capability, lambda params: int(params["volume_ml"] / 0.2))
        )

        # Bootstrap both directions, then publish the capability to the DHT.
        boot = {"requester": None, "provider": None}
        requester_transport.run_soon(
            lambda: requester.bootstrap(provider_transport.address,
                                        lambda ok: boot.__setitem__("requester", ok))
        )
        provider_transport.run_soon(
            lambda: provider.bootstrap(requester_transport.address,
                                       lambda ok: boot.__setitem__("provider", ok))
        )
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline and None in boot.values():
            time.sleep(0.02)
        assert boot == {"requester": True, "provider": True}

        published = []
        provider_transport.run_soon(
            lambda: provider.dht_publish(FILL, published.append)
        )
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline and not published:
            time.sleep(0.02)
        assert published and published[0] >= 1

        intent = Intent(
            capability_required=FILL,
            desired_schema=DataSchema.F32,
            params={"liquid": "water", "volume_ml": 500},
            constraints={"max_latency_ms": 1000, "min_precision": 0.99},
            weights={"func": 0.4, "cost": 0.2, "trust": 0.2, "avail": 0.2},
        )
        resolved = threading.Event()
        sessions = []

        def on_resolved(session):
            sessions.append(session)
            resolved.set()

        requester_transport.run_soon(
            lambda: sessions.append(orch.submit_intent(requester, intent,
                                                       on_resolved=on_resolved))
        )
        assert resolved.wait(20)
        session = sessions[0]
        assert session.state == orch.SessionState.ACTIVE, str(session.last_error)

        values: list = []
        got_value = threading.Event()

        def deliver(value):
            values.append(value)
            got_value.set()

        requester_transport.run_soon(
            lambda: orch.request_data(session, {"volume_ml": 500}, deliver,
                                      lambda exc: (values.append(exc), got_value.set()))
        )
        assert got_value.wait(10)
        assert values == [500.0]
    finally:
        provider_transport.close()
        requester_transport.close()
