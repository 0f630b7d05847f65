import random
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from tip import coap
from tip.simnet import SimNetwork


class TestCoap:
    def test_wrap_unwrap_roundtrip(self):
        frame = bytes(range(200))
        assert coap.coap_unwrap(coap.coap_wrap(frame)) == frame

    @given(st.binary(min_size=1, max_size=2048))
    @settings(max_examples=50)
    def test_roundtrip_property(self, frame):
        assert coap.coap_unwrap(coap.coap_wrap(frame)) == frame

    def test_content_format_option_is_42(self):
        msg = coap.decode_message(coap.coap_wrap(b"x"))
        values = [v for n, v in msg.options if n == coap.OPT_CONTENT_FORMAT]
        assert values == [b"\x2a"]
        assert int.from_bytes(values[0], "big") == 42

    def test_uri_path_option_is_tip(self):
        msg = coap.decode_message(coap.coap_wrap(b"x"))
        values = [v for n, v in msg.options if n == coap.OPT_URI_PATH]
        assert values == [b"tip"]

    def test_wrap_is_confirmable_post(self):
        msg = coap.decode_message(coap.coap_wrap(b"x"))
        assert msg.type == coap.TYPE_CON
        assert msg.code == coap.CODE_POST
        assert msg.version == 1
        assert len(msg.token) == 4

    def test_wrong_path(self):
        msg = coap.CoapMessage(
            options=[(coap.OPT_URI_PATH, b"other"),
                     (coap.OPT_CONTENT_FORMAT, b"\x2a")],
            payload=b"x",
        )
        with pytest.raises(coap.WrongPath):
            coap.coap_unwrap(coap.encode_message(msg))

    def test_wrong_content_format(self):
        msg = coap.CoapMessage(
            options=[(coap.OPT_URI_PATH, b"tip"), (coap.OPT_CONTENT_FORMAT, b"\x32")],
            payload=b"x",
        )
        with pytest.raises(coap.WrongContentFormat):
            coap.coap_unwrap(coap.encode_message(msg))

    def test_no_payload(self):
        msg = coap.CoapMessage(
            options=[(coap.OPT_URI_PATH, b"tip"), (coap.OPT_CONTENT_FORMAT, b"\x2a")],
        )
        with pytest.raises(coap.NoPayload):
            coap.coap_unwrap(coap.encode_message(msg))

    def test_not_coap(self):
        with pytest.raises(coap.NotCoap):
            coap.coap_unwrap(b"\x00\x01")
        with pytest.raises(coap.NotCoap):
            coap.coap_unwrap(b"\xff" * 8)  # version 3

    def test_option_delta_extended_encodings(self):
        # Deltas of 13..268 and 269+ take the extended forms; roundtrip both.
        msg = coap.CoapMessage(
            options=[(11, b"tip"), (60, b"A"), (500, b"B" * 20)],
            payload=b"z",
        )
        decoded = coap.decode_message(coap.encode_message(msg))
        assert decoded.options == [(11, b"tip"), (60, b"A"), (500, b"B" * 20)]

    def test_option_length_extended_encoding(self):
        msg = coap.CoapMessage(options=[(11, b"x" * 300)], payload=b"z")
        decoded = coap.decode_message(coap.encode_message(msg))
        assert decoded.options == [(11, b"x" * 300)]

    def test_deterministic_with_seeded_rng(self):
        a = coap.coap_wrap(b"frame", random.Random(7))
        b = coap.coap_wrap(b"frame", random.Random(7))
        assert a == b

    def test_roundtrip_at_max_payload(self):
        frame = bytes(i & 0xFF for i in range(60_000))
        assert coap.coap_unwrap(coap.coap_wrap(frame)) == frame


class TestSimNetwork:
    def test_latency_exact(self):
        net = SimNetwork(seed=1, start_time_us=0, default_latency_us=5000)
        deliveries = []
        net.add_node("a", lambda f, d: None)
        net.add_node("b", lambda f, d: deliveries.append((net.now_us(), f, d)))
        net.send("a", "b", b"\x00\x00\x00\x02hello")
        net.run_until_idle()
        assert deliveries == [(5000, "a", b"\x00\x00\x00\x02hello")]

    def test_total_loss(self):
        net = SimNetwork(seed=1)
        net.add_node("a", lambda f, d: None)
        net.add_node("b", lambda f, d: pytest.fail("must never deliver"))
        net.set_link("a", "b", loss=1.0)
        for _ in range(50):
            net.send("a", "b", b"data")
        net.run_until_idle()
        assert net.messages_delivered == 0

    def test_same_seed_identical_logs(self):
        def run(seed):
            net = SimNetwork(seed=seed, default_loss=0.3)
            net.add_node("a", lambda f, d: None)
            net.add_node("b", lambda f, d: None)
            rng = random.Random(99)
            for i in range(200):
                frm, to = ("a", "b") if rng.random() < 0.5 else ("b", "a")
                net.send(frm, to, bytes([0, 0, 0, i % 9, i % 256]))
            net.run_until_idle()
            return net.event_log

        assert run(5) == run(5)
        assert run(5) != run(6)  # loss draws differ

    def test_clock_monotone(self):
        net = SimNetwork(seed=2)
        net.add_node("a", lambda f, d: None)
        net.add_node("b", lambda f, d: None)
        stamps = []
        for i in range(20):
            net.set_link("a", "b", latency_us=((i * 7919) % 10_000) + 1)
            net.send("a", "b", b"pkt")
        previous = -1
        while net.step():
            assert net.now_us() >= previous
            previous = net.now_us()
        del stamps

    def test_multicast_fanout_excludes_sender(self):
        net = SimNetwork(seed=3)
        got = {"a": 0, "b": 0, "c": 0}

        def receiver(name):
            return lambda f, d: got.__setitem__(name, got[name] + 1)

        for name in got:
            net.add_node(name, receiver(name))
            net.join_group("mdns", name)
        net.multicast("a", "mdns", b"announce")
        net.run_until_idle()
        assert got == {"a": 0, "b": 1, "c": 1}

    def test_mute_drops_both_directions(self):
        net = SimNetwork(seed=4)
        seen = []
        net.add_node("a", lambda f, d: seen.append(("a", f)))
        net.add_node("b", lambda f, d: seen.append(("b", f)))
        net.mute("b")
        net.send("a", "b", b"x")
        net.send("b", "a", b"y")
        net.run_until_idle()
        assert seen == []
        net.mute("b", muted=False)
        net.send("a", "b", b"x")
        net.run_until_idle()
        assert seen == [("b", "a")]

    def test_timers_fire_in_order(self):
        net = SimNetwork(seed=5, start_time_us=0)
        fired = []
        net.call_later(300, lambda: fired.append(300))
        net.call_later(100, lambda: fired.append(100))
        handle = net.call_later(200, lambda: fired.append(200))
        handle.cancel()
        net.run_until_idle()
        assert fired == [100, 300]

    def test_unknown_node(self):
        net = SimNetwork(seed=6)
        net.add_node("a", lambda f, d: None)
        with pytest.raises(Exception):
            net.send("a", "ghost", b"x")


class TestUdpTransport:
    def test_loopback_roundtrip(self):
        from tip.udp import UdpTransport

        alpha = UdpTransport("127.0.0.1:0")
        beta = UdpTransport("127.0.0.1:0")
        got = []
        event = threading.Event()

        def on_frame(frm, data):
            got.append((frm, data))
            event.set()

        beta.set_receiver(on_frame)
        beta.start_thread()
        try:
            alpha.send(beta.address, b"\x00\x00\x00\x07frame-bytes")
            assert event.wait(2.0)
            assert got[0][1] == b"\x00\x00\x00\x07frame-bytes"
            assert got[0][0] == alpha.address
        finally:
            alpha.close()
            beta.close()

    def test_oversized_datagram(self):
        from tip.udp import OversizedDatagram, UdpTransport

        transport = UdpTransport("127.0.0.1:0")
        try:
            with pytest.raises(OversizedDatagram):
                transport.send(transport.address, bytes(66_000))
        finally:
            transport.close()

    def test_non_coap_datagram_dropped_with_counter(self):
        import socket

        from tip.udp import UdpTransport

        transport = UdpTransport("127.0.0.1:0")
        transport.set_receiver(lambda f, d: pytest.fail("must not deliver garbage"))
        transport.start_thread()
        try:
            raw = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            host, _, port = transport.address.rpartition(":")
            raw.sendto(b"\xff\xff\xff\xff not coap", (host, int(port)))
            raw.close()
            deadline = time.monotonic() + 2.0
            while time.monotonic() < deadline:
                if transport.drop_counters["not_coap"] >= 1:
                    break
                time.sleep(0.01)
            assert transport.drop_counters["not_coap"] >= 1
        finally:
            transport.close()

    def test_timer_fires(self):
        from tip.udp import UdpTransport

        transport = UdpTransport("127.0.0.1:0")
        fired = threading.Event()
        transport.call_later(30_000, fired.set)
        transport.start_thread()
        try:
            assert fired.wait(2.0)
        finally:
            transport.close()
