"""Deterministic in-process datagram network with a virtual clock.

One scheduler owns a time-ordered event heap and invokes node handlers
sequentially at their virtual timestamps; identical seeds and scenarios
replay identical delivery orders, timestamps and event logs. Links carry
per-pair latency and loss; multicast fans out with independent loss draws.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass

# Simulated wall clock starts at a fixed epoch so packet timestamps look real.
SIM_EPOCH_US = 1_755_000_000_000_000

DEFAULT_LATENCY_US = 1_000
DEFAULT_LOSS = 0.0


class UnknownNode(Exception):
    pass


@dataclass
class _Link:
    latency_us: int
    loss_probability: float


class Timer:
    __slots__ = ("deadline_us", "fn", "cancelled")

    def __init__(self, deadline_us: int, fn):
        self.deadline_us = deadline_us
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class SimNetwork:
    def __init__(
        self,
        seed: int = 0,
        start_time_us: int = SIM_EPOCH_US,
        default_latency_us: int = DEFAULT_LATENCY_US,
        default_loss: float = DEFAULT_LOSS,
    ):
        self.rng = random.Random(seed)
        self.virtual_clock_us = start_time_us
        self.default_link = _Link(default_latency_us, default_loss)
        self.links: dict[tuple[str, str], _Link] = {}
        self.handlers: dict[str, object] = {}
        self.multicast_groups: dict[str, list[str]] = {}
        self.muted: set[str] = set()
        self.event_log: list[str] = []
        self.messages_sent = 0
        self.messages_delivered = 0
        self._heap: list[tuple[int, int, object]] = []
        self._seq = 0

    # --- topology ---------------------------------------------------------

    def add_node(self, address: str, handler) -> None:
        """handler(from_address, data) is invoked at delivery time."""
        if address in self.handlers:
            raise ValueError(f"address {address!r} already registered")
        self.handlers[address] = handler

    def join_group(self, group: str, address: str) -> None:
        members = self.multicast_groups.setdefault(group, [])
        if address not in members:
            members.append(address)

    def set_link(self, a: str, b: str, latency_us: int | None = None, loss: float | None = None):
        for pair in ((a, b), (b, a)):
            link = self.links.get(pair)
            if link is None:
                link = _Link(self.default_link.latency_us, self.default_link.loss_probability)
                self.links[pair] = link
            if latency_us is not None:
                link.latency_us = latency_us
            if loss is not None:
                link.loss_probability = loss

    def set_node_latency(self, address: str, latency_us: int) -> None:
        """Override latency on every link touching one node."""
        for other in self.handlers:
            if other != address:
                self.set_link(address, other, latency_us=latency_us)

    def mute(self, address: str, muted: bool = True) -> None:
        if muted:
            self.muted.add(address)
        else:
            self.muted.discard(address)

    def _link(self, frm: str, to: str) -> _Link:
        return self.links.get((frm, to), self.default_link)

    # --- traffic ----------------------------------------------------------

    @staticmethod
    def _packet_type(data: bytes) -> int:
        return data[3] if len(data) > 3 else 0xFF

    def _schedule(self, at_us: int, event) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (at_us, self._seq, event))

    def send(self, frm: str, to: str, data: bytes) -> None:
        if frm not in self.handlers:
            raise UnknownNode(frm)
        if to not in self.handlers:
            raise UnknownNode(to)
        self.messages_sent += 1
        link = self._link(frm, to)
        if link.loss_probability > 0 and self.rng.random() < link.loss_probability:
            return
        self._schedule(
            self.virtual_clock_us + link.latency_us, ("deliver", frm, to, data)
        )

    def multicast(self, frm: str, group: str, data: bytes) -> None:
        if frm not in self.handlers:
            raise UnknownNode(frm)
        self.messages_sent += 1
        for member in self.multicast_groups.get(group, []):
            if member == frm:
                continue
            link = self._link(frm, member)
            if link.loss_probability > 0 and self.rng.random() < link.loss_probability:
                continue
            self._schedule(
                self.virtual_clock_us + link.latency_us, ("deliver", frm, member, data)
            )

    def call_at(self, deadline_us: int, fn) -> Timer:
        timer = Timer(max(deadline_us, self.virtual_clock_us), fn)
        self._schedule(timer.deadline_us, ("timer", timer))
        return timer

    def call_later(self, delay_us: int, fn) -> Timer:
        return self.call_at(self.virtual_clock_us + delay_us, fn)

    def now_us(self) -> int:
        return self.virtual_clock_us

    # --- scheduler --------------------------------------------------------

    def step(self) -> bool:
        """Deliver the next event; False when the queue is empty."""
        while self._heap:
            at_us, _, event = heapq.heappop(self._heap)
            self.virtual_clock_us = max(self.virtual_clock_us, at_us)
            if event[0] == "timer":
                timer = event[1]
                if timer.cancelled:
                    continue
                timer.fn()
                return True
            _, frm, to, data = event
            if frm in self.muted or to in self.muted:
                continue
            self.messages_delivered += 1
            self.event_log.append(
                f"{self.virtual_clock_us} {frm} {to} 0x{self._packet_type(data):02x} {len(data)}"
            )
            self.handlers[to](frm, data)
            return True
        return False

    def run_until_idle(self, max_time_us: int | None = None) -> None:
        while self._heap:
            if max_time_us is not None and self._heap[0][0] > max_time_us:
                return
            self.step()

    def run_until(self, predicate, max_time_us: int | None = None, step_limit: int = 2_000_000):
        """Run until predicate() is truthy; returns its value or None."""
        for _ in range(step_limit):
            value = predicate()
            if value:
                return value
            if max_time_us is not None and self._heap and self._heap[0][0] > max_time_us:
                return None
            if not self.step():
                return predicate() or None
        raise RuntimeError("step limit exceeded")


class SimTransport:
    """Per-node view of the simulated network."""

    def __init__(self, network: SimNetwork, address: str):
        self.network = network
        self.address = address
        self._receiver = None
        network.add_node(address, self._on_datagram)

    def set_receiver(self, receiver) -> None:
        """receiver(from_address, data)"""
        self._receiver = receiver

    def _on_datagram(self, frm: str, data: bytes) -> None:
        if self._receiver is not None:
            self._receiver(frm, data)

    def send(self, to: str, data: bytes) -> None:
        self.network.send(self.address, to, data)

    def multicast(self, group: str, data: bytes) -> None:
        self.network.multicast(self.address, group, data)

    def join_group(self, group: str) -> None:
        self.network.join_group(group, self.address)

    def now_us(self) -> int:
        return self.network.now_us()

    def call_later(self, delay_us: int, fn) -> Timer:
        return self.network.call_later(delay_us, fn)
