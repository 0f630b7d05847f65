"""Real UDP transport: CoAP-wrapped TIP frames over datagram sockets.

The loop thread owns socket reads and the timer heap, so node state is only
ever touched from that thread, mirroring the simulated scheduler's model.
Addresses are "host:port" strings. Loopback-capable for demos and the
interop tests; OS multicast is intentionally not wired up (the simulated
bus is the deterministic substrate for local-link discovery).
"""

from __future__ import annotations

import heapq
import logging
import select
import socket
import threading
import time
from collections import deque

from . import coap

log = logging.getLogger(__name__)

MAX_UDP_PAYLOAD = 65507


class BindFailure(Exception):
    pass


class OversizedDatagram(Exception):
    pass


class _Timer:
    __slots__ = ("deadline_us", "fn", "cancelled")

    def __init__(self, deadline_us: int, fn):
        self.deadline_us = deadline_us
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class UdpTransport:
    def __init__(self, bind: str = "127.0.0.1:0"):
        host, _, port = bind.rpartition(":")
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.bind((host or "127.0.0.1", int(port)))
        except OSError as exc:
            raise BindFailure(f"cannot bind {bind}: {exc}") from exc
        self.sock.setblocking(False)
        actual_host, actual_port = self.sock.getsockname()
        self.address = f"{actual_host}:{actual_port}"
        self._receiver = None
        self._timers: list[tuple[int, int, _Timer]] = []
        self._timer_seq = 0
        self._lock = threading.Lock()
        self._pending_calls: deque = deque()
        self._running = False
        self._thread: threading.Thread | None = None
        self.drop_counters = {"not_coap": 0, "wrong_path": 0, "wrong_format": 0, "no_payload": 0}

    def set_receiver(self, receiver) -> None:
        self._receiver = receiver

    def now_us(self) -> int:
        return time.time_ns() // 1000

    def send(self, to: str, data: bytes) -> None:
        wrapped = coap.coap_wrap(data)
        if len(wrapped) > MAX_UDP_PAYLOAD:
            raise OversizedDatagram(f"{len(wrapped)} bytes exceeds {MAX_UDP_PAYLOAD}")
        host, _, port = to.rpartition(":")
        self.sock.sendto(wrapped, (host, int(port)))

    def call_later(self, delay_us: int, fn) -> _Timer:
        timer = _Timer(self.now_us() + delay_us, fn)
        with self._lock:
            self._timer_seq += 1
            heapq.heappush(self._timers, (timer.deadline_us, self._timer_seq, timer))
        return timer

    def run_soon(self, fn) -> None:
        """Thread-safe injection of a callable into the loop thread."""
        with self._lock:
            self._pending_calls.append(fn)

    # --- loop -------------------------------------------------------------

    def _due_timers(self) -> list[_Timer]:
        now = self.now_us()
        due = []
        with self._lock:
            while self._timers and self._timers[0][0] <= now:
                _, _, timer = heapq.heappop(self._timers)
                if not timer.cancelled:
                    due.append(timer)
            while self._pending_calls:
                fn = self._pending_calls.popleft()
                due.append(_Timer(now, fn))
        return due

    def _next_deadline_s(self) -> float:
        with self._lock:
            if self._pending_calls:
                return 0.0
            if not self._timers:
                return 0.05
        return min(max((self._timers[0][0] - self.now_us()) / 1e6, 0.0), 0.05)

    def run(self, stop_event: threading.Event | None = None) -> None:
        self._running = True
        while self._running and (stop_event is None or not stop_event.is_set()):
            for timer in self._due_timers():
                timer.fn()
            readable, _, _ = select.select([self.sock], [], [], self._next_deadline_s())
            if not readable:
                continue
            try:
                datagram, addr = self.sock.recvfrom(65536)
            except OSError:
                continue
            frm = f"{addr[0]}:{addr[1]}"
            try:
                frame = coap.coap_unwrap(datagram)
            except coap.WrongPath:
                self.drop_counters["wrong_path"] += 1
                continue
            except coap.WrongContentFormat:
                self.drop_counters["wrong_format"] += 1
                continue
            except coap.NoPayload:
                self.drop_counters["no_payload"] += 1
                continue
            except coap.CoapError:
                self.drop_counters["not_coap"] += 1
                continue
            if self._receiver is not None:
                self._receiver(frm, frame)

    def start_thread(self) -> threading.Thread:
        self._thread = threading.Thread(target=self.run, daemon=True)
        self._thread.start()
        return self._thread

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    def close(self) -> None:
        self.stop()
        self.sock.close()
