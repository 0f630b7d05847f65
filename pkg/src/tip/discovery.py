"""Dual-phase capability resolution: local-link announcements plus Kademlia
DHT lookups over the XOR metric, merged and deduplicated.

The routing table keeps 256 k-buckets ordered least-recently-seen first.
Lookup tasks run lockstep rounds of alpha parallel FIND_NODE RPCs against
the current shortlist until the k closest known nodes have all been queried
or providers for the target key arrive.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

from .model import Capability, NodeRecord, ProviderRecord

ID_BITS = 256
DEFAULT_K = 20
DEFAULT_ALPHA = 3

SERVICE_TYPE = "_tip._udp.local"


class DiscoveryError(Exception):
    pass


class SelfReference(DiscoveryError):
    pass


class NotFound(DiscoveryError):
    pass


class NoPeers(DiscoveryError):
    pass


def xor_distance(x: bytes, y: bytes) -> int:
    """XOR of two 256-bit ids as a big-endian unsigned integer."""
    return int.from_bytes(x, "big") ^ int.from_bytes(y, "big")


def bucket_index(local: bytes, remote: bytes) -> int:
    """Index of the highest set bit of the distance: 2^i <= d < 2^(i+1)."""
    distance = xor_distance(local, remote)
    if distance == 0:
        raise SelfReference("local and remote ids are identical")
    return distance.bit_length() - 1


def capability_key(capability_id: str) -> bytes:
    """DHT key for a capability id."""
    return hashlib.sha256(capability_id.encode("utf-8")).digest()


@dataclass
class PingNeeded:
    """Bucket full: the least-recently-seen occupant must be pinged before
    the candidate can displace it."""

    bucket: int
    occupant: NodeRecord
    candidate: NodeRecord


class RoutingTable:
    """256 k-buckets; each bucket list is least-recently-seen first."""

    def __init__(self, local_id: bytes, k: int = DEFAULT_K, alpha: int = DEFAULT_ALPHA):
        self.local_id = local_id
        self.k = k
        self.alpha = alpha
        self.buckets: list[list[NodeRecord]] = [[] for _ in range(ID_BITS)]
        self._ping_pending: set[int] = set()

    def __len__(self) -> int:
        return sum(len(b) for b in self.buckets)

    def all_nodes(self) -> list[NodeRecord]:
        return [record for bucket in self.buckets for record in bucket]

    def get(self, node_id: bytes) -> NodeRecord | None:
        if node_id == self.local_id:
            return None
        bucket = self.buckets[bucket_index(self.local_id, node_id)]
        for record in bucket:
            if record.node_id == node_id:
                return record
        return None

    def insert(self, record: NodeRecord) -> PingNeeded | None:
        """Kademlia discipline. Returns a PingNeeded when the caller must
        probe the least-recently-seen occupant and then call resolve_ping."""
        if record.node_id == self.local_id:
            return None
        index = bucket_index(self.local_id, record.node_id)
        bucket = self.buckets[index]
        for i, existing in enumerate(bucket):
            if existing.node_id == record.node_id:
                bucket.pop(i)
                bucket.append(record)  # refresh to most-recently-seen
                return None
        if len(bucket) < self.k:
            bucket.append(record)
            return None
        if index in self._ping_pending:
            return None  # one probe at a time per bucket; drop the candidate
        self._ping_pending.add(index)
        return PingNeeded(index, bucket[0], record)

    def resolve_ping(self, ping: PingNeeded, occupant_alive: bool) -> None:
        """Apply the eviction verdict for an earlier PingNeeded."""
        self._ping_pending.discard(ping.bucket)
        bucket = self.buckets[ping.bucket]
        for i, existing in enumerate(bucket):
            if existing.node_id == ping.occupant.node_id:
                if occupant_alive:
                    bucket.append(bucket.pop(i))  # keep old, drop new
                else:
                    bucket.pop(i)
                    if len(bucket) < self.k:
                        bucket.append(ping.candidate)
                return
        if len(bucket) < self.k:  # occupant left some other way
            bucket.append(ping.candidate)

    def remove(self, node_id: bytes) -> None:
        if node_id == self.local_id:
            return
        bucket = self.buckets[bucket_index(self.local_id, node_id)]
        self.buckets[bucket_index(self.local_id, node_id)] = [
            r for r in bucket if r.node_id != node_id
        ]

    def closest(self, target: bytes, count: int | None = None) -> list[NodeRecord]:
        """Up to `count` known nodes closest to target, ascending distance."""
        count = self.k if count is None else count
        return sorted(self.all_nodes(), key=lambda r: xor_distance(r.node_id, target))[:count]


class DiscoveryCache:
    """capability_id -> (records, expiry); expired entries never surface."""

    def __init__(self, ttl_us: int = 60_000_000):
        self.ttl_us = ttl_us
        self.entries: dict[str, tuple[list[NodeRecord], int]] = {}

    def get(self, capability_id: str, now_us: int) -> list[NodeRecord] | None:
        entry = self.entries.get(capability_id)
        if entry is None:
            return None
        records, expiry = entry
        if now_us >= expiry:
            del self.entries[capability_id]
            return None
        return list(records)

    def put(self, capability_id: str, records: list[NodeRecord], now_us: int) -> None:
        if records:
            self.entries[capability_id] = (list(records), now_us + self.ttl_us)

    def invalidate(self, capability_id: str) -> None:
        self.entries.pop(capability_id, None)


# --- DNS-SD record construction --------------------------------------------


def txt_pairs(capability: Capability) -> dict[str, str]:
    return {
        "cap": capability.id,
        "schema": str(int(capability.schema)),
        "ver": capability.version,
        "sec": "1",
    }


@dataclass(frozen=True)
class DnssdAnnouncement:
    """PTR/SRV/TXT view of one node's capability set."""

    instance: str
    service_type: str
    srv_target: str
    srv_port: int
    txt: list[dict[str, str]]

    @property
    def ptr_name(self) -> str:
        return f"{self.instance}.{self.service_type}"


def build_dnssd_records(record: NodeRecord, port: int = 5683) -> DnssdAnnouncement:
    host = record.addresses[0] if record.addresses else ""
    return DnssdAnnouncement(
        instance=record.node_id.hex()[:16],
        service_type=SERVICE_TYPE,
        srv_target=host,
        srv_port=port,
        txt=[txt_pairs(c) for c in record.capabilities],
    )


# --- Iterative lookup -------------------------------------------------------


@dataclass
class LookupResult:
    target_key: bytes
    providers: list[ProviderRecord] = field(default_factory=list)
    closest: list[NodeRecord] = field(default_factory=list)
    rounds: int = 0
    rpcs_sent: int = 0


@dataclass
class LookupReply:
    """What one FIND_NODE RPC returned."""

    responder: NodeRecord | None
    neighbors: list[NodeRecord]
    providers: list[ProviderRecord]


class LookupTask:
    """Lockstep alpha-parallel iterative lookup.

    send_rpc(record, target_key, on_result) must eventually call on_result
    with a LookupReply or None (timeout). When find_value is set the lookup
    finishes as soon as provider records arrive.
    """

    def __init__(
        self,
        local_id: bytes,
        target_key: bytes,
        seeds: list[NodeRecord],
        send_rpc: Callable,
        on_done: Callable[[LookupResult], None],
        k: int = DEFAULT_K,
        alpha: int = DEFAULT_ALPHA,
        find_value: bool = True,
        max_rounds: int = 32,
    ):
        self.local_id = local_id
        self.target_key = target_key
        self.send_rpc = send_rpc
        self.on_done = on_done
        self.k = k
        self.alpha = alpha
        self.find_value = find_value
        self.max_rounds = max_rounds
        self.known: dict[bytes, NodeRecord] = {r.node_id: r for r in seeds}
        self.queried: set[bytes] = set()
        self.providers: dict[bytes, ProviderRecord] = {}
        self.result = LookupResult(target_key)
        self._pending = 0
        self._finished = False
        self.cancelled = False

    def start(self) -> None:
        if not self.known:
            self._finish()
            return
        self._next_round()

    def cancel(self) -> None:
        self.cancelled = True

    def _distance(self, node_id: bytes) -> int:
        return xor_distance(node_id, self.target_key)

    def _shortlist(self) -> list[NodeRecord]:
        return sorted(self.known.values(), key=lambda r: self._distance(r.node_id))[: self.k]

    def _next_round(self) -> None:
        if self._finished or self.cancelled:
            return
        if self.find_value and self.providers:
            self._finish()
            return
        shortlist = self._shortlist()
        unqueried = [r for r in shortlist if r.node_id not in self.queried]
        if not unqueried or self.result.rounds >= self.max_rounds:
            self._finish()
            return
        batch = unqueried[: self.alpha]
        self.result.rounds += 1
        self._pending = len(batch)
        for record in batch:
            self.queried.add(record.node_id)
            self.result.rpcs_sent += 1
            self.send_rpc(record, self.target_key, self._make_handler())

    def _make_handler(self):
        def on_result(reply: LookupReply | None) -> None:
            if self._finished or self.cancelled:
                return
            if reply is not None:
                for record in reply.neighbors:
                    if record.node_id != self.local_id:
                        self.known.setdefault(record.node_id, record)
                if reply.responder is not None and reply.responder.node_id != self.local_id:
                    self.known[reply.responder.node_id] = reply.responder
                for provider in reply.providers:
                    self.providers[provider.record.node_id] = provider
            self._pending -= 1
            if self._pending == 0:
                self._next_round()

        return on_result

    def _finish(self) -> None:
        if self._finished:
            return
        self._finished = True
        self.result.providers = sorted(self.providers.values(), key=lambda p: p.record.node_id)
        self.result.closest = self._shortlist()
        self.on_done(self.result)


# --- Algorithm: dual-phase discover ------------------------------------------


@dataclass
class DiscoverStats:
    cache_hit: bool = False
    mdns_records: int = 0
    dht_records: int = 0
    find_node_rpcs: int = 0
    dht_started: bool = False


class DiscoverTask:
    """Cache short-circuit, then local browse plus DHT lookup merged until
    the timeout; dedup by node_id; capability filter; cache update.

    With early-cancel enabled the DHT phase starts only after a local-first
    grace window, so a local hit completes discovery with zero FIND_NODE
    RPCs; without it both phases launch together (the literal algorithm).
    """

    def __init__(
        self,
        capability_id: str,
        timeout_us: int,
        *,
        cache: DiscoveryCache,
        now_us: Callable[[], int],
        call_later: Callable,
        start_browse: Callable,
        start_lookup: Callable,
        on_done: Callable[[list[NodeRecord]], None],
        early_cancel: bool = True,
        local_first_window_us: int = 50_000,
        exclude: frozenset[bytes] = frozenset(),
    ):
        self.capability_id = capability_id
        self.timeout_us = timeout_us
        self.cache = cache
        self.now_us = now_us
        self.call_later = call_later
        self.start_browse = start_browse
        self.start_lookup = start_lookup
        self.on_done = on_done
        self.early_cancel = early_cancel
        self.local_first_window_us = min(local_first_window_us, timeout_us)
        self.exclude = exclude
        self.stats = DiscoverStats()
        self.merged: dict[bytes, NodeRecord] = {}
        self._done = False
        self._browse_done = False
        self._lookup_done = False
        self._lookup_task = None
        self._timer = None
        self._grace_timer = None

    def start(self) -> None:
        cached = self.cache.get(self.capability_id, self.now_us())
        if cached is not None:
            usable = [r for r in cached if r.node_id not in self.exclude]
            if usable:
                self.stats.cache_hit = True
                self._done = True
                self.on_done(usable)
                return
        self._timer = self.call_later(self.timeout_us, self._finish)
        self.start_browse(self.capability_id, self.timeout_us, self._on_mdns_record,
                          self._on_browse_done)
        if self.early_cancel:
            self._grace_timer = self.call_later(self.local_first_window_us, self._start_dht)
        else:
            self._start_dht()

    def _start_dht(self) -> None:
        if self._done or self.stats.dht_started:
            return
        self.stats.dht_started = True
        self._lookup_task = self.start_lookup(
            capability_key(self.capability_id), self._on_lookup_done
        )

    def _on_mdns_record(self, record: NodeRecord) -> None:
        if self._done:
            return
        if record.node_id in self.exclude or not record.has_capability(self.capability_id):
            return
        self.merged[record.node_id] = record
        self.stats.mdns_records += 1
        if self.early_cancel and not self.stats.dht_started:
            # First local hit wins; the DHT phase never launches.
            self._finish()

    def _on_browse_done(self) -> None:
        self._browse_done = True
        self._maybe_finish()

    def _on_lookup_done(self, result: LookupResult) -> None:
        if self._done:
            return
        self.stats.find_node_rpcs = result.rpcs_sent
        for provider in result.providers:
            record = provider.record
            if record.node_id in self.exclude or not record.has_capability(self.capability_id):
                continue
            self.merged.setdefault(record.node_id, record)
            self.stats.dht_records += 1
        self._lookup_done = True
        self._maybe_finish()

    def _maybe_finish(self) -> None:
        lookup_settled = self._lookup_done or not self.stats.dht_started
        if self._browse_done and lookup_settled:
            self._finish()

    def _finish(self) -> None:
        if self._done:
            return
        self._done = True
        if self._timer is not None:
            self._timer.cancel()
        if self._grace_timer is not None:
            self._grace_timer.cancel()
        if self._lookup_task is not None:
            self._lookup_task.cancel()
        records = sorted(self.merged.values(), key=lambda r: r.node_id)
        self.cache.put(self.capability_id, records, self.now_us())
        self.on_done(records)
