"""Node runtime: validated packet plumbing, provider behavior, discovery.

One logical event loop per node: the transport delivers datagrams and timer
callbacks into this object sequentially, and all node state (routing table,
caches, sessions, contracts) is owned by it. Requester-side session logic
lives in the orchestrator module and drives the primitives here.

Zero-trust receive path: every packet runs the full validation pipeline.
Packets that initiate contact (queries, intent requests) carry the sender's
node record at an extension key, so receivers can self-certify the key
(node_id must be the hash of it) before verifying the signature.
"""

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from . import cbor, payloads, wire
from .crypto import (
    AuthFailure,
    BadSignature,
    NodeIdentity,
    ReplayCache,
    SessionKeys,
    ephemeral_signature_valid,
    establish_session,
    generate_ephemeral,
    node_id_for,
    open_sealed,
    seal,
    sign_ephemeral,
    verify,
)
from .discovery import (
    DEFAULT_ALPHA,
    DEFAULT_K,
    DiscoverTask,
    DiscoveryCache,
    LookupReply,
    LookupResult,
    LookupTask,
    NoPeers,
    PingNeeded,
    RoutingTable,
    capability_key,
    txt_pairs,
)
from .model import Capability, Contract, NodeRecord, ProviderRecord
from .negotiation import ReputationStore
from .payloads import (
    Ack,
    ContractSigned,
    DataRequest,
    DataResponse,
    DiscoveryAnnounce,
    DiscoveryQuery,
    IntentProposal,
    SignedEphemeral,
)
from .wire import Flags, PacketType

log = logging.getLogger(__name__)

PROVIDER_RECORD_CONTEXT = b"tip-provider-record-v1"
MAX_STORED_PROVIDERS_PER_KEY = 16


class DuplicateCapabilityId(Exception):
    pass


@dataclass
class NodeConfig:
    k: int = DEFAULT_K
    alpha: int = DEFAULT_ALPHA
    skew_window_us: int = 30_000_000
    replay_lru_capacity: int = 4096
    cache_ttl_us: int = 60_000_000
    announce_interval_us: int = 15_000_000
    announce_jitter_us: int = 2_000_000
    record_expiry_us: int = 45_000_000
    rpc_timeout_us: int = 500_000
    proposal_timeout_us: int = 1_000_000
    ack_retransmit_us: int = 250_000
    ack_max_retransmits: int = 2
    contract_ttl_us: int = 600_000_000
    data_timeout_us: int = 1_000_000
    discover_timeout_us: int = 500_000
    local_first_window_us: int = 50_000
    early_cancel: bool = True
    lambda_per_s: float = 9.6e-7
    availability: float = 1.0
    max_payload: int = wire.DEFAULT_MAX_PAYLOAD
    packet_ttl_ms: int = 60_000
    mdns_group: str = "mdns"
    clock_skew_us: int = 0


@dataclass
class _Pending:
    txid: bytes
    on_reply: Callable
    on_timeout: Callable | None
    timer: object
    rebuild: Callable | None = None
    retries_left: int = 0
    sent_at_us: int = 0


@dataclass
class _Served:
    capability: Capability
    handler: Callable


@dataclass
class _ProviderSession:
    contract: Contract
    keys: SessionKeys
    requester_id: bytes
    requester_address: str
    stream_timer: object | None = None


@dataclass
class _Browse:
    capability_id: str
    on_record: Callable
    on_done: Callable
    seen: set = field(default_factory=set)


class Node:
    def __init__(
        self,
        identity: NodeIdentity,
        transport,
        config: NodeConfig | None = None,
        registry=None,
        reputation: ReputationStore | None = None,
        rng: random.Random | None = None,
    ):
        self.identity = identity
        self.transport = transport
        self.config = config or NodeConfig()
        self.registry = registry
        self.reputation = reputation or ReputationStore()
        self.rng = rng or random.Random()
        self.address = transport.address
        self.table = RoutingTable(identity.node_id, self.config.k, self.config.alpha)
        self.cache = DiscoveryCache(self.config.cache_ttl_us)
        self.served: dict[str, _Served] = {}
        self.provider_store: dict[bytes, dict[bytes, ProviderRecord]] = {}
        self.mdns_cache: dict[str, dict[bytes, tuple[NodeRecord, int]]] = {}
        self.address_book: dict[str, tuple[bytes, bytes]] = {}  # addr -> (node_id, pub)
        self.node_keys: dict[bytes, bytes] = {}  # node_id -> pub
        self.replay_caches: dict[bytes, ReplayCache] = {}
        self.pending: dict[bytes, _Pending] = {}
        self.pending_proposals: dict[bytes, tuple] = {}  # txid -> (eph_priv, capability)
        self.provider_sessions: dict[tuple[bytes, int], _ProviderSession] = {}
        self.stream_routes: dict[tuple[bytes, int], Callable] = {}
        self._browses: list[_Browse] = []
        self._sequence = 0
        self.counters: Counter = Counter()
        self.on_event: Callable | None = None
        transport.set_receiver(self.on_datagram)

    # --- basics -------------------------------------------------------------

    @property
    def node_id(self) -> bytes:
        return self.identity.node_id

    def now_us(self) -> int:
        return self.transport.now_us() + self.config.clock_skew_us

    def call_later(self, delay_us: int, fn):
        return self.transport.call_later(delay_us, fn)

    def next_sequence(self) -> int:
        self._sequence += 1
        return self._sequence

    def new_transaction_id(self) -> bytes:
        raw = bytearray(self.rng.getrandbits(8) for _ in range(16))
        raw[6] = (raw[6] & 0x0F) | 0x40  # UUID v4
        raw[8] = (raw[8] & 0x3F) | 0x80
        return bytes(raw)

    def emit(self, kind: str, **fields) -> None:
        if self.on_event is not None:
            self.on_event({"t": self.now_us(), "node": self.address, "event": kind, **fields})

    def self_record(self) -> NodeRecord:
        return NodeRecord(
            node_id=self.node_id,
            signing_public=self.identity.signing_public,
            addresses=[self.address],
            capabilities=[s.capability for s in self.served.values()],
            last_seen=self.now_us(),
            availability=self.config.availability,
        )

    def provider_record(self) -> ProviderRecord:
        record = self.self_record()
        signature = self.identity.sign(PROVIDER_RECORD_CONTEXT + cbor.encode(record.to_cbor()))
        return ProviderRecord(record, signature)

    def verify_provider_record(self, provider: ProviderRecord) -> bool:
        record = provider.record
        if node_id_for(record.signing_public) != record.node_id:
            return False
        return verify(
            record.signing_public,
            PROVIDER_RECORD_CONTEXT + cbor.encode(record.to_cbor()),
            provider.signature,
        )

    def learn(self, address: str, node_id: bytes, public: bytes) -> None:
        self.address_book[address] = (node_id, public)
        self.node_keys[node_id] = public

    def learn_record(self, record: NodeRecord) -> None:
        if not record.addresses:
            return  # unreachable records are useless for routing
        self.learn(record.addresses[0], record.node_id, record.signing_public)
        self._table_insert(record)

    def _replay_cache_for(self, node_id: bytes) -> ReplayCache:
        cache = self.replay_caches.get(node_id)
        if cache is None:
            cache = ReplayCache(self.config.skew_window_us, self.config.replay_lru_capacity)
            self.replay_caches[node_id] = cache
        return cache

    # --- sending ------------------------------------------------------------

    def _build(
        self,
        packet_type: int,
        txid: bytes,
        payload: bytes,
        *,
        flags: int = 0,
        cap_hash: int = 0,
        session: SessionKeys | None = None,
    ) -> bytes:
        """Build a packet; when a session is given the payload is sealed and
        IS_ENCRYPTED set (AAD binds the header with checksum/signature zeroed)."""
        sequence = self.next_sequence()
        timestamp = self.now_us()
        ttl_ms = self.config.packet_ttl_ms
        if session is not None:
            flags |= Flags.IS_ENCRYPTED
            sealed_len = 8 + len(payload) + 16
            aad = wire.encode_header(
                wire.PacketHeader(
                    magic=wire.MAGIC,
                    version=wire.VERSION,
                    packet_type=packet_type,
                    transaction_id=txid,
                    payload_length=sealed_len,
                    capability_hash=cap_hash,
                    sequence_number=sequence & 0xFFFFFFFF,
                    flags=flags,
                    timestamp_us=timestamp,
                    ttl_ms=ttl_ms,
                    checksum=0,
                    signature=bytes(64),
                )
            )
            payload = seal(session, payload, aad)
        packet = wire.build_packet(
            packet_type=packet_type,
            transaction_id=txid,
            payload=payload,
            signing_key=self.identity.signing_private,
            sequence_number=sequence,
            timestamp_us=timestamp,
            ttl_ms=ttl_ms,
            capability_hash=cap_hash,
            flags=flags,
            max_payload=self.config.max_payload,
        )
        return packet.raw

    def send_packet(self, to: str, packet_type: int, msg, *, txid: bytes,
                    flags: int = 0, cap_hash: int = 0, session: SessionKeys | None = None) -> None:
        payload = msg if isinstance(msg, bytes) else payloads.encode_payload(msg)
        raw = self._build(packet_type, txid, payload, flags=flags, cap_hash=cap_hash,
                          session=session)
        self.counters[f"sent_{PacketType(packet_type).name}"] += 1
        self.transport.send(to, raw)

    def send_request(
        self,
        to: str,
        packet_type: int,
        msg,
        *,
        on_reply: Callable,
        on_timeout: Callable | None = None,
        timeout_us: int | None = None,
        txid: bytes | None = None,
        flags: int = 0,
        cap_hash: int = 0,
        session: SessionKeys | None = None,
        retransmit: bool = False,
    ) -> bytes:
        """Send and register a reply continuation keyed by transaction id.

        With retransmit=True the packet is rebuilt (fresh sequence and
        timestamp, same transaction id) on each retry so the receiver's
        replay cache does not reject it.
        """
        txid = txid or self.new_transaction_id()
        timeout_us = timeout_us or self.config.rpc_timeout_us
        payload = msg if isinstance(msg, bytes) else payloads.encode_payload(msg)

        def transmit() -> None:
            raw = self._build(packet_type, txid, payload, flags=flags, cap_hash=cap_hash,
                              session=session)
            self.counters[f"sent_{PacketType(packet_type).name}"] += 1
            self.transport.send(to, raw)

        entry = _Pending(
            txid=txid,
            on_reply=on_reply,
            on_timeout=on_timeout,
            timer=None,
            rebuild=transmit if retransmit else None,
            retries_left=self.config.ack_max_retransmits if retransmit else 0,
            sent_at_us=self.now_us(),
        )
        self.pending[txid] = entry
        interval = self.config.ack_retransmit_us if retransmit else timeout_us
        entry.timer = self.call_later(interval, lambda: self._on_pending_timer(entry, timeout_us))
        transmit()
        return txid

    def _on_pending_timer(self, entry: _Pending, timeout_us: int) -> None:
        if self.pending.get(entry.txid) is not entry:
            return
        if entry.rebuild is not None and entry.retries_left > 0:
            entry.retries_left -= 1
            self.counters["retransmits"] += 1
            entry.rebuild()
            entry.timer = self.call_later(
                self.config.ack_retransmit_us, lambda: self._on_pending_timer(entry, timeout_us)
            )
            return
        del self.pending[entry.txid]
        if entry.on_timeout is not None:
            entry.on_timeout()

    def _send_ack(self, to: str, txid: bytes) -> None:
        self.counters["acks_sent"] += 1
        self.send_packet(to, PacketType.DATA_RESPONSE, Ack(), txid=txid)

    # --- receive pipeline -----------------------------------------------------

    def on_datagram(self, frm: str, data: bytes) -> None:
        try:
            header = wire.decode_header(data)
        except wire.WireError as exc:
            self.counters[f"drop_{type(exc).__name__}"] += 1
            return
        sender = self._resolve_sender_key(frm, header, data[wire.HEADER_LEN:])
        if sender is None:
            self.counters["drop_unknown_sender"] += 1
            return
        sender_id, sender_pub = sender
        try:
            packet = wire.validate_packet(
                data, sender_pub, self.now_us(), self._replay_cache_for(sender_id)
            )
        except (wire.WireError, BadSignature) as exc:
            self.counters[f"drop_{type(exc).__name__}"] += 1
            log.debug("%s: dropped %s from %s: %s", self.address, type(exc).__name__, frm, exc)
            return
        self.learn(frm, sender_id, sender_pub)
        try:
            replied = self._dispatch(frm, sender_id, packet)
        except Exception:  # a handler bug must not kill the node loop
            log.exception("%s: handler error for %s", self.address, header.packet_type)
            self.counters["handler_errors"] += 1
            return
        if packet.header.flags & Flags.REQUIRES_ACK and not replied:
            self._send_ack(frm, packet.header.transaction_id)

    def _resolve_sender_key(self, frm: str, header, payload: bytes):
        """Self-certifying key extraction for first-contact packet types;
        the address book otherwise."""
        ptype = header.packet_type
        record_key = None
        if ptype == PacketType.DISCOVERY_ANNOUNCE:
            record_key = (0, 3)  # node_id at 0, signing_public at 3
        elif ptype == PacketType.DISCOVERY_QUERY:
            record_key = (1,)  # embedded sender record
        elif ptype == PacketType.INTENT_REQUEST:
            record_key = (5,)
        if record_key is not None and payload:
            try:
                obj = cbor.decode(payload)
                if len(record_key) == 2:
                    node_id, public = obj.get(record_key[0]), obj.get(record_key[1])
                else:
                    embedded = obj.get(record_key[0])
                    node_id = embedded.get(0) if isinstance(embedded, dict) else None
                    public = embedded.get(1) if isinstance(embedded, dict) else None
                if (
                    isinstance(node_id, bytes)
                    and isinstance(public, bytes)
                    and len(public) == 32
                    and node_id_for(public) == node_id
                ):
                    return node_id, public
            except cbor.MalformedCbor:
                return None
        return self.address_book.get(frm)

    def _dispatch(self, frm: str, sender_id: bytes, packet: wire.TipPacket) -> bool:
        """Route a validated packet; True when a direct reply was sent."""
        header = packet.header
        entry = None
        if header.packet_type != PacketType.DATA_REQUEST:
            entry = self.pending.pop(header.transaction_id, None)
        if entry is not None:
            entry.timer.cancel()
            if header.flags & Flags.IS_ENCRYPTED:
                msg = None  # the continuation opens and decodes the payload
            else:
                try:
                    msg = payloads.decode_payload(header.packet_type, packet.payload)
                except (payloads.SchemaMismatch, cbor.MalformedCbor,
                        wire.UnknownPacketType) as exc:
                    self.counters["drop_bad_reply"] += 1
                    log.debug("%s: undecodable reply: %s", self.address, exc)
                    return False
            entry.on_reply(frm, sender_id, packet, msg)
            return False

        if header.packet_type == PacketType.DATA_RESPONSE:
            route = self.stream_routes.get((sender_id, header.capability_hash))
            if route is not None:
                route(packet, None)
                return False
        if header.flags & Flags.IS_ENCRYPTED:
            return self._handle_encrypted(frm, sender_id, packet)

        try:
            msg = payloads.decode_payload(header.packet_type, packet.payload)
        except (payloads.SchemaMismatch, cbor.MalformedCbor, wire.UnknownPacketType) as exc:
            self.counters["drop_bad_payload"] += 1
            log.debug("%s: undecodable payload from %s: %s", self.address, frm, exc)
            return False

        if isinstance(msg, DiscoveryAnnounce):
            return self._handle_announce(frm, sender_id, packet, msg)
        if isinstance(msg, DiscoveryQuery):
            return self._handle_query(frm, sender_id, packet, msg)
        if isinstance(msg, payloads.IntentRequest):
            return self._handle_intent_request(frm, sender_id, packet, msg)
        if isinstance(msg, payloads.ContractAccept):
            return self._handle_contract_accept(frm, sender_id, packet, msg)
        if isinstance(msg, (DataResponse, Ack)):
            return self._handle_unmatched_response(frm, sender_id, packet, msg)
        self.counters["drop_unexpected_type"] += 1
        return False

    # --- discovery handlers ----------------------------------------------------

    def _table_insert(self, record: NodeRecord) -> None:
        ping = self.table.insert(record)
        if isinstance(ping, PingNeeded):
            occupant_addr = ping.occupant.addresses[0] if ping.occupant.addresses else None
            if occupant_addr is None:
                self.table.resolve_ping(ping, occupant_alive=False)
                return
            self.ping(
                occupant_addr,
                lambda rtt_ms: self.table.resolve_ping(ping, occupant_alive=rtt_ms is not None),
            )

    def _record_from_announce(self, frm: str, msg: DiscoveryAnnounce) -> NodeRecord | None:
        if msg.signing_public is None:
            return None
        try:
            return NodeRecord(
                node_id=msg.node_id,
                signing_public=msg.signing_public,
                addresses=msg.addresses or [frm],
                capabilities=msg.capabilities,
                last_seen=self.now_us(),
                availability=msg.availability,
            )
        except ValueError:
            return None

    def _handle_announce(self, frm: str, sender_id: bytes, packet, msg: DiscoveryAnnounce) -> bool:
        if msg.target_key is not None:
            # DHT STORE: keep signed provider records for the key.
            stored = self.provider_store.setdefault(msg.target_key, {})
            for provider in msg.providers:
                if not self.verify_provider_record(provider):
                    self.counters["drop_bad_provider_record"] += 1
                    continue
                if (
                    len(stored) < MAX_STORED_PROVIDERS_PER_KEY
                    or provider.record.node_id in stored
                ):
                    stored[provider.record.node_id] = provider
            record = self._record_from_announce(frm, msg)
            if record is not None:
                self.learn_record(record)
            return False  # REQUIRES_ACK handled by the dispatch tail
        record = self._record_from_announce(frm, msg)
        if record is None:
            return False
        self.learn_record(record)
        now = self.now_us()
        for capability in record.capabilities:
            entry = self.mdns_cache.setdefault(capability.id, {})
            entry[record.node_id] = (record, now + self.config.record_expiry_us)
        for browse in list(self._browses):
            if record.has_capability(browse.capability_id) and record.node_id not in browse.seen:
                browse.seen.add(record.node_id)
                browse.on_record(record)
        return False

    def _handle_query(self, frm: str, sender_id: bytes, packet, msg: DiscoveryQuery) -> bool:
        if msg.sender_record is not None:
            self.learn_record(msg.sender_record)
        if msg.is_ping:
            return False  # ack is sent by the dispatch tail
        if msg.target_key is not None:
            neighbors = [
                r for r in self.table.closest(msg.target_key, self.config.k)
                if r.node_id != sender_id
            ]
            providers = list(self.provider_store.get(msg.target_key, {}).values())
            mine = self.self_record()
            reply = DiscoveryAnnounce(
                node_id=self.node_id,
                capabilities=mine.capabilities,
                addresses=mine.addresses,
                signing_public=self.identity.signing_public,
                neighbors=neighbors,
                providers=providers,
                availability=self.config.availability,
            )
            self.send_packet(frm, PacketType.DISCOVERY_ANNOUNCE, reply,
                             txid=packet.header.transaction_id)
            return True
        served = self.served.get(msg.capability_id or "")
        if served is not None:
            self.send_packet(frm, PacketType.DISCOVERY_ANNOUNCE, self._announce_message(),
                             txid=packet.header.transaction_id)
            return True
        return False

    def _handle_unmatched_response(self, frm, sender_id, packet, msg) -> bool:
        self.counters["drop_unmatched_response"] += 1
        return False

    # --- announcements / publish ------------------------------------------------

    def _announce_message(self) -> DiscoveryAnnounce:
        mine = self.self_record()
        return DiscoveryAnnounce(
            node_id=self.node_id,
            capabilities=mine.capabilities,
            addresses=mine.addresses,
            signing_public=self.identity.signing_public,
            txt_records=[txt_pairs(c) for c in mine.capabilities],
            availability=self.config.availability,
        )

    def announce_now(self) -> None:
        if not hasattr(self.transport, "multicast"):
            return
        raw = self._build(
            PacketType.DISCOVERY_ANNOUNCE,
            self.new_transaction_id(),
            payloads.encode_payload(self._announce_message()),
        )
        self.counters["sent_DISCOVERY_ANNOUNCE"] += 1
        self.transport.multicast(self.config.mdns_group, raw)

    def _schedule_announce(self) -> None:
        jitter = self.rng.randrange(self.config.announce_jitter_us + 1)
        self.call_later(self.config.announce_interval_us + jitter, self._announce_tick)

    def _announce_tick(self) -> None:
        if self.served:
            self.announce_now()
            self._schedule_announce()

    def serve(self, capability: Capability, handler: Callable, announce: bool = True) -> None:
        """Register a capability handler; announce locally and publish to the
        DHT when peers are known."""
        if capability.id in self.served:
            raise DuplicateCapabilityId(capability.id)
        self.served[capability.id] = _Served(capability, handler)
        if announce:
            if hasattr(self.transport, "join_group"):
                self.transport.join_group(self.config.mdns_group)
            self.announce_now()
            self._schedule_announce()
            if len(self.table):
                self.dht_publish(capability.id, lambda _acks: None)

    def dht_publish(self, capability_id: str, on_done: Callable[[int], None]) -> None:
        """Store this node's signed provider record at the k closest nodes."""
        if not len(self.table):
            raise NoPeers("routing table is empty")
        key = capability_key(capability_id)
        provider = self.provider_record()

        def after_lookup(result: LookupResult) -> None:
            candidates = result.closest or self.table.closest(key, self.config.k)
            # This node is itself a storage candidate when it sits among the
            # k closest to the key.
            from .discovery import xor_distance

            ranked = sorted(
                candidates + [self.self_record()],
                key=lambda r: xor_distance(r.node_id, key),
            )[: self.config.k]
            store_local = any(r.node_id == self.node_id for r in ranked)
            targets = [r for r in ranked if r.node_id != self.node_id]
            acks = {"n": 0, "pending": len(targets)}
            if store_local:
                self.provider_store.setdefault(key, {})[self.node_id] = provider
                acks["n"] += 1
            if not targets:
                on_done(acks["n"])
                return
            store = DiscoveryAnnounce(
                node_id=self.node_id,
                capabilities=[s.capability for s in self.served.values()],
                addresses=[self.address],
                signing_public=self.identity.signing_public,
                target_key=key,
                providers=[provider],
            )

            def settle() -> None:
                acks["pending"] -= 1
                if acks["pending"] == 0:
                    on_done(acks["n"])

            def on_ack(_frm, _sender, _packet, _msg) -> None:
                acks["n"] += 1
                settle()

            for target in targets:
                self.learn_record(target)
                self.counters["store_sent"] += 1
                self.send_request(
                    target.addresses[0],
                    PacketType.DISCOVERY_ANNOUNCE,
                    store,
                    flags=Flags.REQUIRES_ACK,
                    on_reply=on_ack,
                    on_timeout=settle,
                    retransmit=True,
                )

        self.iterative_lookup(key, after_lookup, find_value=False)

    # --- RPC primitives -----------------------------------------------------------

    def bootstrap(self, peer_address: str, on_done: Callable[[bool], None]) -> None:
        """Learn a first peer by address: a self-targeted FIND_NODE carrying
        our record; the reply announce populates the routing table."""

        def on_reply(frm, sender_id, packet, msg) -> None:
            if isinstance(msg, DiscoveryAnnounce):
                record = self._record_from_announce(frm, msg)
                if record is not None:
                    self.learn_record(record)
                for neighbor in msg.neighbors:
                    self.learn_record(neighbor)
                on_done(True)
                return
            on_done(False)

        self.send_request(
            peer_address,
            PacketType.DISCOVERY_QUERY,
            DiscoveryQuery(target_key=self.node_id, sender_record=self.self_record()),
            on_reply=on_reply,
            on_timeout=lambda: on_done(False),
        )

    def ping(self, to: str, on_rtt: Callable[[float | None], None]) -> None:
        """Empty query with REQUIRES_ACK; RTT measured on this node's clock."""
        sent_at = self.now_us()
        self.counters["pings_sent"] += 1
        self.send_request(
            to,
            PacketType.DISCOVERY_QUERY,
            DiscoveryQuery(sender_record=self.self_record()),
            flags=Flags.REQUIRES_ACK,
            on_reply=lambda _f, _s, _p, _m: on_rtt((self.now_us() - sent_at) / 1000.0),
            on_timeout=lambda: on_rtt(None),
        )

    def send_find_node(self, target: NodeRecord, key: bytes, on_result: Callable) -> None:
        if not target.addresses:
            on_result(None)
            return
        self.learn_record(target)
        self.counters["find_node_sent"] += 1

        def on_reply(frm, sender_id, packet, msg) -> None:
            if not isinstance(msg, DiscoveryAnnounce):
                on_result(None)
                return
            responder = self._record_from_announce(frm, msg)
            if responder is not None:
                self.learn_record(responder)
            for neighbor in msg.neighbors:
                if neighbor.addresses:
                    self.learn(neighbor.addresses[0], neighbor.node_id, neighbor.signing_public)
            providers = [p for p in msg.providers if self.verify_provider_record(p)]
            on_result(LookupReply(responder, msg.neighbors, providers))

        self.send_request(
            target.addresses[0],
            PacketType.DISCOVERY_QUERY,
            DiscoveryQuery(target_key=key, sender_record=self.self_record()),
            on_reply=on_reply,
            on_timeout=lambda: on_result(None),
            timeout_us=self.config.rpc_timeout_us,
        )

    def iterative_lookup(
        self, key: bytes, on_done: Callable[[LookupResult], None], find_value: bool = True
    ) -> LookupTask:
        task = LookupTask(
            local_id=self.node_id,
            target_key=key,
            seeds=self.table.closest(key, self.config.k),
            send_rpc=self.send_find_node,
            on_done=on_done,
            k=self.config.k,
            alpha=self.config.alpha,
            find_value=find_value,
        )
        task.start()
        return task

    def start_browse(self, capability_id: str, timeout_us: int,
                     on_record: Callable, on_done: Callable) -> None:
        browse = _Browse(capability_id, on_record, on_done)
        self._browses.append(browse)
        now = self.now_us()
        for record, expiry in list(self.mdns_cache.get(capability_id, {}).values()):
            if expiry > now and record.node_id not in browse.seen:
                browse.seen.add(record.node_id)
                on_record(record)
        if hasattr(self.transport, "multicast"):
            raw = self._build(
                PacketType.DISCOVERY_QUERY,
                self.new_transaction_id(),
                payloads.encode_payload(
                    DiscoveryQuery(capability_id=capability_id,
                                   sender_record=self.self_record())
                ),
            )
            self.counters["sent_DISCOVERY_QUERY"] += 1
            self.transport.multicast(self.config.mdns_group, raw)

        def finish() -> None:
            if browse in self._browses:
                self._browses.remove(browse)
                browse.on_done()

        self.call_later(timeout_us, finish)

    def discover(
        self,
        capability_id: str,
        on_done: Callable[[list[NodeRecord]], None],
        *,
        timeout_us: int | None = None,
        exclude: frozenset[bytes] = frozenset(),
        early_cancel: bool | None = None,
    ) -> DiscoverTask:
        task = DiscoverTask(
            capability_id,
            timeout_us or self.config.discover_timeout_us,
            cache=self.cache,
            now_us=self.now_us,
            call_later=self.call_later,
            start_browse=self.start_browse,
            start_lookup=lambda key, cb: self.iterative_lookup(key, cb, find_value=True),
            on_done=on_done,
            early_cancel=self.config.early_cancel if early_cancel is None else early_cancel,
            local_first_window_us=self.config.local_first_window_us,
            exclude=exclude,
        )
        task.start()
        return task

    # --- provider side of negotiation and data ------------------------------------

    def _handle_intent_request(self, frm, sender_id, packet, msg) -> bool:
        if msg.sender_record is not None:
            self.learn_record(msg.sender_record)
        served = self.served.get(msg.capability_id)
        if served is None:
            self.counters["intent_for_unserved"] += 1
            return False
        eph_priv, eph_pub = generate_ephemeral()
        txid = packet.header.transaction_id
        self.pending_proposals[txid] = (eph_priv, served.capability)
        signed = sign_ephemeral(self.identity, eph_pub, txid)
        proposal = IntentProposal(
            capability=served.capability,
            measured_rtt_ms=0.0,
            availability=self.config.availability,
            adapter_required=served.capability.schema != msg.desired_schema,
            ephemeral=SignedEphemeral(eph_pub, signed),
        )
        self.send_packet(
            frm, PacketType.INTENT_PROPOSAL, proposal, txid=txid,
            cap_hash=wire.capability_hash(msg.capability_id),
        )
        self.emit("proposal_sent", capability=msg.capability_id, to=frm)
        return True

    def _handle_contract_accept(self, frm, sender_id, packet, msg) -> bool:
        txid = packet.header.transaction_id
        pending = self.pending_proposals.pop(txid, None)
        if pending is None:
            # A retransmitted accept for a contract we already signed: answer
            # again so a lost CONTRACT_SIGNED does not strand the requester.
            for session in self.provider_sessions.values():
                if session.contract.contract_id == txid:
                    self.send_packet(
                        frm,
                        PacketType.CONTRACT_SIGNED,
                        ContractSigned(msg.contract_body, session.contract.provider_signature),
                        txid=txid,
                        flags=Flags.REQUIRES_ACK,
                        cap_hash=wire.capability_hash(session.contract.capability.id),
                    )
                    return True
            self.counters["drop_unexpected_contract"] += 1
            return False
        eph_priv, capability = pending
        try:
            contract = Contract.from_body(msg.contract_body)
        except (cbor.MalformedCbor, KeyError, ValueError):
            self.counters["drop_bad_contract"] += 1
            return False
        requester_pub = self.node_keys.get(sender_id)
        if (
            contract.provider_id != self.node_id
            or contract.requester_id != sender_id
            or contract.contract_id != txid
            or contract.capability.id != capability.id
            or contract.expiry_us <= self.now_us()
            or requester_pub is None
            or not verify(requester_pub, msg.contract_body, msg.signature)
            or msg.ephemeral is None
        ):
            self.counters["drop_bad_contract"] += 1
            return False
        if not ephemeral_signature_valid(
            requester_pub, msg.ephemeral.public, txid, msg.ephemeral.signature
        ):
            self.counters["drop_bad_contract"] += 1
            return False
        keys = establish_session(eph_priv, msg.ephemeral.public, salt=txid, initiator=False)
        contract.requester_signature = msg.signature
        contract.provider_signature = self.identity.sign(msg.contract_body)
        session = _ProviderSession(contract, keys, sender_id, frm)
        session_key = (sender_id, wire.capability_hash(capability.id))
        self.provider_sessions[session_key] = session

        def on_never_acked() -> None:
            # The requester vanished before acknowledging; drop the session.
            if self.provider_sessions.get(session_key) is session:
                del self.provider_sessions[session_key]

        self.send_request(
            frm,
            PacketType.CONTRACT_SIGNED,
            ContractSigned(msg.contract_body, contract.provider_signature),
            txid=txid,
            flags=Flags.REQUIRES_ACK,
            cap_hash=wire.capability_hash(capability.id),
            on_reply=lambda _f, _s, _p, _m: None,
            on_timeout=on_never_acked,
            retransmit=True,
        )
        self.emit("contract_signed", contract=txid.hex(), requester=frm,
                  capability=capability.id)
        if packet.header.flags & Flags.IS_STREAMING:
            self._start_stream(session)
        return True

    def _handle_encrypted(self, frm: str, sender_id: bytes, packet: wire.TipPacket) -> bool:
        header = packet.header
        session = self.provider_sessions.get((sender_id, header.capability_hash))
        if session is None or header.packet_type != PacketType.DATA_REQUEST:
            self.counters["drop_no_session"] += 1
            return False
        aad = packet.raw[:48] + bytes(68)
        try:
            plaintext = open_sealed(session.keys, packet.payload, aad)
        except AuthFailure:
            self.counters["drop_auth_failure"] += 1
            return False
        try:
            msg = payloads.decode_payload(header.packet_type, plaintext)
        except (payloads.SchemaMismatch, cbor.MalformedCbor):
            self.counters["drop_bad_payload"] += 1
            return False
        if not isinstance(msg, DataRequest):
            return False
        return self._handle_data_request(frm, sender_id, packet, msg, session)

    def _handle_data_request(self, frm, sender_id, packet, msg: DataRequest,
                             session: _ProviderSession) -> bool:
        contract = session.contract
        if msg.contract_id != contract.contract_id:
            self.counters["drop_contract_mismatch"] += 1
            return False
        cap_hash = wire.capability_hash(contract.capability.id)
        if contract.expiry_us <= self.now_us():
            value = {"error": "contract expired"}
            self._send_data_response(frm, packet.header.transaction_id, session, cap_hash,
                                     value, flags=0)
            return True
        served = self.served.get(contract.capability.id)
        if served is None:
            value = {"error": "capability no longer served"}
            self._send_data_response(frm, packet.header.transaction_id, session, cap_hash,
                                     value, flags=0)
            return True
        try:
            value = served.handler(msg.params)
        except Exception as exc:  # handler faults become error maps, not drops
            log.warning("%s: handler for %s raised: %s", self.address, contract.capability.id, exc)
            value = {"error": str(exc) or type(exc).__name__}
        flags = Flags.HAS_ADAPTER if contract.adapter_id is not None else 0
        self._send_data_response(frm, packet.header.transaction_id, session, cap_hash,
                                 value, flags=flags)
        self.emit("data_served", capability=contract.capability.id)
        return True

    def _send_data_response(self, to, txid, session: _ProviderSession, cap_hash, value,
                            flags: int) -> None:
        response = DataResponse(session.contract.contract_id, cbor.encode(value))
        self.send_packet(
            to, PacketType.DATA_RESPONSE, response, txid=txid,
            flags=flags, cap_hash=cap_hash, session=session.keys,
        )

    def _start_stream(self, session: _ProviderSession) -> None:
        rate = max(session.contract.capability.rate_hz, 0.1)
        period_us = int(1_000_000 / rate)
        cap_hash = wire.capability_hash(session.contract.capability.id)

        def push() -> None:
            if session.contract.expiry_us <= self.now_us():
                return  # stream ends with the contract
            served = self.served.get(session.contract.capability.id)
            if served is None:
                return
            try:
                value = served.handler({})
            except Exception as exc:
                value = {"error": str(exc) or type(exc).__name__}
            flags = Flags.IS_STREAMING
            if session.contract.adapter_id is not None:
                flags |= Flags.HAS_ADAPTER
            self._send_data_response(session.requester_address, self.new_transaction_id(),
                                     session, cap_hash, value, flags=flags)
            session.stream_timer = self.call_later(period_us, push)

        session.stream_timer = self.call_later(period_us, push)

    # --- shutdown -------------------------------------------------------------

    def flush_reputation(self, path: str | None) -> None:
        if path:
            self.reputation.save(path)
