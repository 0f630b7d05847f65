"""CBOR payload schemas for each packet type.

All payloads are canonical CBOR maps with integer keys. The announce schema
doubles as the DHT STORE / FIND_NODE reply carrier through optional extension
keys (>= 3); keys 0-2 always mean node_id / capability records / addresses.

Empty payloads are meaningful twice: an empty DISCOVERY_QUERY is a ping, an
empty DATA_RESPONSE is an ack.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from . import cbor
from .model import Capability, DataSchema, NodeRecord, ProviderRecord
from .wire import PacketType


class SchemaMismatch(Exception):
    """Payload does not match the packet type's schema."""


@dataclass
class SignedEphemeral:
    public: bytes
    signature: bytes

    def to_cbor(self) -> dict:
        return {0: self.public, 1: self.signature}

    @classmethod
    def from_cbor(cls, obj: dict) -> "SignedEphemeral":
        return cls(obj[0], obj[1])

    def record_bytes(self) -> bytes:
        return cbor.encode(self.to_cbor())


@dataclass
class DiscoveryAnnounce:
    node_id: bytes
    capabilities: list[Capability] = field(default_factory=list)
    addresses: list[str] = field(default_factory=list)
    signing_public: bytes | None = None
    record_signature: bytes | None = None
    target_key: bytes | None = None
    neighbors: list[NodeRecord] = field(default_factory=list)
    providers: list[ProviderRecord] = field(default_factory=list)
    txt_records: list[dict] = field(default_factory=list)
    availability: float = 1.0


@dataclass
class DiscoveryQuery:
    capability_id: str | None = None
    target_key: bytes | None = None
    sender_record: NodeRecord | None = None  # lets strangers self-certify us

    @property
    def is_ping(self) -> bool:
        return self.capability_id is None and self.target_key is None


@dataclass
class IntentRequest:
    capability_id: str
    desired_schema: DataSchema
    params: dict = field(default_factory=dict)
    constraints: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    sender_record: NodeRecord | None = None


@dataclass
class IntentProposal:
    capability: Capability
    measured_rtt_ms: float = 0.0
    availability: float = 1.0
    adapter_required: bool = False
    ephemeral: SignedEphemeral | None = None


@dataclass
class ContractAccept:
    contract_body: bytes
    signature: bytes
    ephemeral: SignedEphemeral | None = None


@dataclass
class ContractSigned:
    contract_body: bytes
    signature: bytes


@dataclass
class DataRequest:
    contract_id: bytes
    params: dict = field(default_factory=dict)


@dataclass
class DataResponse:
    contract_id: bytes
    value_bytes: bytes


@dataclass
class Ack:
    """Empty DATA_RESPONSE acknowledging a REQUIRES_ACK packet."""


PayloadMessage = (
    DiscoveryAnnounce
    | DiscoveryQuery
    | IntentRequest
    | IntentProposal
    | ContractAccept
    | ContractSigned
    | DataRequest
    | DataResponse
    | Ack
)


def encode_payload(msg: PayloadMessage) -> bytes:
    if isinstance(msg, Ack):
        return b""
    if isinstance(msg, DiscoveryAnnounce):
        obj: dict[int, Any] = {
            0: msg.node_id,
            1: [c.to_cbor() for c in msg.capabilities],
            2: list(msg.addresses),
        }
        if msg.signing_public is not None:
            obj[3] = msg.signing_public
        if msg.record_signature is not None:
            obj[4] = msg.record_signature
        if msg.target_key is not None:
            obj[5] = msg.target_key
        if msg.neighbors:
            obj[6] = [n.to_cbor() for n in msg.neighbors]
        if msg.providers:
            obj[7] = [p.to_cbor() for p in msg.providers]
        if msg.txt_records:
            obj[8] = msg.txt_records
        if msg.availability != 1.0:
            obj[9] = float(msg.availability)
        return cbor.encode(obj)
    if isinstance(msg, DiscoveryQuery):
        if msg.is_ping and msg.sender_record is None:
            return b""
        obj = {}
        if msg.target_key is not None:
            obj[0] = msg.target_key
        elif msg.capability_id is not None:
            obj[0] = msg.capability_id
        if msg.sender_record is not None:
            obj[1] = msg.sender_record.to_cbor()
        return cbor.encode(obj)
    if isinstance(msg, IntentRequest):
        obj = {
            0: msg.capability_id,
            1: int(msg.desired_schema),
            2: msg.params,
            3: {k: float(v) for k, v in msg.constraints.items()},
            4: {k: float(v) for k, v in msg.weights.items()},
        }
        if msg.sender_record is not None:
            obj[5] = msg.sender_record.to_cbor()
        return cbor.encode(obj)
    if isinstance(msg, IntentProposal):
        obj = {
            0: msg.capability.to_cbor(),
            1: float(msg.measured_rtt_ms),
            2: float(msg.availability),
            3: bool(msg.adapter_required),
        }
        if msg.ephemeral is not None:
            obj[4] = msg.ephemeral.to_cbor()
        return cbor.encode(obj)
    if isinstance(msg, ContractAccept):
        obj = {0: msg.contract_body, 1: msg.signature}
        if msg.ephemeral is not None:
            obj[2] = msg.ephemeral.to_cbor()
        return cbor.encode(obj)
    if isinstance(msg, ContractSigned):
        return cbor.encode({0: msg.contract_body, 1: msg.signature})
    if isinstance(msg, DataRequest):
        return cbor.encode({0: msg.contract_id, 2: msg.params})
    if isinstance(msg, DataResponse):
        return cbor.encode({0: msg.contract_id, 1: msg.value_bytes})
    raise SchemaMismatch(f"no schema for {type(msg).__name__}")


def _require(obj: dict, key: int, kind, what: str):
    if key not in obj:
        raise SchemaMismatch(f"missing key {key} ({what})")
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise SchemaMismatch(f"key {key} ({what}): expected {kind}, got {type(value).__name__}")
    return value


def decode_payload(packet_type: int, data: bytes) -> PayloadMessage:
    ptype = PacketType.from_code(packet_type)
    if data == b"":
        if ptype == PacketType.DISCOVERY_QUERY:
            return DiscoveryQuery()
        if ptype == PacketType.DATA_RESPONSE:
            return Ack()
        raise SchemaMismatch(f"empty payload invalid for {ptype.name}")

    obj = cbor.decode(data)
    if not isinstance(obj, dict):
        raise SchemaMismatch("payload must be a CBOR map")
    try:
        return _decode_typed(ptype, obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"{ptype.name}: {exc}") from exc


def _decode_typed(ptype: PacketType, obj: dict) -> PayloadMessage:
    if ptype == PacketType.DISCOVERY_ANNOUNCE:
        return DiscoveryAnnounce(
            node_id=_require(obj, 0, bytes, "node_id"),
            capabilities=[Capability.from_cbor(c) for c in _require(obj, 1, list, "capabilities")],
            addresses=list(_require(obj, 2, list, "addresses")),
            signing_public=obj.get(3),
            record_signature=obj.get(4),
            target_key=obj.get(5),
            neighbors=[NodeRecord.from_cbor(n) for n in obj.get(6, [])],
            providers=[ProviderRecord.from_cbor(p) for p in obj.get(7, [])],
            txt_records=list(obj.get(8, [])),
            availability=float(obj.get(9, 1.0)),
        )
    if ptype == PacketType.DISCOVERY_QUERY:
        sender = obj.get(1)
        sender_record = NodeRecord.from_cbor(sender) if sender is not None else None
        key = obj.get(0)
        if key is None:
            return DiscoveryQuery(sender_record=sender_record)
        if isinstance(key, bytes):
            if len(key) != 32:
                raise SchemaMismatch("target_key must be 32 bytes")
            return DiscoveryQuery(target_key=key, sender_record=sender_record)
        if isinstance(key, str):
            return DiscoveryQuery(capability_id=key, sender_record=sender_record)
        raise SchemaMismatch("query key 0 must be text or 32-byte key")
    if ptype == PacketType.INTENT_REQUEST:
        sender = obj.get(5)
        return IntentRequest(
            capability_id=_require(obj, 0, str, "capability_id"),
            desired_schema=DataSchema(_require(obj, 1, int, "desired_schema")),
            params=dict(_require(obj, 2, dict, "params")),
            constraints=dict(_require(obj, 3, dict, "constraints")),
            weights=dict(_require(obj, 4, dict, "weights")),
            sender_record=NodeRecord.from_cbor(sender) if sender is not None else None,
        )
    if ptype == PacketType.INTENT_PROPOSAL:
        eph = obj.get(4)
        return IntentProposal(
            capability=Capability.from_cbor(_require(obj, 0, dict, "capability")),
            measured_rtt_ms=_require(obj, 1, float, "measured_rtt_ms"),
            availability=_require(obj, 2, float, "availability"),
            adapter_required=_require(obj, 3, bool, "adapter_required"),
            ephemeral=SignedEphemeral.from_cbor(eph) if eph is not None else None,
        )
    if ptype == PacketType.CONTRACT_ACCEPT:
        eph = obj.get(2)
        return ContractAccept(
            contract_body=_require(obj, 0, bytes, "contract body"),
            signature=_require(obj, 1, bytes, "signature"),
            ephemeral=SignedEphemeral.from_cbor(eph) if eph is not None else None,
        )
    if ptype == PacketType.CONTRACT_SIGNED:
        return ContractSigned(
            contract_body=_require(obj, 0, bytes, "contract body"),
            signature=_require(obj, 1, bytes, "signature"),
        )
    if ptype == PacketType.DATA_REQUEST:
        return DataRequest(
            contract_id=_require(obj, 0, bytes, "contract_id"),
            params=dict(_require(obj, 2, dict, "params")),
        )
    if ptype == PacketType.DATA_RESPONSE:
        return DataResponse(
            contract_id=_require(obj, 0, bytes, "contract_id"),
            value_bytes=_require(obj, 1, bytes, "value bytes"),
        )
    raise SchemaMismatch(f"no schema for {ptype.name}")


def packet_type_for(msg: PayloadMessage) -> PacketType:
    mapping = {
        DiscoveryAnnounce: PacketType.DISCOVERY_ANNOUNCE,
        DiscoveryQuery: PacketType.DISCOVERY_QUERY,
        IntentRequest: PacketType.INTENT_REQUEST,
        IntentProposal: PacketType.INTENT_PROPOSAL,
        ContractAccept: PacketType.CONTRACT_ACCEPT,
        ContractSigned: PacketType.CONTRACT_SIGNED,
        DataRequest: PacketType.DATA_REQUEST,
        DataResponse: PacketType.DATA_RESPONSE,
    }
    try:
        return mapping[type(msg)]
    except KeyError:
        raise SchemaMismatch(f"{type(msg).__name__} has no packet type") from None
