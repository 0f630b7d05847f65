"""Domain tuples shared across discovery, negotiation and the orchestrator."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import cbor
from .crypto import node_id_for


class DataSchema(enum.IntEnum):
    U16 = 0
    U32 = 1
    I32 = 2
    F32 = 3
    F64 = 4
    CBOR_MAP = 5

    @classmethod
    def from_name(cls, name: str) -> "DataSchema":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown schema {name!r}") from None

    @property
    def wire_name(self) -> str:
        return self.name.lower()


INTEGER_SCHEMAS = {DataSchema.U16, DataSchema.U32, DataSchema.I32}
SCHEMA_RANGES = {
    DataSchema.U16: (0, 0xFFFF),
    DataSchema.U32: (0, 0xFFFFFFFF),
    DataSchema.I32: (-(2**31), 2**31 - 1),
}


@dataclass(frozen=True)
class Capability:
    """Provider-advertised service tuple."""

    id: str
    schema: DataSchema
    version: str = "1.0.0"
    precision: float = 1.0
    rate_hz: float = 1.0

    def __post_init__(self):
        if not self.id:
            raise ValueError("capability id must be non-empty")
        if not 0.0 <= self.precision <= 1.0:
            raise ValueError("precision must be in [0, 1]")
        if self.rate_hz < 0:
            raise ValueError("rate_hz must be >= 0")

    def to_cbor(self) -> dict:
        return {
            0: self.id,
            1: int(self.schema),
            2: self.version,
            3: float(self.precision),
            4: float(self.rate_hz),
        }

    @classmethod
    def from_cbor(cls, obj: dict) -> "Capability":
        return cls(
            id=obj[0],
            schema=DataSchema(obj[1]),
            version=obj[2],
            precision=float(obj[3]),
            rate_hz=float(obj[4]),
        )


@dataclass
class NodeRecord:
    """A node's identity, reachability and advertised capabilities."""

    node_id: bytes
    signing_public: bytes
    addresses: list[str]
    capabilities: list[Capability]
    last_seen: int = 0
    availability: float = 1.0

    def __post_init__(self):
        if self.signing_public and node_id_for(self.signing_public) != self.node_id:
            raise ValueError("node_id must be SHA-256 of the signing public key")

    def has_capability(self, capability_id: str) -> bool:
        return any(c.id == capability_id for c in self.capabilities)

    def capability(self, capability_id: str) -> Capability | None:
        for c in self.capabilities:
            if c.id == capability_id:
                return c
        return None

    def to_cbor(self) -> dict:
        return {
            0: self.node_id,
            1: self.signing_public,
            2: list(self.addresses),
            3: [c.to_cbor() for c in self.capabilities],
            4: self.last_seen,
            5: float(self.availability),
        }

    @classmethod
    def from_cbor(cls, obj: dict) -> "NodeRecord":
        return cls(
            node_id=obj[0],
            signing_public=obj[1],
            addresses=list(obj[2]),
            capabilities=[Capability.from_cbor(c) for c in obj[3]],
            last_seen=int(obj.get(4, 0)),
            availability=float(obj.get(5, 1.0)),
        )


@dataclass(frozen=True)
class ProviderRecord:
    """A NodeRecord published into the DHT, signed by its owner."""

    record: NodeRecord
    signature: bytes

    def to_cbor(self) -> dict:
        return {0: self.record.to_cbor(), 1: self.signature}

    @classmethod
    def from_cbor(cls, obj: dict) -> "ProviderRecord":
        return cls(NodeRecord.from_cbor(obj[0]), obj[1])


WEIGHT_KEYS = ("func", "cost", "trust", "avail")


@dataclass
class Intent:
    """Declarative request: capability, desired schema, constraints, weights.

    Recognized constraint keys: max_latency_ms, min_precision, min_rate_hz.
    """

    capability_required: str
    desired_schema: DataSchema
    params: dict = field(default_factory=dict)
    constraints: dict = field(default_factory=dict)
    weights: dict = field(
        default_factory=lambda: {"func": 0.25, "cost": 0.25, "trust": 0.25, "avail": 0.25}
    )

    def __post_init__(self):
        if not self.capability_required:
            raise ValueError("capability_required must be non-empty")
        missing = [k for k in WEIGHT_KEYS if k not in self.weights]
        if missing:
            raise ValueError(f"missing weights: {missing}")
        if any(self.weights[k] < 0 for k in WEIGHT_KEYS):
            raise ValueError("weights must be >= 0")
        total = sum(self.weights[k] for k in WEIGHT_KEYS)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1.0, got {total}")


@dataclass
class Contract:
    """Dual-signed, time-bounded binding of requester to provider."""

    contract_id: bytes
    requester_id: bytes
    provider_id: bytes
    capability: Capability
    agreed_schema: DataSchema
    qos: dict
    expiry_us: int
    adapter_id: str | None = None
    requester_signature: bytes = b""
    provider_signature: bytes = b""

    def body_bytes(self) -> bytes:
        """Canonical CBOR body both parties sign."""
        return cbor.encode(
            {
                0: self.contract_id,
                1: self.requester_id,
                2: self.provider_id,
                3: self.capability.to_cbor(),
                4: int(self.agreed_schema),
                5: {k: float(v) for k, v in sorted(self.qos.items())},
                6: self.expiry_us,
                7: self.adapter_id,
            }
        )

    @classmethod
    def from_body(cls, body: bytes) -> "Contract":
        obj = cbor.decode(body)
        return cls(
            contract_id=obj[0],
            requester_id=obj[1],
            provider_id=obj[2],
            capability=Capability.from_cbor(obj[3]),
            agreed_schema=DataSchema(obj[4]),
            qos=obj[5],
            expiry_us=obj[6],
            adapter_id=obj[7],
        )
