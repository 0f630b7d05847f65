"""Bit-exact packet header codec, construction and the validation pipeline.

Every packet is a fixed 116-byte big-endian header followed by a CBOR
payload. Layout (offset, size):

    0   2   magic            0x5449
    2   1   version          0x01
    3   1   packet type
    4   16  transaction id   UUID v4
    20  4   payload length
    24  4   capability hash  CRC32 of the capability id
    28  4   sequence number
    32  4   flags
    36  8   timestamp        epoch microseconds UTC
    44  4   ttl              milliseconds
    48  4   checksum         CRC32
    52  64  signature        Ed25519

Checksum/signature construction order (the two fields cannot cover each
other simultaneously): the signature is computed over bytes 0-51 with the
checksum field zeroed, concatenated with the payload; the checksum is then
CRC32 over bytes 0-47, the signature bytes 52-115 and the payload.
Verification mirrors this exactly.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

from .crypto import BadSignature, ReplayCache, check_replay, verify

MAGIC = 0x5449
VERSION = 0x01
HEADER_LEN = 116
_HEADER_FMT = ">HBB16sIIIIQII64s"
DEFAULT_MAX_PAYLOAD = 64 * 1024

# Table-driven field layout, used by the offset tests and the vector manifest.
FIELD_LAYOUT = {
    "magic": (0, 2),
    "version": (2, 1),
    "packet_type": (3, 1),
    "transaction_id": (4, 16),
    "payload_length": (20, 4),
    "capability_hash": (24, 4),
    "sequence_number": (28, 4),
    "flags": (32, 4),
    "timestamp": (36, 8),
    "ttl": (44, 4),
    "checksum": (48, 4),
    "signature": (52, 64),
}


class WireError(Exception):
    pass


class TooShort(WireError):
    pass


class BadMagic(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class UnknownPacketType(WireError):
    pass


class ChecksumMismatch(WireError):
    pass


class ReplayDetected(WireError):
    pass


class Expired(WireError):
    pass


class PayloadTooLarge(WireError):
    pass


class EmptyCapability(WireError):
    pass


class UnsupportedFlag(WireError):
    pass


class PacketType(enum.IntEnum):
    DISCOVERY_ANNOUNCE = 0x00
    DISCOVERY_QUERY = 0x01
    INTENT_REQUEST = 0x02
    INTENT_PROPOSAL = 0x03
    CONTRACT_ACCEPT = 0x04
    RESERVED_05 = 0x05
    CONTRACT_SIGNED = 0x06
    DATA_REQUEST = 0x07
    DATA_RESPONSE = 0x08

    @classmethod
    def from_code(cls, code: int) -> "PacketType":
        if code == cls.RESERVED_05 or code > cls.DATA_RESPONSE or code < 0:
            raise UnknownPacketType(f"unknown packet type 0x{code:02x}")
        return cls(code)


class Flags(enum.IntFlag):
    REQUIRES_ACK = 0x01
    IS_COMPRESSED = 0x02
    IS_ENCRYPTED = 0x04
    HAS_ADAPTER = 0x08
    IS_STREAMING = 0x40


# Bits 4-5 and >= 7 are carried verbatim but never set by this implementation.
SETTABLE_FLAGS = (
    Flags.REQUIRES_ACK | Flags.IS_ENCRYPTED | Flags.HAS_ADAPTER | Flags.IS_STREAMING
)


@dataclass
class PacketHeader:
    magic: int
    version: int
    packet_type: int
    transaction_id: bytes
    payload_length: int
    capability_hash: int
    sequence_number: int
    flags: int
    timestamp_us: int
    ttl_ms: int
    checksum: int
    signature: bytes


@dataclass
class TipPacket:
    header: PacketHeader
    payload: bytes

    @property
    def raw(self) -> bytes:
        return encode_header(self.header) + self.payload


def crc32(data: bytes) -> int:
    """Standard CRC-32 (reflected 0xEDB88320, init/final-xor 0xFFFFFFFF)."""
    return zlib.crc32(data) & 0xFFFFFFFF


def capability_hash(capability_id: str) -> int:
    if not capability_id:
        raise EmptyCapability("capability id must be non-empty")
    return crc32(capability_id.encode("utf-8"))


def encode_header(h: PacketHeader) -> bytes:
    return struct.pack(
        _HEADER_FMT,
        h.magic,
        h.version,
        h.packet_type,
        h.transaction_id,
        h.payload_length,
        h.capability_hash,
        h.sequence_number,
        h.flags,
        h.timestamp_us,
        h.ttl_ms,
        h.checksum,
        h.signature,
    )


def decode_header(data: bytes) -> PacketHeader:
    if len(data) < HEADER_LEN:
        raise TooShort(f"need {HEADER_LEN} bytes, have {len(data)}")
    fields = struct.unpack(_HEADER_FMT, data[:HEADER_LEN])
    if fields[0] != MAGIC:
        raise BadMagic(f"magic 0x{fields[0]:04x} != 0x{MAGIC:04x}")
    if fields[1] != VERSION:
        raise UnsupportedVersion(f"version 0x{fields[1]:02x}")
    return PacketHeader(*fields)


def _signing_input(header_bytes: bytes, payload: bytes) -> bytes:
    """Bytes 0-51 with the checksum field zeroed, then the payload."""
    return header_bytes[:48] + b"\x00\x00\x00\x00" + payload


def _checksum_input(header_bytes: bytes, payload: bytes) -> bytes:
    """Bytes 0-47, the signature bytes 52-115, then the payload."""
    return header_bytes[:48] + header_bytes[52:116] + payload


def build_packet(
    *,
    packet_type: int,
    transaction_id: bytes,
    payload: bytes,
    signing_key,
    sequence_number: int,
    timestamp_us: int,
    ttl_ms: int = 60_000,
    capability_hash: int = 0,
    flags: int = 0,
    max_payload: int = DEFAULT_MAX_PAYLOAD,
) -> TipPacket:
    """Construct a signed, checksummed packet.

    signing_key is an Ed25519 private key object (NodeIdentity.signing_private).
    """
    if len(payload) > max_payload:
        raise PayloadTooLarge(f"{len(payload)} > {max_payload}")
    if flags & Flags.IS_COMPRESSED:
        raise UnsupportedFlag("compression is not implemented; IS_COMPRESSED may not be set")
    if len(transaction_id) != 16:
        raise ValueError("transaction_id must be 16 bytes")
    PacketType.from_code(packet_type)

    header = PacketHeader(
        magic=MAGIC,
        version=VERSION,
        packet_type=packet_type,
        transaction_id=transaction_id,
        payload_length=len(payload),
        capability_hash=capability_hash,
        sequence_number=sequence_number & 0xFFFFFFFF,
        flags=flags,
        timestamp_us=timestamp_us,
        ttl_ms=ttl_ms,
        checksum=0,
        signature=bytes(64),
    )
    base = encode_header(header)
    header.signature = signing_key.sign(_signing_input(base, payload))
    signed = encode_header(header)
    header.checksum = crc32(_checksum_input(signed, payload))
    return TipPacket(header, payload)


def validate_packet(
    raw: bytes,
    sender_public: bytes,
    now_us: int,
    replay_cache: ReplayCache,
) -> TipPacket:
    """Run the receive pipeline in order; the first failing stage wins.

    Order: length, magic (and version), checksum, signature, replay, TTL.
    """
    header = decode_header(raw)  # raises TooShort / BadMagic / UnsupportedVersion
    payload = raw[HEADER_LEN:]
    if header.payload_length != len(payload):
        raise ChecksumMismatch(
            f"declared payload length {header.payload_length} != actual {len(payload)}"
        )
    header_bytes = raw[:HEADER_LEN]
    expected = crc32(_checksum_input(header_bytes, payload))
    if expected != header.checksum:
        raise ChecksumMismatch(f"crc 0x{expected:08x} != stored 0x{header.checksum:08x}")
    if not verify(sender_public, _signing_input(header_bytes, payload), header.signature):
        raise BadSignature("packet signature invalid")
    if not check_replay(replay_cache, header.timestamp_us, header.sequence_number, now_us):
        raise ReplayDetected(
            f"seq={header.sequence_number} ts={header.timestamp_us} rejected at now={now_us}"
        )
    if now_us > header.timestamp_us + header.ttl_ms * 1000:
        raise Expired(f"ttl {header.ttl_ms}ms exceeded")
    return TipPacket(header, payload)
