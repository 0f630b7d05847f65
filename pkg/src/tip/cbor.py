"""Canonical deterministic CBOR subset used for all packet payloads.

Encoding rules (fixed so that every implementation produces identical bytes
for identical logical values):
  - definite lengths only, minimal-length integer heads
  - map keys sorted by their encoded bytes (integer keys ascending, before
    text keys)
  - floats always encoded as 64-bit (major 7, ai 27)

The decoder accepts 16/32/64-bit floats and rejects indefinite-length items.
"""

from __future__ import annotations

import struct
from typing import Any


class MalformedCbor(Exception):
    """Input is not decodable under the canonical subset."""


def _head(major: int, arg: int) -> bytes:
    if arg < 24:
        return bytes([major << 5 | arg])
    if arg < 0x100:
        return bytes([major << 5 | 24, arg])
    if arg < 0x10000:
        return struct.pack(">BH", major << 5 | 25, arg)
    if arg < 0x100000000:
        return struct.pack(">BI", major << 5 | 26, arg)
    return struct.pack(">BQ", major << 5 | 27, arg)


def _encode_key(key: Any) -> bytes:
    if not isinstance(key, (int, str)) or isinstance(key, bool):
        raise TypeError(f"unsupported CBOR map key type: {type(key).__name__}")
    return encode(key)


def encode(value: Any) -> bytes:
    """Encode a value to canonical CBOR bytes."""
    if value is True:
        return b"\xf5"
    if value is False:
        return b"\xf4"
    if value is None:
        return b"\xf6"
    if isinstance(value, int):
        if value >= 0:
            return _head(0, value)
        return _head(1, -1 - value)
    if isinstance(value, float):
        return b"\xfb" + struct.pack(">d", value)
    if isinstance(value, (bytes, bytearray, memoryview)):
        data = bytes(value)
        return _head(2, len(data)) + data
    if isinstance(value, str):
        data = value.encode("utf-8")
        return _head(3, len(data)) + data
    if isinstance(value, (list, tuple)):
        out = bytearray(_head(4, len(value)))
        for item in value:
            out += encode(item)
        return bytes(out)
    if isinstance(value, dict):
        entries = sorted((_encode_key(k), encode(v)) for k, v in value.items())
        out = bytearray(_head(5, len(value)))
        for key_bytes, value_bytes in entries:
            out += key_bytes
            out += value_bytes
        return bytes(out)
    raise TypeError(f"unsupported CBOR type: {type(value).__name__}")


def _read(data: bytes, offset: int, n: int) -> bytes:
    if offset + n > len(data):
        raise MalformedCbor("truncated CBOR item")
    return data[offset : offset + n]


def _decode_head(data: bytes, offset: int) -> tuple[int, int, int]:
    initial = _read(data, offset, 1)[0]
    major, ai = initial >> 5, initial & 0x1F
    offset += 1
    if ai < 24:
        return major, ai, offset
    if ai == 24:
        return major, _read(data, offset, 1)[0], offset + 1
    if ai == 25:
        return major, struct.unpack(">H", _read(data, offset, 2))[0], offset + 2
    if ai == 26:
        return major, struct.unpack(">I", _read(data, offset, 4))[0], offset + 4
    if ai == 27:
        return major, struct.unpack(">Q", _read(data, offset, 8))[0], offset + 8
    raise MalformedCbor(f"unsupported additional info {ai} (indefinite lengths rejected)")


def _decode_item(data: bytes, offset: int, depth: int) -> tuple[Any, int]:
    if depth > 64:
        raise MalformedCbor("nesting too deep")
    initial = _read(data, offset, 1)[0]
    major, ai = initial >> 5, initial & 0x1F

    # Major 7 carries simple values and floats; handle before generic head
    # parsing since ai is not a length there.
    if major == 7:
        offset += 1
        if ai == 20:
            return False, offset
        if ai == 21:
            return True, offset
        if ai == 22:
            return None, offset
        if ai == 25:
            return struct.unpack(">e", _read(data, offset, 2))[0], offset + 2
        if ai == 26:
            return struct.unpack(">f", _read(data, offset, 4))[0], offset + 4
        if ai == 27:
            return struct.unpack(">d", _read(data, offset, 8))[0], offset + 8
        raise MalformedCbor(f"unsupported simple value {ai}")

    major, arg, offset = _decode_head(data, offset)
    if major == 0:
        return arg, offset
    if major == 1:
        return -1 - arg, offset
    if major == 2:
        return bytes(_read(data, offset, arg)), offset + arg
    if major == 3:
        raw = _read(data, offset, arg)
        try:
            return raw.decode("utf-8"), offset + arg
        except UnicodeDecodeError as exc:
            raise MalformedCbor("invalid UTF-8 in text string") from exc
    if major == 4:
        items = []
        for _ in range(arg):
            item, offset = _decode_item(data, offset, depth + 1)
            items.append(item)
        return items, offset
    if major == 5:
        result: dict[Any, Any] = {}
        for _ in range(arg):
            key, offset = _decode_item(data, offset, depth + 1)
            if not isinstance(key, (int, str)):
                raise MalformedCbor("non int/text map key")
            if key in result:
                raise MalformedCbor(f"duplicate map key {key!r}")
            value, offset = _decode_item(data, offset, depth + 1)
            result[key] = value
        return result, offset
    raise MalformedCbor(f"unsupported major type {major}")


def decode(data: bytes) -> Any:
    """Decode a single CBOR item; trailing bytes are an error."""
    value, offset = _decode_item(data, 0, 0)
    if offset != len(data):
        raise MalformedCbor(f"{len(data) - offset} trailing bytes after CBOR item")
    return value
