"""Minimal CoAP (RFC 7252) framing for carrying TIP frames over UDP.

Frames ride as confirmable POSTs to Uri-Path "tip" with Content-Format 42
(application/octet-stream), payload after the 0xFF marker. Options use the
standard delta encoding with the 13/14 extended forms. No blockwise, no
observe, no CoAP-layer retransmission; reliability lives in the TIP layer.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

COAP_VERSION = 1
TYPE_CON = 0
TYPE_NON = 1
TYPE_ACK = 2

CODE_POST = 0x02  # 0.02
CODE_CONTENT = 0x45  # 2.05

OPT_URI_PATH = 11
OPT_CONTENT_FORMAT = 12

TIP_URI_PATH = "tip"
CONTENT_FORMAT_OCTET_STREAM = 42

PAYLOAD_MARKER = 0xFF


class CoapError(Exception):
    pass


class NotCoap(CoapError):
    pass


class WrongPath(CoapError):
    pass


class WrongContentFormat(CoapError):
    pass


class NoPayload(CoapError):
    pass


@dataclass
class CoapMessage:
    version: int = COAP_VERSION
    type: int = TYPE_CON
    code: int = CODE_POST
    message_id: int = 0
    token: bytes = b""
    options: list[tuple[int, bytes]] = field(default_factory=list)
    payload: bytes = b""


def _ext_value(value: int) -> tuple[int, bytes]:
    """Nibble + extension bytes for an option delta or length."""
    if value < 13:
        return value, b""
    if value < 269:
        return 13, bytes([value - 13])
    return 14, (value - 269).to_bytes(2, "big")


def encode_message(msg: CoapMessage) -> bytes:
    if not 0 <= len(msg.token) <= 8:
        raise ValueError("token must be 0..8 bytes")
    out = bytearray()
    out.append((msg.version & 0x3) << 6 | (msg.type & 0x3) << 4 | len(msg.token))
    out.append(msg.code & 0xFF)
    out += msg.message_id.to_bytes(2, "big")
    out += msg.token
    previous = 0
    for number, value in sorted(msg.options, key=lambda o: o[0]):
        delta_nibble, delta_ext = _ext_value(number - previous)
        length_nibble, length_ext = _ext_value(len(value))
        out.append(delta_nibble << 4 | length_nibble)
        out += delta_ext
        out += length_ext
        out += value
        previous = number
    if msg.payload:
        out.append(PAYLOAD_MARKER)
        out += msg.payload
    return bytes(out)


def decode_message(data: bytes) -> CoapMessage:
    if len(data) < 4:
        raise NotCoap("shorter than a CoAP header")
    version = data[0] >> 6
    if version != COAP_VERSION:
        raise NotCoap(f"version {version}")
    token_length = data[0] & 0x0F
    if token_length > 8:
        raise NotCoap("token length > 8 is reserved")
    msg = CoapMessage(
        version=version,
        type=(data[0] >> 4) & 0x3,
        code=data[1],
        message_id=int.from_bytes(data[2:4], "big"),
    )
    pos = 4
    if pos + token_length > len(data):
        raise NotCoap("truncated token")
    msg.token = data[pos : pos + token_length]
    pos += token_length

    number = 0
    while pos < len(data):
        byte = data[pos]
        if byte == PAYLOAD_MARKER:
            pos += 1
            if pos >= len(data):
                raise NoPayload("payload marker with empty payload")
            msg.payload = data[pos:]
            return msg
        pos += 1
        delta, length = byte >> 4, byte & 0x0F
        if delta == 15 or length == 15:
            raise NotCoap("reserved option nibble 15")

        def _extended(nibble: int, pos: int) -> tuple[int, int]:
            if nibble == 13:
                if pos >= len(data):
                    raise NotCoap("truncated option extension")
                return data[pos] + 13, pos + 1
            if nibble == 14:
                if pos + 2 > len(data):
                    raise NotCoap("truncated option extension")
                return int.from_bytes(data[pos : pos + 2], "big") + 269, pos + 2
            return nibble, pos

        delta, pos = _extended(delta, pos)
        length, pos = _extended(length, pos)
        if pos + length > len(data):
            raise NotCoap("truncated option value")
        number += delta
        msg.options.append((number, data[pos : pos + length]))
        pos += length
    return msg


def _uint_option(value: int) -> bytes:
    if value == 0:
        return b""
    return value.to_bytes((value.bit_length() + 7) // 8, "big")


def _decode_uint(value: bytes) -> int:
    return int.from_bytes(value, "big")


def coap_wrap(tip_frame: bytes, rng: random.Random | None = None) -> bytes:
    """Wrap a TIP frame as CON POST /tip with Content-Format 42."""
    rng = rng or random
    msg = CoapMessage(
        type=TYPE_CON,
        code=CODE_POST,
        message_id=rng.getrandbits(16),
        token=rng.getrandbits(32).to_bytes(4, "big"),
        options=[
            (OPT_URI_PATH, TIP_URI_PATH.encode("ascii")),
            (OPT_CONTENT_FORMAT, _uint_option(CONTENT_FORMAT_OCTET_STREAM)),
        ],
        payload=tip_frame,
    )
    return encode_message(msg)


def coap_unwrap(data: bytes) -> bytes:
    """Extract the TIP frame, enforcing path and content format."""
    msg = decode_message(data)
    if msg.code not in (CODE_POST, CODE_CONTENT):
        raise NotCoap(f"unexpected code 0x{msg.code:02x}")
    path_segments = [v.decode("utf-8", "replace") for n, v in msg.options if n == OPT_URI_PATH]
    if path_segments != [TIP_URI_PATH]:
        raise WrongPath(f"uri path {path_segments!r}")
    formats = [_decode_uint(v) for n, v in msg.options if n == OPT_CONTENT_FORMAT]
    if formats != [CONTENT_FORMAT_OCTET_STREAM]:
        raise WrongContentFormat(f"content format {formats!r}")
    if not msg.payload:
        raise NoPayload("no payload after marker")
    return msg.payload
