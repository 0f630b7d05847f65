"""Identity, signatures, key exchange, payload encryption and anti-replay.

Static identity is Ed25519 (node_id = SHA-256 of the public key). Sessions
use ephemeral X25519 with both ephemerals signed by the static keys, HKDF
key derivation, and ChaCha20-Poly1305 with counter nonces. One AEAD key per
direction: a single key with both sides counting from zero would reuse
nonces.
"""

from __future__ import annotations

import hashlib
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import cbor

SESSION_INFO = b"tip-session-v1"
EPHEMERAL_CONTEXT = b"tip-ephemeral-v1"

DEFAULT_SKEW_WINDOW_US = 30_000_000
DEFAULT_LRU_CAPACITY = 4096


class CryptoError(Exception):
    pass


class BadSignature(CryptoError):
    """Ed25519 verification failed where a valid signature is mandatory."""


class LowOrderPoint(CryptoError):
    """X25519 exchange produced the all-zero shared secret."""


class AuthFailure(CryptoError):
    """AEAD tag mismatch: ciphertext, nonce or associated data was altered."""


class HandshakeTimeout(CryptoError):
    pass


@dataclass(frozen=True)
class NodeIdentity:
    """Static Ed25519 identity; node_id is content-derived from the key."""

    signing_private: Ed25519PrivateKey
    signing_public: bytes
    node_id: bytes

    @classmethod
    def generate(cls) -> "NodeIdentity":
        return cls.from_seed(os.urandom(32))

    @classmethod
    def from_seed(cls, seed: bytes) -> "NodeIdentity":
        if len(seed) != 32:
            raise ValueError("Ed25519 seed must be 32 bytes")
        private = Ed25519PrivateKey.from_private_bytes(seed)
        public = private.public_key().public_bytes_raw()
        return cls(private, public, hashlib.sha256(public).digest())

    @classmethod
    def load_key_file(cls, path: str) -> "NodeIdentity":
        with open(path, "r", encoding="ascii") as fh:
            seed = bytes.fromhex(fh.read().strip())
        return cls.from_seed(seed)

    def save_key_file(self, path: str) -> None:
        seed = self.signing_private.private_bytes_raw()
        with open(path, "w", encoding="ascii") as fh:
            fh.write(seed.hex() + "\n")

    def sign(self, message: bytes) -> bytes:
        return self.signing_private.sign(message)


def sign(key: Ed25519PrivateKey, message: bytes) -> bytes:
    return key.sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    """True iff signature is valid; never raises on bad input."""
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def node_id_for(public: bytes) -> bytes:
    return hashlib.sha256(public).digest()


# --- X25519 session establishment -----------------------------------------


def generate_ephemeral() -> tuple[X25519PrivateKey, bytes]:
    private = X25519PrivateKey.generate()
    return private, private.public_key().public_bytes_raw()


def derive_shared(local_private: X25519PrivateKey, remote_public: bytes) -> bytes:
    """Raw X25519 shared secret; rejects low-order results."""
    try:
        secret = local_private.exchange(X25519PublicKey.from_public_bytes(remote_public))
    except ValueError as exc:
        raise LowOrderPoint(str(exc)) from exc
    if secret == bytes(32):
        raise LowOrderPoint("all-zero shared secret")
    return secret


@dataclass
class SessionKeys:
    """Directional AEAD keys plus the per-direction nonce counter."""

    local_ephemeral_public: bytes
    shared_secret: bytes
    send_key: bytes
    recv_key: bytes
    send_nonce_counter: int = 0
    local_ephemeral_private: X25519PrivateKey | None = field(default=None, repr=False)


def establish_session(
    local_private: X25519PrivateKey,
    remote_public: bytes,
    salt: bytes,
    initiator: bool,
) -> SessionKeys:
    """Derive directional AEAD keys from the ECDH secret.

    The 64-byte HKDF output is split initiator->responder / responder->initiator;
    both sides derive identical material and pick opposite halves.
    """
    secret = derive_shared(local_private, remote_public)
    okm = HKDF(
        algorithm=hashes.SHA256(), length=64, salt=salt, info=SESSION_INFO
    ).derive(secret)
    i2r, r2i = okm[:32], okm[32:]
    return SessionKeys(
        local_ephemeral_public=local_private.public_key().public_bytes_raw(),
        shared_secret=secret,
        send_key=i2r if initiator else r2i,
        recv_key=r2i if initiator else i2r,
        local_ephemeral_private=local_private,
    )


def _nonce(counter: int) -> bytes:
    return b"\x00\x00\x00\x00" + struct.pack(">Q", counter)


def seal(session: SessionKeys, plaintext: bytes, aad: bytes) -> bytes:
    """Encrypt with the session send key; output is counter || ciphertext."""
    counter = session.send_nonce_counter
    session.send_nonce_counter += 1
    ct = ChaCha20Poly1305(session.send_key).encrypt(_nonce(counter), plaintext, aad)
    return struct.pack(">Q", counter) + ct


def open_sealed(session: SessionKeys, sealed: bytes, aad: bytes) -> bytes:
    if len(sealed) < 8 + 16:
        raise AuthFailure("sealed blob too short")
    counter = struct.unpack(">Q", sealed[:8])[0]
    try:
        return ChaCha20Poly1305(session.recv_key).decrypt(_nonce(counter), sealed[8:], aad)
    except InvalidTag as exc:
        raise AuthFailure("AEAD tag mismatch") from exc


# --- Anti-replay ------------------------------------------------------------


class ReplayCache:
    """Skew window plus LRU set of truncated nonce digests."""

    def __init__(
        self,
        skew_window_us: int = DEFAULT_SKEW_WINDOW_US,
        lru_capacity: int = DEFAULT_LRU_CAPACITY,
    ):
        self.skew_window_us = skew_window_us
        self.lru_capacity = lru_capacity
        self.seen: OrderedDict[bytes, None] = OrderedDict()

    def __len__(self) -> int:
        return len(self.seen)


def nonce_digest(timestamp_us: int, sequence: int) -> bytes:
    """First 64 bits of SHA-256 over (sequence widened to 64 bits) XOR timestamp."""
    value = (sequence & 0xFFFFFFFF) ^ (timestamp_us & 0xFFFFFFFFFFFFFFFF)
    return hashlib.sha256(struct.pack(">Q", value)).digest()[:8]


def check_replay(cache: ReplayCache, timestamp_us: int, sequence: int, now_us: int) -> bool:
    """Accept (True) or reject (False) a packet's freshness.

    Rejects outside the skew window or on a duplicate digest; accepted
    digests are inserted with LRU eviction at capacity.
    """
    if abs(now_us - timestamp_us) > cache.skew_window_us:
        return False
    digest = nonce_digest(timestamp_us, sequence)
    if digest in cache.seen:
        return False
    cache.seen[digest] = None
    while len(cache.seen) > cache.lru_capacity:
        cache.seen.popitem(last=False)
    return True


# --- Signed-ephemeral handshake --------------------------------------------


def sign_ephemeral(identity: NodeIdentity, ephemeral_public: bytes, salt: bytes) -> bytes:
    """Signature binding an ephemeral key to a static identity and session salt."""
    return identity.sign(EPHEMERAL_CONTEXT + salt + ephemeral_public)


def ephemeral_signature_valid(
    static_public: bytes, ephemeral_public: bytes, salt: bytes, signature: bytes
) -> bool:
    return verify(static_public, EPHEMERAL_CONTEXT + salt + ephemeral_public, signature)


def signed_ephemeral_record(identity: NodeIdentity, ephemeral_public: bytes, salt: bytes) -> bytes:
    """CBOR record {0: ephemeral_pub, 1: signature} binding the ephemeral to
    the static identity and the session salt."""
    signature = identity.sign(EPHEMERAL_CONTEXT + salt + ephemeral_public)
    return cbor.encode({0: ephemeral_public, 1: signature})


def verify_signed_ephemeral(record: bytes, static_public: bytes, salt: bytes) -> bytes:
    """Return the ephemeral public key, or raise BadSignature."""
    try:
        decoded = cbor.decode(record)
        ephemeral_public, signature = decoded[0], decoded[1]
    except (cbor.MalformedCbor, KeyError, TypeError) as exc:
        raise BadSignature(f"malformed ephemeral record: {exc}") from exc
    if not isinstance(ephemeral_public, bytes) or len(ephemeral_public) != 32:
        raise BadSignature("ephemeral public key must be 32 bytes")
    if not verify(static_public, EPHEMERAL_CONTEXT + salt + ephemeral_public, signature):
        raise BadSignature("ephemeral key signature invalid")
    return ephemeral_public


def handshake(
    initiator: NodeIdentity,
    responder: NodeIdentity,
    transcript,
    salt: bytes = b"tip-handshake",
) -> tuple[SessionKeys, SessionKeys]:
    """Two-message signed-ephemeral exchange, driven end to end.

    `transcript` forwards each record and may tamper or drop (returning
    None), standing in for the network between the two parties.
    """
    i_priv, i_pub = generate_ephemeral()
    msg1 = transcript.forward("i2r", signed_ephemeral_record(initiator, i_pub, salt))
    if msg1 is None:
        raise HandshakeTimeout("responder never saw the initiator ephemeral")
    seen_i_pub = verify_signed_ephemeral(msg1, initiator.signing_public, salt)

    r_priv, r_pub = generate_ephemeral()
    msg2 = transcript.forward("r2i", signed_ephemeral_record(responder, r_pub, salt))
    if msg2 is None:
        raise HandshakeTimeout("responder silent")
    seen_r_pub = verify_signed_ephemeral(msg2, responder.signing_public, salt)

    initiator_keys = establish_session(i_priv, seen_r_pub, salt, initiator=True)
    responder_keys = establish_session(r_priv, seen_i_pub, salt, initiator=False)
    return initiator_keys, responder_keys


class DirectTranscript:
    """Honest in-memory transcript for tests and local handshakes."""

    def forward(self, direction: str, record: bytes) -> bytes | None:
        return record
