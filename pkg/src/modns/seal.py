"""End-to-end sealing of DNS messages between a client and a target resolver.

Construction (suite 0x01): X25519 key agreement, HKDF-SHA256 to a 32-byte
shared key, then ChaCha20-Poly1305. The 24-byte message nonce is split into
a 12-byte HKDF salt (per-message subkey) and the 12-byte AEAD nonce, which
gives the 192-bit nonce space needed for random draws.

Serialized form::

    suite (1) | sender_public (32) | nonce (24) | ciphertext (padded + 16 tag)
"""

from __future__ import annotations

import builtins
import enum
import os
import random
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

SUITE_X25519_CHACHA20POLY1305 = 0x01
KEY_LEN = 32
NONCE_LEN = 24
TAG_LEN = 16
BLOCK = 64
HEADER_LEN = 1 + KEY_LEN + NONCE_LEN
DEFAULT_MAX_PADDED = 4096

_RAW = serialization.Encoding.Raw
_HKDF_INFO = b"modns-seal-v1"


class SealError(ValueError):
    pass


class AuthenticationFailure(SealError):
    pass


class MalformedPadding(SealError):
    pass


class MalformedSealed(SealError):
    pass


class PlaintextTooLarge(SealError):
    pass


class Direction(enum.IntEnum):
    QUERY = 0
    RESPONSE = 1


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    secret: bytes = field(repr=False)

    @classmethod
    def from_secret(cls, secret: bytes) -> "KeyPair":
        if len(secret) != KEY_LEN:
            raise ValueError(f"secret key must be {KEY_LEN} bytes")
        priv = X25519PrivateKey.from_private_bytes(secret)
        return cls(priv.public_key().public_bytes(_RAW, serialization.PublicFormat.Raw), bytes(secret))

    @classmethod
    def generate(cls, rng: random.Random | None = None) -> "KeyPair":
        """Fresh key pair; pass a seeded ``rng`` only for reproducible simulations."""
        return cls.from_secret(rng.randbytes(KEY_LEN) if rng is not None else os.urandom(KEY_LEN))


@dataclass(frozen=True)
class SealedMessage:
    sender_public: bytes
    nonce: bytes
    ciphertext: bytes
    suite: int = SUITE_X25519_CHACHA20POLY1305

    def to_bytes(self) -> bytes:
        return bytes([self.suite]) + self.sender_public + self.nonce + self.ciphertext

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedMessage":
        raw = bytes(raw)
        if len(raw) < HEADER_LEN + TAG_LEN + BLOCK:
            raise MalformedSealed(f"sealed message too short ({len(raw)} bytes)")
        if raw[0] != SUITE_X25519_CHACHA20POLY1305:
            raise MalformedSealed(f"unknown suite 0x{raw[0]:02x}")
        return cls(raw[1:1 + KEY_LEN], raw[1 + KEY_LEN:HEADER_LEN], raw[HEADER_LEN:], raw[0])


def pad(plaintext: bytes, max_padded: int = DEFAULT_MAX_PADDED) -> bytes:
    size = (len(plaintext) // BLOCK + 1) * BLOCK
    if size > max_padded:
        raise PlaintextTooLarge(f"padded size {size} exceeds budget {max_padded}")
    return plaintext + b"\x80" + b"\x00" * (size - len(plaintext) - 1)


def unpad(padded: bytes) -> bytes:
    end = padded.rfind(b"\x80")
    if end < 0 or padded[end + 1:].strip(b"\x00"):
        raise MalformedPadding("no 0x80 terminator before trailing zeros")
    return padded[:end]


def shared_key(secret: bytes, peer_public: bytes) -> bytes:
    try:
        shared = X25519PrivateKey.from_private_bytes(secret).exchange(
            X25519PublicKey.from_public_bytes(peer_public)
        )
    except ValueError as exc:
        # low-order peer points yield an all-zero secret and are rejected here
        raise AuthenticationFailure(str(exc)) from None
    return HKDF(hashes.SHA256(), KEY_LEN, salt=None, info=_HKDF_INFO).derive(shared)


def _aead(key: bytes, nonce: bytes) -> tuple[ChaCha20Poly1305, bytes]:
    sub = HKDF(hashes.SHA256(), KEY_LEN, salt=nonce[:12], info=_HKDF_INFO + b"/msg").derive(key)
    return ChaCha20Poly1305(sub), nonce[12:]


def _aad(direction: Direction, sender_public: bytes, nonce: bytes) -> bytes:
    return bytes([SUITE_X25519_CHACHA20POLY1305, int(direction)]) + sender_public + nonce


def new_nonce(rng: random.Random | None = None) -> bytes:
    """Random 192-bit query nonce with the low bit of the last byte cleared.

    Response nonces set that bit, so the two sets can never overlap.
    """
    raw = bytearray(rng.randbytes(NONCE_LEN) if rng is not None else os.urandom(NONCE_LEN))
    raw[-1] &= 0xFE
    return bytes(raw)


def response_nonce(query_nonce: bytes) -> bytes:
    if len(query_nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    return query_nonce[:-1] + bytes([query_nonce[-1] ^ 0x01])


def seal(
    sender: KeyPair,
    receiver_public: bytes,
    direction: Direction,
    plaintext: bytes,
    nonce: bytes,
    max_padded: int = DEFAULT_MAX_PADDED,
) -> SealedMessage:
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    aead, n12 = _aead(shared_key(sender.secret, receiver_public), nonce)
    ct = aead.encrypt(n12, pad(plaintext, max_padded), _aad(direction, sender.public, nonce))
    return SealedMessage(sender.public, bytes(nonce), ct)


def open_sealed(
    receiver: KeyPair,
    msg: SealedMessage,
    direction: Direction,
    expected_sender: bytes | None = None,
) -> bytes:
    """Authenticate and decrypt ``msg``.

    ``expected_sender`` pins the peer key (the client knows which resolver it
    sealed toward); without it the key carried in the message is trusted.
    """
    if expected_sender is not None and msg.sender_public != expected_sender:
        raise AuthenticationFailure("unexpected sender key")
    if len(msg.nonce) != NONCE_LEN or len(msg.sender_public) != KEY_LEN:
        raise MalformedSealed("bad field widths")
    aead, n12 = _aead(shared_key(receiver.secret, msg.sender_public), msg.nonce)
    try:
        padded = aead.decrypt(n12, msg.ciphertext, _aad(direction, msg.sender_public, msg.nonce))
    except InvalidTag:
        raise AuthenticationFailure("authentication tag mismatch") from None
    return unpad(padded)


def load_key(path) -> bytes:
    """Read a 32-byte key stored raw or as hex text."""
    with builtins.open(path, "rb") as fh:
        data = fh.read()
    if len(data) == KEY_LEN:
        return data
    try:
        key = bytes.fromhex(data.decode("ascii").strip())
    except (UnicodeDecodeError, ValueError):
        raise ValueError(f"{path}: not a raw or hex-encoded key") from None
    if len(key) != KEY_LEN:
        raise ValueError(f"{path}: key must be {KEY_LEN} bytes, got {len(key)}")
    return key


# ``from modns.seal import open`` reads naturally at call sites
open = open_sealed  # noqa: A001
