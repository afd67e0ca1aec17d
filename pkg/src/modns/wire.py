"""Query envelope codec.

Three datagram shapes travel between clients, relays and the target
resolver::

    multi-relay:  MODNS_MAGIC | n (1 byte) | n x (addr16 | port16) | payload
    single-relay: ADNS_MAGIC  | addr16 | port16                   | payload
    bare:         payload

Addresses are always 16 bytes; IPv4 is written as a v4-mapped IPv6 address.
The last hop of a multi-relay header is the target resolver.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass
from typing import Iterable, Union

MODNS_MAGIC = bytes.fromhex("FFFFFFFFFFFFFFEE0000")
ADNS_MAGIC = bytes.fromhex("FFFFFFFFFFFFFFFF0000")
MAGIC_LEN = 10
ADDR_LEN = 18
MAX_HOPS = 255

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]


class WireError(ValueError):
    """Base class for envelope codec errors."""


class InvalidEnvelope(WireError):
    pass


class TruncatedHeader(WireError):
    pass


class ZeroHops(WireError):
    pass


@dataclass(frozen=True, order=True)
class NodeAddr:
    """An IP address and UDP port.

    v4-mapped IPv6 addresses are folded to plain IPv4 so that every node has
    exactly one representation and encoding round-trips.
    """

    ip: IPAddress
    port: int

    def __post_init__(self):
        ip = self.ip
        if not isinstance(ip, (ipaddress.IPv4Address, ipaddress.IPv6Address)):
            ip = ipaddress.ip_address(ip)
        if isinstance(ip, ipaddress.IPv6Address) and ip.ipv4_mapped is not None:
            ip = ip.ipv4_mapped
        object.__setattr__(self, "ip", ip)
        if not isinstance(self.port, int) or not 1 <= self.port <= 65535:
            raise InvalidEnvelope(f"port out of range: {self.port!r}")

    @classmethod
    def parse(cls, text: str) -> "NodeAddr":
        """Parse ``1.2.3.4:53`` or ``[2001:db8::1]:53``."""
        text = text.strip()
        if text.startswith("["):
            host, sep, port = text[1:].partition("]:")
        else:
            host, sep, port = text.rpartition(":")
        if not sep or not host:
            raise ValueError(f"expected <ip>:<port>, got {text!r}")
        try:
            return cls(ipaddress.ip_address(host), int(port))
        except (ValueError, InvalidEnvelope) as exc:
            raise ValueError(f"bad address {text!r}: {exc}") from None

    @classmethod
    def from_sockaddr(cls, sockaddr) -> "NodeAddr":
        return cls(ipaddress.ip_address(sockaddr[0]), sockaddr[1])

    @property
    def sockaddr(self) -> tuple[str, int]:
        return (str(self.ip), self.port)

    def to_bytes(self) -> bytes:
        ip = self.ip
        if isinstance(ip, ipaddress.IPv4Address):
            packed = b"\x00" * 10 + b"\xff\xff" + ip.packed
        else:
            packed = ip.packed
        return packed + struct.pack("!H", self.port)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "NodeAddr":
        if len(raw) != ADDR_LEN:
            raise TruncatedHeader(f"address needs {ADDR_LEN} bytes, got {len(raw)}")
        (port,) = struct.unpack("!H", raw[16:])
        try:
            return cls(ipaddress.IPv6Address(raw[:16]), port)
        except InvalidEnvelope:
            raise InvalidEnvelope("port 0 in hop entry") from None

    def __str__(self):
        if isinstance(self.ip, ipaddress.IPv6Address):
            return f"[{self.ip}]:{self.port}"
        return f"{self.ip}:{self.port}"


class Kind(enum.Enum):
    MODNS = "modns"
    ADNS = "adns"
    BARE = "bare"


@dataclass(frozen=True)
class ModnsHeader:
    hops: tuple[NodeAddr, ...]
    magic = MODNS_MAGIC

    @property
    def subsequent_count(self) -> int:
        return len(self.hops)


@dataclass(frozen=True)
class AdnsHeader:
    target: NodeAddr
    magic = ADNS_MAGIC


@dataclass(frozen=True)
class Envelope:
    kind: Kind
    payload: bytes
    header: ModnsHeader | AdnsHeader | None = None

    @classmethod
    def modns(cls, hops: Iterable[NodeAddr], payload: bytes) -> "Envelope":
        return cls(Kind.MODNS, bytes(payload), ModnsHeader(tuple(hops)))

    @classmethod
    def adns(cls, target: NodeAddr, payload: bytes) -> "Envelope":
        return cls(Kind.ADNS, bytes(payload), AdnsHeader(target))

    @classmethod
    def bare(cls, payload: bytes) -> "Envelope":
        return cls(Kind.BARE, bytes(payload))

    @property
    def hops(self) -> tuple[NodeAddr, ...]:
        if isinstance(self.header, ModnsHeader):
            return self.header.hops
        if isinstance(self.header, AdnsHeader):
            return (self.header.target,)
        return ()


def _check(env: Envelope) -> None:
    if not env.payload:
        raise InvalidEnvelope("empty payload")
    if env.kind is Kind.MODNS:
        if not isinstance(env.header, ModnsHeader):
            raise InvalidEnvelope("multi-relay envelope without hop header")
        if not 1 <= len(env.header.hops) <= MAX_HOPS:
            raise InvalidEnvelope(f"hop count {len(env.header.hops)} not in [1, {MAX_HOPS}]")
    elif env.kind is Kind.ADNS:
        if not isinstance(env.header, AdnsHeader):
            raise InvalidEnvelope("single-relay envelope without target header")
    elif env.header is not None:
        raise InvalidEnvelope("bare envelope carries a header")


def encode_envelope(env: Envelope) -> bytes:
    _check(env)
    if env.kind is Kind.MODNS:
        hops = env.header.hops
        return b"".join([MODNS_MAGIC, bytes([len(hops)]), *(h.to_bytes() for h in hops), env.payload])
    if env.kind is Kind.ADNS:
        return ADNS_MAGIC + env.header.target.to_bytes() + env.payload
    return env.payload


def decode_envelope(raw: bytes) -> Envelope:
    """Classify a datagram by its 10-byte prefix and decode it.

    Anything that does not start with one of the two magics is treated as a
    bare sealed payload.
    """
    raw = bytes(raw)
    if not raw:
        raise InvalidEnvelope("empty datagram")
    prefix = raw[:MAGIC_LEN]
    if prefix == MODNS_MAGIC:
        if len(raw) < MAGIC_LEN + 1:
            raise TruncatedHeader("missing hop count")
        n = raw[MAGIC_LEN]
        if n == 0:
            raise ZeroHops("hop count is zero")
        end = MAGIC_LEN + 1 + n * ADDR_LEN
        if len(raw) < end:
            raise TruncatedHeader(
                f"{n} hops need {n * ADDR_LEN} header bytes, got {len(raw) - MAGIC_LEN - 1}"
            )
        hops = tuple(
            NodeAddr.from_bytes(raw[off:off + ADDR_LEN])
            for off in range(MAGIC_LEN + 1, end, ADDR_LEN)
        )
        if len(raw) == end:
            raise TruncatedHeader("no payload after hop header")
        return Envelope.modns(hops, raw[end:])
    if prefix == ADNS_MAGIC:
        end = MAGIC_LEN + ADDR_LEN
        if len(raw) < end:
            raise TruncatedHeader("target address cut short")
        if len(raw) == end:
            raise TruncatedHeader("no payload after target header")
        return Envelope.adns(NodeAddr.from_bytes(raw[MAGIC_LEN:end]), raw[end:])
    return Envelope.bare(raw)


def strip_first_hop(env: Envelope) -> tuple[NodeAddr, Envelope]:
    """Pop the first hop; with one hop left the header is dropped entirely."""
    if env.kind is not Kind.MODNS:
        raise InvalidEnvelope(f"cannot strip hops from a {env.kind.value} envelope")
    first, *rest = env.header.hops
    if rest:
        return first, Envelope.modns(rest, env.payload)
    return first, Envelope.bare(env.payload)


def header_length(n: int) -> int:
    return MAGIC_LEN + 1 + ADDR_LEN * n
