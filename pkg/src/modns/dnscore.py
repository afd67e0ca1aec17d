"""Just enough DNS to proxy stub queries and answer them from a static zone."""

from __future__ import annotations

import ipaddress
import random
import socket
import struct
import uuid
from dataclasses import dataclass, field

QTYPE_A = 1
QTYPE_TXT = 16
QTYPE_AAAA = 28
QCLASS_IN = 1
TYPE_NAMES = {"A": QTYPE_A, "TXT": QTYPE_TXT, "AAAA": QTYPE_AAAA}

NOERROR = 0
FORMERR = 1
SERVFAIL = 2
NXDOMAIN = 3

_HEADER = struct.Struct("!HHHHHH")


class DNSError(ValueError):
    pass


class MalformedMessage(DNSError):
    pass


class UnsupportedMultiQuestion(DNSError):
    pass


@dataclass(frozen=True)
class Question:
    id: int
    qname: str
    qtype: int = QTYPE_A
    qclass: int = QCLASS_IN


@dataclass(frozen=True)
class Record:
    name: str
    rtype: int
    ttl: int
    rdata: bytes


@dataclass(frozen=True)
class Response:
    id: int
    rcode: int
    question: Question
    answers: tuple[Record, ...]


def normalize_name(name: str) -> str:
    return name.strip().rstrip(".").lower()


def encode_name(name: str) -> bytes:
    name = normalize_name(name)
    out = bytearray()
    for label in name.split(".") if name else []:
        raw = label.encode("ascii")
        if not 1 <= len(raw) <= 63:
            raise MalformedMessage(f"bad label length in {name!r}")
        out += bytes([len(raw)]) + raw
    out += b"\x00"
    if len(out) > 255:
        raise MalformedMessage(f"name too long: {name!r}")
    return bytes(out)


def _read_name(raw: bytes, off: int, allow_pointers: bool) -> tuple[str, int]:
    labels = []
    end = None
    seen = 0
    while True:
        if off >= len(raw):
            raise MalformedMessage("name runs past end of message")
        length = raw[off]
        if length & 0xC0 == 0xC0:
            if not allow_pointers:
                raise MalformedMessage("compression pointer in question name")
            if off + 1 >= len(raw):
                raise MalformedMessage("truncated compression pointer")
            seen += 1
            if seen > 32:
                raise MalformedMessage("compression pointer loop")
            if end is None:
                end = off + 2
            off = ((length & 0x3F) << 8) | raw[off + 1]
            continue
        if length & 0xC0:
            raise MalformedMessage("reserved label type")
        off += 1
        if length == 0:
            break
        if off + length > len(raw):
            raise MalformedMessage("label runs past end of message")
        labels.append(raw[off:off + length].decode("ascii", "replace").lower())
        off += length
    name = ".".join(labels)
    if len(name) > 253:
        raise MalformedMessage("name too long")
    return name, end if end is not None else off


def _header(raw: bytes):
    if len(raw) < 12:
        raise MalformedMessage(f"message shorter than DNS header ({len(raw)} bytes)")
    return _HEADER.unpack_from(raw)


def parse_query(raw: bytes) -> Question:
    qid, flags, qd, _an, _ns, _ar = _header(raw)
    if flags & 0x8000:
        raise MalformedMessage("QR bit set on a query")
    if qd != 1:
        if qd == 0:
            raise MalformedMessage("query has no question")
        raise UnsupportedMultiQuestion(f"{qd} questions")
    qname, off = _read_name(raw, 12, allow_pointers=False)
    if off + 4 > len(raw):
        raise MalformedMessage("question truncated")
    qtype, qclass = struct.unpack_from("!HH", raw, off)
    return Question(qid, qname, qtype, qclass)


def build_query(qname: str, qtype: int = QTYPE_A, qid: int = 0, rd: bool = True) -> bytes:
    flags = 0x0100 if rd else 0
    return _HEADER.pack(qid, flags, 1, 0, 0, 0) + encode_name(qname) + struct.pack("!HH", qtype, QCLASS_IN)


def build_response(q: Question, answers, rcode: int = NOERROR) -> bytes:
    answers = list(answers)
    flags = 0x8000 | 0x0100 | 0x0080 | (rcode & 0xF)
    out = bytearray(_HEADER.pack(q.id, flags, 1, len(answers), 0, 0))
    out += encode_name(q.qname) + struct.pack("!HH", q.qtype, q.qclass)
    for rr in answers:
        out += encode_name(rr.name)
        out += struct.pack("!HHIH", rr.rtype, QCLASS_IN, rr.ttl, len(rr.rdata))
        out += rr.rdata
    return bytes(out)


def build_error_response(raw_query: bytes, rcode: int) -> bytes | None:
    """Answer ``raw_query`` with an empty error response, echoing what parses.

    Returns None when not even the id can be read.
    """
    if len(raw_query) < 2:
        return None
    try:
        q = parse_query(raw_query)
    except DNSError:
        (qid,) = struct.unpack_from("!H", raw_query)
        return _HEADER.pack(qid, 0x8000 | 0x0080 | rcode, 0, 0, 0, 0)
    return build_response(q, [], rcode)


def parse_response(raw: bytes) -> Response:
    qid, flags, qd, an, _ns, _ar = _header(raw)
    if not flags & 0x8000:
        raise MalformedMessage("QR bit clear on a response")
    question = None
    off = 12
    for _ in range(qd):
        qname, off = _read_name(raw, off, allow_pointers=True)
        if off + 4 > len(raw):
            raise MalformedMessage("question truncated")
        qtype, qclass = struct.unpack_from("!HH", raw, off)
        off += 4
        question = question or Question(qid, qname, qtype, qclass)
    answers = []
    for _ in range(an):
        name, off = _read_name(raw, off, allow_pointers=True)
        if off + 10 > len(raw):
            raise MalformedMessage("answer truncated")
        rtype, _cls, ttl, rdlen = struct.unpack_from("!HHIH", raw, off)
        off += 10
        if off + rdlen > len(raw):
            raise MalformedMessage("rdata truncated")
        answers.append(Record(name, rtype, ttl, raw[off:off + rdlen]))
        off += rdlen
    return Response(qid, flags & 0xF, question, tuple(answers))


def with_id(raw: bytes, qid: int) -> bytes:
    return struct.pack("!H", qid) + bytes(raw[2:])


def message_id(raw: bytes) -> int:
    return struct.unpack_from("!H", raw)[0]


def encode_rdata(rtype: int, text: str) -> bytes:
    text = text.strip()
    if rtype == QTYPE_A:
        return ipaddress.IPv4Address(text).packed
    if rtype == QTYPE_AAAA:
        return ipaddress.IPv6Address(text).packed
    if rtype == QTYPE_TXT:
        if len(text) >= 2 and text[0] == text[-1] == '"':
            text = text[1:-1]
        raw = text.encode()
        return b"".join(bytes([len(raw[i:i + 255])]) + raw[i:i + 255] for i in range(0, max(len(raw), 1), 255))
    raise ValueError(f"unsupported record type {rtype}")


@dataclass
class StaticZone:
    """Read-only answer table.

    ``wildcards`` maps (suffix, qtype) to rdata answered for any strict
    subdomain of ``suffix``.
    """

    records: dict[tuple[str, int], list[bytes]] = field(default_factory=dict)
    default_ttl: int = 60
    wildcards: dict[tuple[str, int], list[bytes]] = field(default_factory=dict)

    def __post_init__(self):
        self._names = {n for n, _ in self.records}

    @property
    def wildcard_suffixes(self) -> list[str]:
        return sorted({s for s, _ in self.wildcards})

    def add(self, name: str, rtype: int, rdata: bytes) -> None:
        name = normalize_name(name)
        if name.startswith("*."):
            self.wildcards.setdefault((name[2:], rtype), []).append(rdata)
        else:
            self.records.setdefault((name, rtype), []).append(rdata)
            self._names.add(name)

    @classmethod
    def parse(cls, text: str, default_ttl: int = 60) -> "StaticZone":
        zone = cls(default_ttl=default_ttl)
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 2)
            if len(parts) != 3:
                raise ValueError(f"zone line {lineno}: expected 'name qtype rdata'")
            name, qtype, rdata = parts
            rtype = TYPE_NAMES.get(qtype.upper())
            if rtype is None:
                raise ValueError(f"zone line {lineno}: unsupported type {qtype!r}")
            try:
                zone.add(name, rtype, encode_rdata(rtype, rdata))
            except ValueError as exc:
                raise ValueError(f"zone line {lineno}: {exc}") from None
        return zone

    @classmethod
    def load(cls, path, default_ttl: int = 60) -> "StaticZone":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), default_ttl)


def resolve_static(zone: StaticZone, q: Question) -> tuple[list[Record], int]:
    """Exact match, then the longest matching wildcard suffix, else NXDOMAIN.

    A name that exists only under other types answers NOERROR with no records.
    """
    name = normalize_name(q.qname)
    found = zone.records.get((name, q.qtype))
    if found is not None:
        return [Record(name, q.qtype, zone.default_ttl, r) for r in found], NOERROR
    labels = name.split(".")
    for i in range(1, len(labels)):
        suffix = ".".join(labels[i:])
        found = zone.wildcards.get((suffix, q.qtype))
        if found is not None:
            return [Record(name, q.qtype, zone.default_ttl, r) for r in found], NOERROR
    if name in zone._names:
        return [], NOERROR
    return [], NXDOMAIN


def gen_cachebust_name(suffix: str, rng: random.Random) -> str:
    """``<uuid4>.<suffix>``, drawn from ``rng`` so seeded runs repeat."""
    return f"{uuid.UUID(int=rng.getrandbits(128), version=4)}.{normalize_name(suffix)}"


def forward_do53(raw: bytes, upstream: tuple[str, int], timeout: float = 2.0) -> bytes | None:
    """Send a plaintext query to a Do53 server and wait for the matching reply."""
    family = socket.AF_INET6 if ":" in upstream[0] else socket.AF_INET
    with socket.socket(family, socket.SOCK_DGRAM) as sock:
        sock.settimeout(timeout)
        sock.connect(upstream)
        sock.send(raw)
        try:
            while True:
                reply = sock.recv(65535)
                if len(reply) >= 2 and reply[:2] == raw[:2]:
                    return reply
        except socket.timeout:
            return None
