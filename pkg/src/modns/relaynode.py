"""Relay decision core.

Inbound queries are classified, checked against the hop limit and loop
rules, stripped of the first hop and forwarded. Responses come back on the
upstream endpoint the query left from and are passed downstream untouched;
the session table is the only relay state.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Hashable, Union

from . import wire
from .wire import Envelope, Kind, NodeAddr


class DropReason(enum.Enum):
    HOP_LIMIT_EXCEEDED = "HopLimitExceeded"
    LOOP_DETECTED = "LoopDetected"
    TRUNCATED = "Truncated"
    ZERO_HOPS = "ZeroHops"
    OVERSIZE = "Oversize"
    # not relayable: bare payloads reach a relay only by misdirection
    NOT_RELAYABLE = "NotRelayable"
    NO_SESSION = "NoSession"


@dataclass(frozen=True)
class RelayLimits:
    max_subsequent_hops: int = 8
    session_ttl: float = 10.0
    session_capacity: int = 65536
    max_datagram: int = 4096

    def __post_init__(self):
        if self.max_subsequent_hops < 1:
            raise ValueError("max_subsequent_hops must be >= 1")
        if self.session_ttl <= 0:
            raise ValueError("session_ttl must be positive")
        if self.session_capacity < 1:
            raise ValueError("session_capacity must be >= 1")


@dataclass(frozen=True)
class ForwardUpstream:
    dest: NodeAddr
    data: bytes
    payload: bytes = b""


@dataclass(frozen=True)
class ForwardDownstream:
    dest: Hashable
    data: bytes


@dataclass(frozen=True)
class Drop:
    reason: DropReason


RelayAction = Union[ForwardUpstream, ForwardDownstream, Drop]


def handle_upstream(raw: bytes, src, limits: RelayLimits, self_addr: NodeAddr | None = None) -> RelayAction:
    """Decide what to do with a query datagram that arrived from ``src``."""
    if len(raw) > limits.max_datagram:
        return Drop(DropReason.OVERSIZE)
    try:
        env = wire.decode_envelope(raw)
    except wire.ZeroHops:
        return Drop(DropReason.ZERO_HOPS)
    except wire.WireError:
        return Drop(DropReason.TRUNCATED)

    if env.kind is Kind.ADNS:
        return ForwardUpstream(env.header.target, env.payload, env.payload)
    if env.kind is Kind.BARE:
        return Drop(DropReason.NOT_RELAYABLE)

    hops = env.header.hops
    if len(hops) - 1 > limits.max_subsequent_hops:
        return Drop(DropReason.HOP_LIMIT_EXCEEDED)
    if len(set(hops)) != len(hops) or (self_addr is not None and self_addr in hops):
        return Drop(DropReason.LOOP_DETECTED)
    nxt, fwd = wire.strip_first_hop(env)
    return ForwardUpstream(nxt, wire.encode_envelope(fwd), env.payload)


@dataclass
class SessionEntry:
    upstream_local_endpoint: Hashable
    downstream_peer: Hashable
    created_at: float


class TableFull(RuntimeError):
    pass


class SessionTable:
    """Back-path state: one upstream endpoint per downstream peer.

    ``allocate`` produces a fresh upstream endpoint (in a live relay it binds
    an ephemeral socket); ``release`` is told when an endpoint is retired.
    Entries are kept in least-recently-used order.
    """

    def __init__(
        self,
        ttl: float = 10.0,
        capacity: int = 65536,
        allocate: Callable[[], Hashable] | None = None,
        release: Callable[[Hashable], None] | None = None,
    ):
        self.ttl = ttl
        self.capacity = capacity
        self._counter = itertools.count(1)
        self._allocate = allocate or (lambda: ("ep", next(self._counter)))
        self._release = release or (lambda ep: None)
        self._by_peer: OrderedDict[Hashable, SessionEntry] = OrderedDict()
        self._by_endpoint: dict[Hashable, SessionEntry] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._by_peer)

    def _expired(self, entry: SessionEntry, now: float) -> bool:
        return now - entry.created_at > self.ttl

    def _remove(self, entry: SessionEntry) -> None:
        del self._by_peer[entry.downstream_peer]
        del self._by_endpoint[entry.upstream_local_endpoint]
        self._release(entry.upstream_local_endpoint)

    def open(self, downstream_peer: Hashable, now: float) -> Hashable:
        with self._lock:
            entry = self._by_peer.get(downstream_peer)
            if entry is not None:
                if not self._expired(entry, now):
                    entry.created_at = now
                    self._by_peer.move_to_end(downstream_peer)
                    return entry.upstream_local_endpoint
                self._remove(entry)
            if self.capacity < 1:
                raise TableFull("session table has no capacity")
            while len(self._by_peer) >= self.capacity:
                self._remove(next(iter(self._by_peer.values())))
            endpoint = self._allocate()
            entry = SessionEntry(endpoint, downstream_peer, now)
            self._by_peer[downstream_peer] = entry
            self._by_endpoint[endpoint] = entry
            return endpoint

    def lookup(self, endpoint: Hashable, now: float) -> SessionEntry | None:
        with self._lock:
            entry = self._by_endpoint.get(endpoint)
            if entry is None or self._expired(entry, now):
                return None
            return entry

    def purge_expired(self, now: float) -> int:
        with self._lock:
            stale = [e for e in self._by_peer.values() if self._expired(e, now)]
            for entry in stale:
                self._remove(entry)
            return len(stale)

    def entries(self) -> list[SessionEntry]:
        with self._lock:
            return list(self._by_peer.values())


def open_session(table: SessionTable, downstream_peer: Hashable, now: float) -> Hashable:
    return table.open(downstream_peer, now)


def purge_expired(table: SessionTable, now: float) -> int:
    return table.purge_expired(now)


def handle_downstream(raw: bytes, arrived_on: Hashable, table: SessionTable, now: float) -> RelayAction:
    if not raw:
        return Drop(DropReason.TRUNCATED)
    entry = table.lookup(arrived_on, now)
    if entry is None:
        return Drop(DropReason.NO_SESSION)
    return ForwardDownstream(entry.downstream_peer, bytes(raw))


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:32]


@dataclass(frozen=True)
class Observation:
    """What a semi-honest relay can record about one forwarded query."""

    relay: str
    prev_hop: str
    next_hop: str
    payload_digest: str
    remaining_digest: str
    timestamp: float

    def to_json(self) -> dict:
        return {
            "event": "relay_forward",
            "relay": self.relay,
            "prev": self.prev_hop,
            "next": self.next_hop,
            "payload": self.payload_digest,
            "remaining": self.remaining_digest,
            "t": self.timestamp,
        }


class RelayNode:
    """A relay's full per-datagram behaviour minus the sockets.

    ``observe`` receives an :class:`Observation` for every forwarded query;
    it is how a colluding relay's log is produced.
    """

    def __init__(
        self,
        public_addr: NodeAddr,
        limits: RelayLimits = RelayLimits(),
        name: str | None = None,
        allocate: Callable[[], Hashable] | None = None,
        release: Callable[[Hashable], None] | None = None,
        observe: Callable[[Observation], None] | None = None,
    ):
        self.public_addr = public_addr
        self.limits = limits
        self.name = name or str(public_addr)
        self.table = SessionTable(limits.session_ttl, limits.session_capacity, allocate, release)
        self.observe = observe
        self.counters = {"forwarded_up": 0, "forwarded_down": 0}
        for reason in DropReason:
            self.counters[f"drop_{reason.value}"] = 0

    def on_query(self, raw: bytes, src: Hashable, now: float) -> tuple[RelayAction, Hashable | None]:
        """Returns the action and, for forwards, the upstream endpoint to send from."""
        action = handle_upstream(raw, src, self.limits, self.public_addr)
        if isinstance(action, Drop):
            self.counters[f"drop_{action.reason.value}"] += 1
            return action, None
        endpoint = self.table.open(src, now)
        self.counters["forwarded_up"] += 1
        if self.observe is not None:
            remaining = action.data[: len(action.data) - len(action.payload)]
            self.observe(Observation(
                self.name, str(src), str(action.dest), digest(action.payload), digest(remaining), now,
            ))
        return action, endpoint

    def on_response(self, raw: bytes, arrived_on: Hashable, now: float) -> RelayAction:
        action = handle_downstream(raw, arrived_on, self.table, now)
        if isinstance(action, Drop):
            self.counters[f"drop_{action.reason.value}"] += 1
        else:
            self.counters["forwarded_down"] += 1
        return action
