"""Client proxy and target resolver logic, independent of sockets.

The client turns a plaintext stub query into a sealed multi-relay datagram
addressed to its next-hop and later matches the sealed answer back to the
stub by response nonce. The target opens the payload, answers from its zone
and seals the reply to whichever address delivered the query.
"""

from __future__ import annotations

import random
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, NamedTuple

from . import dnscore, seal, wire
from .conf import ClientConfig
from .pathsel import RelayPath, select_path, to_hop_list
from .seal import Direction, KeyPair, SealedMessage


@dataclass(frozen=True)
class Outbound:
    dest: Hashable
    data: bytes


@dataclass
class PendingQuery:
    expected_response_nonce: bytes
    do53_requester: Hashable
    original_dns_id: int
    path: RelayPath
    sent_at: float
    attempts: int
    keypair: KeyPair
    resolver_public: bytes
    plaintext: bytes
    first_sent_at: float = 0.0


@dataclass
class ClientState:
    """Pending-query table and counters shared by the receive path and the timer."""

    long_term_keys: KeyPair | None = None
    pending: dict[bytes, PendingQuery] = field(default_factory=dict)
    counters: Counter = field(default_factory=Counter)
    sticky: RelayPath | None = None
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)


def _pick_path(cfg: ClientConfig, state: ClientState, rng: random.Random, fresh: bool) -> RelayPath:
    if cfg.sticky_path and state.sticky is not None and not fresh:
        return state.sticky
    path = select_path(cfg.policy, rng)
    if cfg.sticky_path:
        state.sticky = path
    return path


def _send(cfg: ClientConfig, state: ClientState, rng: random.Random, plaintext: bytes,
          path: RelayPath) -> tuple[Outbound, bytes, KeyPair, bytes]:
    if cfg.ephemeral_keys or state.long_term_keys is None:
        keys = KeyPair.generate(rng)
        if not cfg.ephemeral_keys:
            state.long_term_keys = keys
    else:
        keys = state.long_term_keys
    resolver_public = cfg.resolver_public_keys[path.target]
    nonce = seal.new_nonce(rng)
    sealed = seal.seal(keys, resolver_public, Direction.QUERY, plaintext, nonce, cfg.max_padded)
    data = wire.encode_envelope(wire.Envelope.modns(to_hop_list(path), sealed.to_bytes()))
    return Outbound(path.nexthop, data), seal.response_nonce(nonce), keys, resolver_public


def client_handle_do53(raw: bytes, src: Hashable, cfg: ClientConfig, state: ClientState,
                       rng: random.Random, now: float) -> tuple[Outbound, PendingQuery]:
    """Raises MalformedMessage for unparseable queries (caller answers FORMERR)."""
    dnscore.parse_query(raw)
    original_id = dnscore.message_id(raw)
    # the inner id is independent of the stub's id
    plaintext = dnscore.with_id(raw, rng.getrandbits(16))
    with state.lock:
        path = _pick_path(cfg, state, rng, fresh=False)
        out, rnonce, keys, resolver_public = _send(cfg, state, rng, plaintext, path)
        pq = PendingQuery(rnonce, src, original_id, path, now, 1, keys, resolver_public, plaintext, now)
        state.pending[rnonce] = pq
        state.counters["queries"] += 1
    return out, pq


def client_handle_response(raw: bytes, state: ClientState, now: float) -> Outbound | None:
    try:
        msg = SealedMessage.from_bytes(raw)
    except seal.SealError:
        state.counters["ignored_malformed"] += 1
        return None
    with state.lock:
        pq = state.pending.get(msg.nonce)
        if pq is None:
            state.counters["ignored_unknown"] += 1
            return None
        try:
            plaintext = seal.open_sealed(pq.keypair, msg, Direction.RESPONSE, expected_sender=pq.resolver_public)
        except seal.SealError:
            state.counters["ignored_auth"] += 1
            return None
        if len(plaintext) < 12:
            state.counters["ignored_malformed"] += 1
            return None
        del state.pending[msg.nonce]
        state.counters["answered"] += 1
    return Outbound(pq.do53_requester, dnscore.with_id(plaintext, pq.original_dns_id))


class TickResult(NamedTuple):
    retransmit: list[Outbound]
    servfail: list[Outbound]
    requeued: list[PendingQuery]


def client_tick(state: ClientState, cfg: ClientConfig, rng: random.Random, now: float) -> TickResult:
    """Retry timed-out queries over a fresh path; SERVFAIL those out of retries."""
    out = TickResult([], [], [])
    with state.lock:
        expired = [pq for pq in state.pending.values() if now - pq.sent_at > cfg.query_timeout]
        for pq in expired:
            del state.pending[pq.expected_response_nonce]
            if pq.attempts > cfg.max_retries:
                q = dnscore.parse_query(pq.plaintext)
                fail = dnscore.build_response(q, [], dnscore.SERVFAIL)
                out.servfail.append(Outbound(pq.do53_requester, dnscore.with_id(fail, pq.original_dns_id)))
                state.counters["servfail"] += 1
                continue
            path = _pick_path(cfg, state, rng, fresh=True)
            msg, rnonce, keys, resolver_public = _send(cfg, state, rng, pq.plaintext, path)
            retry = PendingQuery(
                rnonce, pq.do53_requester, pq.original_dns_id, path, now, pq.attempts + 1,
                keys, resolver_public, pq.plaintext, pq.first_sent_at,
            )
            state.pending[rnonce] = retry
            state.counters["retries"] += 1
            out.retransmit.append(msg)
            out.requeued.append(retry)
    return out


Resolver = Callable[[bytes, dnscore.Question], "bytes | None"]


def zone_resolver(zone: dnscore.StaticZone, upstream: tuple[str, int] | None = None) -> Resolver:
    """Answer from ``zone``; unmatched names go to a Do53 upstream when one is set."""
    def resolve(plain: bytes, q: dnscore.Question) -> bytes | None:
        answers, rcode = dnscore.resolve_static(zone, q)
        if rcode == dnscore.NXDOMAIN and upstream is not None:
            return dnscore.forward_do53(plain, upstream)
        return dnscore.build_response(q, answers, rcode)
    return resolve


def target_handle_query(raw: bytes, src: Hashable, keys: KeyPair, zone: dnscore.StaticZone | Resolver,
                        counters: Counter | None = None) -> Outbound | None:
    counters = counters if counters is not None else Counter()
    resolve = zone if callable(zone) else zone_resolver(zone)
    try:
        msg = SealedMessage.from_bytes(raw)
        plain = seal.open_sealed(keys, msg, Direction.QUERY)
        q = dnscore.parse_query(plain)
    except (seal.SealError, dnscore.DNSError):
        counters["dropped"] += 1
        return None
    answer = resolve(plain, q)
    if answer is None:
        counters["upstream_timeout"] += 1
        return None
    try:
        reply = seal.seal(keys, msg.sender_public, Direction.RESPONSE, answer, seal.response_nonce(msg.nonce))
    except seal.PlaintextTooLarge:
        counters["dropped"] += 1
        return None
    counters["answered"] += 1
    return Outbound(src, reply.to_bytes())
