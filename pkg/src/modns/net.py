"""UDP daemons for the client proxy, relay and target resolver.

Each daemon owns non-blocking sockets registered on an asyncio loop with
``add_reader``; all protocol decisions are delegated to the socket-free
cores in :mod:`modns.relaynode` and :mod:`modns.endpoints`.
"""

from __future__ import annotations

import asyncio
import json
import logging
import random
import socket
import threading
import time
from collections import Counter
from typing import Callable

from . import dnscore, endpoints
from .conf import ClientConfig
from .relaynode import ForwardDownstream, ForwardUpstream, RelayLimits, RelayNode, digest
from .seal import KeyPair
from .wire import NodeAddr, decode_envelope

log = logging.getLogger(__name__)

MAX_DATAGRAM = 65535
EventSink = Callable[[dict], None]


def _bind(addr: NodeAddr | tuple[str, int]) -> socket.socket:
    host, port = addr.sockaddr if isinstance(addr, NodeAddr) else addr
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_DGRAM)
    sock.setblocking(False)
    sock.bind((host, port))
    return sock


def _drain(sock: socket.socket):
    while True:
        try:
            yield sock.recvfrom(MAX_DATAGRAM)
        except (BlockingIOError, InterruptedError):
            return
        except ConnectionRefusedError:
            # ICMP port-unreachable from an earlier send; nothing to read
            continue


class _Daemon:
    def __init__(self):
        self.loop: asyncio.AbstractEventLoop | None = None
        self._socks: list[socket.socket] = []
        self._timers: list[asyncio.TimerHandle] = []

    def _watch(self, sock: socket.socket, callback, *args) -> None:
        self.loop.add_reader(sock.fileno(), callback, sock, *args)
        self._socks.append(sock)

    def _unwatch(self, sock: socket.socket) -> None:
        if sock in self._socks:
            self.loop.remove_reader(sock.fileno())
            self._socks.remove(sock)
        sock.close()

    def _every(self, interval: float, fn) -> None:
        def tick():
            try:
                fn()
            except Exception:  # keep the timer alive
                log.exception("periodic task failed")
            self._timers.append(self.loop.call_later(interval, tick))
        self._timers.append(self.loop.call_later(interval, tick))

    def close(self) -> None:
        for t in self._timers:
            t.cancel()
        for sock in list(self._socks):
            self._unwatch(sock)


class UdpRelay(_Daemon):
    def __init__(self, listen: NodeAddr, public_addr: NodeAddr | None = None,
                 limits: RelayLimits = RelayLimits(), name: str | None = None,
                 on_event: EventSink | None = None):
        super().__init__()
        self.listen = listen
        self.public_addr = public_addr or listen
        self.on_event = on_event
        self._upstream: dict[NodeAddr, socket.socket] = {}
        observe = (lambda obs: on_event(obs.to_json())) if on_event else None
        self.node = RelayNode(self.public_addr, limits, name, self._allocate, self._release, observe)

    async def start(self) -> "UdpRelay":
        self.loop = asyncio.get_running_loop()
        self.sock = _bind(self.listen)
        self._watch(self.sock, self._on_query)
        self._every(max(self.node.limits.session_ttl / 2, 0.05),
                    lambda: self.node.table.purge_expired(time.monotonic()))
        return self

    def _allocate(self) -> NodeAddr:
        sock = _bind((str(self.listen.ip), 0))
        endpoint = NodeAddr.from_sockaddr(sock.getsockname())
        self._upstream[endpoint] = sock
        self._watch(sock, self._on_response, endpoint)
        return endpoint

    def _release(self, endpoint: NodeAddr) -> None:
        sock = self._upstream.pop(endpoint, None)
        if sock is not None:
            self._unwatch(sock)

    def _on_query(self, sock):
        for data, src in _drain(sock):
            action, endpoint = self.node.on_query(data, NodeAddr.from_sockaddr(src), time.monotonic())
            if isinstance(action, ForwardUpstream):
                self._upstream[endpoint].sendto(action.data, action.dest.sockaddr)
            elif self.on_event:
                self.on_event({"event": "relay_drop", "relay": self.node.name,
                               "reason": action.reason.value, "t": time.monotonic()})

    def _on_response(self, sock, endpoint):
        for data, _src in _drain(sock):
            action = self.node.on_response(data, endpoint, time.monotonic())
            if isinstance(action, ForwardDownstream):
                self.sock.sendto(action.data, action.dest.sockaddr)


class UdpTarget(_Daemon):
    def __init__(self, listen: NodeAddr, keys: KeyPair, zone: dnscore.StaticZone,
                 upstream: tuple[str, int] | None = None, on_event: EventSink | None = None):
        super().__init__()
        self.listen = listen
        self.keys = keys
        self.resolver = endpoints.zone_resolver(zone, upstream)
        self.blocking = upstream is not None
        self.on_event = on_event
        self.counters: Counter = Counter()

    async def start(self) -> "UdpTarget":
        self.loop = asyncio.get_running_loop()
        self.sock = _bind(self.listen)
        self._watch(self.sock, self._on_query)
        return self

    def _answer(self, data: bytes, src: NodeAddr) -> None:
        out = endpoints.target_handle_query(data, src, self.keys, self.resolver, self.counters)
        if out is not None:
            self.sock.sendto(out.data, out.dest.sockaddr)

    def _on_query(self, sock):
        for data, src in _drain(sock):
            src = NodeAddr.from_sockaddr(src)
            if self.on_event:
                self.on_event({"event": "target_recv", "sender": str(src),
                               "payload": digest(data), "t": time.monotonic()})
            if self.blocking:
                # upstream passthrough blocks on a socket read
                self.loop.run_in_executor(None, self._answer, data, src)
            else:
                self._answer(data, src)


class UdpClient(_Daemon):
    """Do53 listener in front of the multi-relay client logic."""

    def __init__(self, cfg: ClientConfig, rng: random.Random | None = None,
                 upstream_bind: tuple[str, int] | None = None, name: str | None = None,
                 on_event: EventSink | None = None):
        super().__init__()
        self.cfg = cfg
        self.rng = rng or random.SystemRandom()
        self.state = endpoints.ClientState()
        self.upstream_bind = upstream_bind or (str(cfg.listen.ip), 0)
        self.name = name or str(cfg.listen)
        self.on_event = on_event

    async def start(self) -> "UdpClient":
        self.loop = asyncio.get_running_loop()
        self.sock = _bind(self.cfg.listen)
        self.upstream = _bind(self.upstream_bind)
        self.upstream_addr = NodeAddr.from_sockaddr(self.upstream.getsockname())
        self._watch(self.sock, self._on_do53)
        self._watch(self.upstream, self._on_response)
        self._every(min(self.cfg.query_timeout / 4, 0.25), self._tick)
        return self

    def _emit_send(self, pq: endpoints.PendingQuery, data: bytes) -> None:
        if self.on_event:
            self.on_event({"event": "client_send", "client": self.name,
                           "payload": digest(decode_envelope(data).payload),
                           "path": [str(a) for a in pq.path.nodes()], "k": pq.path.k,
                           "t": time.monotonic()})

    def _on_do53(self, sock):
        for data, src in _drain(sock):
            src = NodeAddr.from_sockaddr(src)
            try:
                out, pq = endpoints.client_handle_do53(data, src, self.cfg, self.state, self.rng, time.monotonic())
            except dnscore.DNSError:
                reply = dnscore.build_error_response(data, dnscore.FORMERR)
                if reply is not None:
                    sock.sendto(reply, src.sockaddr)
                continue
            except Exception as exc:
                log.warning("cannot send query: %s", exc)
                reply = dnscore.build_error_response(data, dnscore.SERVFAIL)
                if reply is not None:
                    sock.sendto(reply, src.sockaddr)
                continue
            self._emit_send(pq, out.data)
            self.upstream.sendto(out.data, out.dest.sockaddr)

    def _on_response(self, sock):
        for data, _src in _drain(sock):
            out = endpoints.client_handle_response(data, self.state, time.monotonic())
            if out is not None:
                self.sock.sendto(out.data, out.dest.sockaddr)

    def _tick(self):
        result = endpoints.client_tick(self.state, self.cfg, self.rng, time.monotonic())
        for out, pq in zip(result.retransmit, result.requeued):
            self._emit_send(pq, out.data)
            self.upstream.sendto(out.data, out.dest.sockaddr)
        for out in result.servfail:
            self.sock.sendto(out.data, out.dest.sockaddr)


class StatsWriter:
    """Appends one JSON object of counters per interval to a file."""

    def __init__(self, path: str, source: Callable[[], dict]):
        self.path = path
        self.source = source

    def write(self) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"t": time.time(), **self.source()}) + "\n")


class LoopThread:
    """An asyncio loop running in a background thread."""

    def __init__(self):
        self.loop = asyncio.new_event_loop()
        self.thread = threading.Thread(target=self.loop.run_forever, daemon=True)
        self.thread.start()

    def run(self, coro, timeout: float | None = 30):
        return asyncio.run_coroutine_threadsafe(coro, self.loop).result(timeout)

    def call(self, fn, *args, timeout: float | None = 30):
        async def wrap():
            return fn(*args)
        return self.run(wrap(), timeout)

    def stop(self) -> None:
        self.loop.call_soon_threadsafe(self.loop.stop)
        self.thread.join(5)
        self.loop.close()
