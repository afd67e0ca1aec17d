"""Drive clients, relays and a target through a measurement workload.

Two transports:

* ``memory``: every node runs on :class:`SimNetwork`; fully deterministic
  under a seed, RTTs are pure link latency.
* ``loopback``: real UDP daemons from :mod:`modns.net` on 127.0.0.0/8, one
  IP per node, driven from a stub resolver socket.

Both produce the same trace events (JSON-friendly dicts).
"""

from __future__ import annotations

import hashlib
import json
import random
import socket
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable

from .. import dnscore, endpoints
from ..net import LoopThread, UdpClient, UdpRelay, UdpTarget
from ..relaynode import Drop, ForwardDownstream, ForwardUpstream, RelayNode, digest
from ..wire import NodeAddr, decode_envelope
from .topology import TopologySpec, serialize_topology
from .transport import SimNetwork

SIM_EPHEMERAL_BASE = 40000


class HarnessTimeout(RuntimeError):
    pass


@dataclass
class QueryRecord:
    client: str
    name: str
    dns_id: int
    rtt: float
    correct: bool
    payload: str | None = None
    path: list[str] | None = None


@dataclass
class WorkloadResult:
    queries: list[QueryRecord] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    relay_counters: dict[str, dict] = field(default_factory=dict)

    @property
    def rtts(self) -> list[float]:
        return [q.rtt for q in self.queries]

    @property
    def mean_rtt(self) -> float:
        return sum(self.rtts) / len(self.rtts) if self.queries else float("nan")

    @property
    def answer_rate(self) -> float:
        return sum(q.correct for q in self.queries) / len(self.queries) if self.queries else 0.0

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for ev in self.trace:
            h.update(json.dumps(ev, sort_keys=True).encode())
        return h.hexdigest()


def _expected(zone: dnscore.StaticZone, name: str) -> list[bytes]:
    answers, _ = dnscore.resolve_static(zone, dnscore.Question(0, name))
    return [a.rdata for a in answers]


def _check_answer(raw: bytes, dns_id: int, name: str, zone) -> bool:
    try:
        resp = dnscore.parse_response(raw)
    except dnscore.DNSError:
        return False
    return (
        resp.id == dns_id
        and resp.rcode == dnscore.NOERROR
        and resp.question is not None
        and resp.question.qname == name
        and [a.rdata for a in resp.answers] == _expected(zone, name)
    )


def _workload_suffix(topo: TopologySpec) -> str:
    suffixes = topo.target.zone.wildcard_suffixes
    if not suffixes:
        raise ValueError("target zone needs a wildcard entry to answer cache-busting names")
    return suffixes[0]


def run_workload(topo: TopologySpec, n_queries: int, relay_setting: int | None = None,
                 rng: random.Random | None = None, seed: int = 0) -> WorkloadResult:
    """Issue ``n_queries`` cache-busting A queries round-robin over the clients.

    ``relay_setting`` pins every client to exactly that many relays after its
    next-hop. Queries are sequential: each waits for its answer (or raises
    HarnessTimeout after ten query timeouts).
    """
    if relay_setting is not None:
        topo = topo.with_relay_count(relay_setting)
    rng = rng or random.Random(seed)
    if topo.transport == "memory":
        return _run_memory(topo, n_queries, rng)
    return _run_loopback(topo, n_queries, rng)


class _SimClient:
    def __init__(self, spec, topo: TopologySpec, net: SimNetwork, trace: list, rng: random.Random, on_answer):
        self.spec = spec
        self.cfg = topo.client_config(spec)
        self.net = net
        self.trace = trace
        self.rng = rng
        self.state = endpoints.ClientState()
        self.on_answer = on_answer
        net.bind(spec.addr, self._on_response)

    def _sent(self, pq, data):
        self.trace.append({"t": self.net.now, "event": "client_send", "client": self.spec.id,
                           "payload": digest(decode_envelope(data).payload),
                           "path": [str(a) for a in pq.path.nodes()], "k": pq.path.k})

    def submit(self, raw: bytes, token: Hashable) -> tuple[str, list[str]]:
        out, pq = endpoints.client_handle_do53(raw, token, self.cfg, self.state, self.rng, self.net.now)
        self._sent(pq, out.data)
        self.net.send(self.spec.addr, out.dest, out.data)
        self.net.call_at(self.net.now + self.cfg.query_timeout + 1e-9, self._tick)
        return digest(decode_envelope(out.data).payload), [str(a) for a in pq.path.nodes()]

    def _on_response(self, data, src):
        out = endpoints.client_handle_response(data, self.state, self.net.now)
        if out is not None:
            self.on_answer(out.dest, out.data)

    def _tick(self):
        result = endpoints.client_tick(self.state, self.cfg, self.rng, self.net.now)
        for out, pq in zip(result.retransmit, result.requeued):
            self._sent(pq, out.data)
            self.net.send(self.spec.addr, out.dest, out.data)
        for out in result.servfail:
            self.on_answer(out.dest, out.data)
        if self.state.pending:
            self.net.call_at(self.net.now + self.cfg.query_timeout + 1e-9, self._tick)


def _sim_relay(spec, net: SimNetwork, trace: list) -> RelayNode:
    ports = iter(range(SIM_EPHEMERAL_BASE, 65536))

    def allocate():
        ep = NodeAddr(spec.addr.ip, next(ports))
        net.bind(ep, lambda data, src: on_response(data, ep))
        return ep

    def observe(obs):
        ev = obs.to_json()
        ev["t"] = net.now
        trace.append(ev)

    node = RelayNode(spec.addr, spec.limits, spec.id, allocate, net.unbind, observe)

    def on_query(data, src):
        action, ep = node.on_query(data, src, net.now)
        if isinstance(action, ForwardUpstream):
            net.send(ep, action.dest, action.data)
        elif isinstance(action, Drop):
            trace.append({"t": net.now, "event": "relay_drop", "relay": spec.id, "reason": action.reason.value})

    def on_response(data, ep):
        action = node.on_response(data, ep, net.now)
        if isinstance(action, ForwardDownstream):
            net.send(spec.addr, action.dest, action.data)

    net.bind(spec.addr, on_query)
    return node


def _run_memory(topo: TopologySpec, n_queries: int, rng: random.Random) -> WorkloadResult:
    result = WorkloadResult()
    trace = result.trace
    trace.append({"t": 0.0, "event": "topology", "text": serialize_topology(topo)})

    def latency(src, dst):
        a, b = topo.owner_of(src), topo.owner_of(dst)
        return topo.link_latency(a[1], b[1]) / 1000.0

    net = SimNetwork(latency)
    target = topo.target
    target_counters = Counter()

    def on_target(data, src):
        trace.append({"t": net.now, "event": "target_recv", "sender": str(src), "payload": digest(data)})
        out = endpoints.target_handle_query(data, src, target.keys, target.zone, target_counters)
        if out is not None:
            net.send(target.addr, out.dest, out.data)

    net.bind(target.addr, on_target)
    relays = {r.id: _sim_relay(r, net, trace) for r in topo.relays}

    answers: dict[Hashable, tuple[float, bytes]] = {}
    clients = [
        _SimClient(c, topo, net, trace, random.Random(rng.getrandbits(64)),
                   lambda token, data: answers.setdefault(token, (net.now, data)))
        for c in topo.clients
    ]
    suffix = _workload_suffix(topo)
    limit = 10 * max(c.cfg.query_timeout for c in clients)
    for i in range(n_queries):
        client = clients[i % len(clients)]
        name = dnscore.gen_cachebust_name(suffix, rng)
        dns_id = rng.getrandbits(16)
        token = ("stub", client.spec.id, i)
        start = net.now
        payload, path = client.submit(dnscore.build_query(name, qid=dns_id), token)
        net.run(until=start + limit, stop=lambda: token in answers)
        if token not in answers:
            raise HarnessTimeout(f"query {i} ({name}) unanswered after {limit:.1f}s")
        done, raw = answers.pop(token)
        rtt = done - start
        ok = _check_answer(raw, dns_id, name, target.zone)
        trace.append({"t": done, "event": "client_answer", "client": client.spec.id,
                      "name": name, "rtt": rtt, "correct": ok})
        result.queries.append(QueryRecord(client.spec.id, name, dns_id, rtt, ok, payload, path))
    result.relay_counters = {rid: dict(node.counters) for rid, node in relays.items()}
    return result


def _run_loopback(topo: TopologySpec, n_queries: int, rng: random.Random) -> WorkloadResult:
    result = WorkloadResult()
    lock = threading.Lock()
    events = []
    start_clock = time.monotonic()

    def sink(ev):
        ev = dict(ev)
        ev["t"] = ev.get("t", time.monotonic()) - start_clock
        with lock:
            events.append(ev)

    lt = LoopThread()
    daemons = []
    try:
        target = topo.target
        daemons.append(lt.run(UdpTarget(target.addr, target.keys, target.zone, on_event=sink).start()))
        relays = []
        for r in topo.relays:
            relays.append(lt.run(UdpRelay(r.addr, r.addr, r.limits, r.id, on_event=sink).start()))
        daemons += relays
        clients = []
        for c in topo.clients:
            cfg = topo.client_config(c)
            client = UdpClient(cfg, random.Random(rng.getrandbits(64)),
                               upstream_bind=(str(c.addr.ip), 0), name=c.id, on_event=sink)
            clients.append(lt.run(client.start()))
        daemons += clients

        suffix = _workload_suffix(topo)
        stub = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        stub.bind(("127.0.0.1", 0))
        try:
            for i in range(n_queries):
                client = clients[i % len(clients)]
                name = dnscore.gen_cachebust_name(suffix, rng)
                dns_id = rng.getrandbits(16)
                limit = 10 * client.cfg.query_timeout
                t0 = time.perf_counter()
                stub.sendto(dnscore.build_query(name, qid=dns_id), client.cfg.listen.sockaddr)
                raw = _await_reply(stub, dns_id, t0 + limit)
                rtt = time.perf_counter() - t0
                if raw is None:
                    raise HarnessTimeout(f"query {i} ({name}) unanswered after {limit:.1f}s")
                ok = _check_answer(raw, dns_id, name, target.zone)
                result.queries.append(QueryRecord(client.name, name, dns_id, rtt, ok))
        finally:
            stub.close()
        result.relay_counters = {r.node.name: dict(r.node.counters) for r in relays}
    finally:
        for d in daemons:
            lt.call(d.close)
        lt.stop()

    with lock:
        events.sort(key=lambda ev: ev["t"])
        result.trace = [{"t": 0.0, "event": "topology", "text": serialize_topology(topo)}] + events
    return result


def _await_reply(sock: socket.socket, dns_id: int, deadline: float) -> bytes | None:
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            return None
        sock.settimeout(remaining)
        try:
            data, _ = sock.recvfrom(65535)
        except socket.timeout:
            return None
        if len(data) >= 2 and dnscore.message_id(data) == dns_id:
            return data


def write_trace(trace: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in trace:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")


def read_trace(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
