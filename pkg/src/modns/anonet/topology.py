"""Harness topologies: who is a client, relay or target, and how links behave.

Text format, one entity per line, ``#`` comments::

    transport memory                 # or: loopback
    link default 5                   # one-way latency in ms (memory transport)
    link R1 R2 12.5
    target 10.0.0.53:8443 [key=<hex secret>]
    zone *.example.com A 192.0.2.1   # any zone-file line, prefixed by 'zone'
    relay R1 10.0.0.1:8443 [tag=home] [max_hops=8] [ttl=10]
    client A 10.0.1.1:5300 nexthop=R1 [pool=R2,R3] [min=0] [max=2] [timeout=5] [retries=2]

Every node is identified by its IP address; a relay's ephemeral upstream
sockets share its IP, which is how observers map a source address back to a
node.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from ..conf import ClientConfig
from ..dnscore import StaticZone
from ..pathsel import PathPolicy, RelayEntry
from ..relaynode import RelayLimits
from ..seal import KeyPair
from ..wire import NodeAddr


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class RelaySpec:
    id: str
    addr: NodeAddr
    limits: RelayLimits = RelayLimits()
    tag: str | None = None


@dataclass(frozen=True)
class ClientSpec:
    id: str
    addr: NodeAddr
    nexthops: tuple[str, ...]
    pool: tuple[str, ...] | None = None
    min_relays: int = 0
    max_relays: int = 0
    query_timeout: float = 5.0
    max_retries: int = 2


@dataclass
class TargetSpec:
    addr: NodeAddr
    keys: KeyPair
    zone: StaticZone
    zone_lines: list[str] = field(default_factory=list)


def default_target_keys(addr: NodeAddr) -> KeyPair:
    # deterministic so simulated traces replay bit-for-bit
    return KeyPair.from_secret(hashlib.sha256(f"modns-sim-target:{addr}".encode()).digest())


@dataclass
class TopologySpec:
    clients: list[ClientSpec]
    relays: list[RelaySpec]
    target: TargetSpec
    transport: str = "memory"
    link_ms: float = 5.0
    links: dict[frozenset, float] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ids = [c.id for c in self.clients] + [r.id for r in self.relays]
        if len(set(ids)) != len(ids):
            raise TopologyError("node ids must be unique")
        ips = [c.addr.ip for c in self.clients] + [r.addr.ip for r in self.relays] + [self.target.addr.ip]
        if len(set(ips)) != len(ips):
            raise TopologyError("every node needs its own IP address")
        relay_ids = {r.id for r in self.relays}
        for c in self.clients:
            refs = set(c.nexthops) | set(c.pool or ())
            if not c.nexthops:
                raise TopologyError(f"client {c.id} has no next-hop")
            if refs - relay_ids:
                raise TopologyError(f"client {c.id} references unknown relays {sorted(refs - relay_ids)}")
        if self.transport not in ("memory", "loopback"):
            raise TopologyError(f"unknown transport {self.transport!r}")
        self._by_ip = {c.addr.ip: ("client", c.id) for c in self.clients}
        self._by_ip.update({r.addr.ip: ("relay", r.id) for r in self.relays})
        self._by_ip[self.target.addr.ip] = ("target", "target")
        self._relays = {r.id: r for r in self.relays}
        self._clients = {c.id: c for c in self.clients}

    def relay(self, rid: str) -> RelaySpec:
        return self._relays[rid]

    def client(self, cid: str) -> ClientSpec:
        return self._clients[cid]

    def owner_of(self, addr: NodeAddr | str) -> tuple[str, str] | None:
        """('client'|'relay'|'target', id) for the node owning ``addr``'s IP."""
        if isinstance(addr, str):
            addr = NodeAddr.parse(addr)
        return self._by_ip.get(addr.ip)

    def client_pool(self, c: ClientSpec) -> tuple[str, ...]:
        """Relay ids the client lists: its next-hops plus its subsequent pool."""
        pool = c.pool if c.pool is not None else tuple(r.id for r in self.relays)
        return tuple(dict.fromkeys((*c.nexthops, *pool)))

    def policy(self, c: ClientSpec) -> PathPolicy:
        entries = [RelayEntry(self.relay(rid).addr, rid in c.nexthops, self.relay(rid).tag)
                   for rid in self.client_pool(c)]
        return PathPolicy(entries, [self.target.addr], c.min_relays, c.max_relays)

    def client_config(self, c: ClientSpec, listen: NodeAddr | None = None) -> ClientConfig:
        return ClientConfig(
            listen=listen or c.addr,
            policy=self.policy(c),
            resolver_public_keys={self.target.addr: self.target.keys.public},
            query_timeout=c.query_timeout,
            max_retries=c.max_retries,
        )

    def link_latency(self, a: str, b: str) -> float:
        """One-way latency in ms between node ids ``a`` and ``b``."""
        return self.links.get(frozenset((a, b)), self.link_ms)

    def with_relay_count(self, k: int) -> "TopologySpec":
        """Copy in which every client uses exactly ``k`` relays after its next-hop."""
        clients = [replace(c, min_relays=k, max_relays=k) for c in self.clients]
        return TopologySpec(clients, self.relays, self.target, self.transport, self.link_ms, dict(self.links))


def _opts(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise TopologyError(f"line {lineno}: expected key=value, got {tok!r}")
        out[key] = value
    return out


def parse_topology(text: str) -> TopologySpec:
    clients, relays = [], []
    target_addr, target_key, zone_lines = None, None, []
    transport, link_ms, links = "memory", 5.0, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *rest = line.split()
        try:
            if kind == "transport":
                transport = rest[0]
            elif kind == "link":
                if rest[0] == "default":
                    link_ms = float(rest[1])
                else:
                    links[frozenset((rest[0], rest[1]))] = float(rest[2])
            elif kind == "target":
                target_addr = NodeAddr.parse(rest[0])
                opts = _opts(rest[1:], lineno)
                if "key" in opts:
                    target_key = KeyPair.from_secret(bytes.fromhex(opts["key"]))
            elif kind == "zone":
                zone_lines.append(" ".join(rest))
            elif kind == "relay":
                opts = _opts(rest[2:], lineno)
                limits = RelayLimits(
                    max_subsequent_hops=int(opts.get("max_hops", 8)),
                    session_ttl=float(opts.get("ttl", 10.0)),
                )
                relays.append(RelaySpec(rest[0], NodeAddr.parse(rest[1]), limits, opts.get("tag")))
            elif kind == "client":
                opts = _opts(rest[2:], lineno)
                pool = tuple(p for p in opts["pool"].split(",") if p) if "pool" in opts else None
                clients.append(ClientSpec(
                    rest[0], NodeAddr.parse(rest[1]),
                    tuple(opts.get("nexthop", "").split(",")) if opts.get("nexthop") else (),
                    pool,
                    int(opts.get("min", 0)), int(opts.get("max", 0)),
                    float(opts.get("timeout", 5.0)), int(opts.get("retries", 2)),
                ))
            else:
                raise TopologyError(f"line {lineno}: unknown entry {kind!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(f"line {lineno}: {exc}") from None
    if target_addr is None:
        raise TopologyError("topology has no target")
    zone = StaticZone.parse("\n".join(zone_lines))
    target = TargetSpec(target_addr, target_key or default_target_keys(target_addr), zone, zone_lines)
    return TopologySpec(clients, relays, target, transport, link_ms, links)


def load_topology(path) -> TopologySpec:
    with open(path, encoding="utf-8") as fh:
        return parse_topology(fh.read())


def serialize_topology(topo: TopologySpec) -> str:
    lines = [f"transport {topo.transport}", f"link default {topo.link_ms!r}"]
    for pair, ms in sorted(topo.links.items(), key=lambda kv: sorted(kv[0])):
        a, b = sorted(pair)
        lines.append(f"link {a} {b} {ms!r}")
    lines.append(f"target {topo.target.addr} key={topo.target.keys.secret.hex()}")
    lines += [f"zone {z}" for z in topo.target.zone_lines]
    for r in topo.relays:
        parts = ["relay", r.id, str(r.addr), f"max_hops={r.limits.max_subsequent_hops}",
                 f"ttl={r.limits.session_ttl!r}"]
        if r.tag:
            parts.append(f"tag={r.tag}")
        lines.append(" ".join(parts))
    for c in topo.clients:
        parts = ["client", c.id, str(c.addr), "nexthop=" + ",".join(c.nexthops)]
        if c.pool is not None:
            parts.append("pool=" + ",".join(c.pool))
        parts += [f"min={c.min_relays}", f"max={c.max_relays}", f"timeout={c.query_timeout!r}",
                  f"retries={c.max_retries}"]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def simple_topology(n_relays: int = 4, n_clients: int = 1, transport: str = "memory",
                    link_ms: float = 5.0, base: str = "10.0", port: int = 8443,
                    wildcard: str = "example.com") -> TopologySpec:
    """Each client owns one relay as its next-hop and may route through all others.

    Clients beyond the number of relays share next-hops round-robin.
    """
    relays = [RelaySpec(f"R{i + 1}", NodeAddr.parse(f"{base}.1.{i + 1}:{port}")) for i in range(n_relays)]
    clients = [
        ClientSpec(f"C{j + 1}", NodeAddr.parse(f"{base}.2.{j + 1}:{port}"), (relays[j % n_relays].id,))
        for j in range(n_clients)
    ]
    zone_lines = [f"*.{wildcard} A 192.0.2.1", f"{wildcard} A 192.0.2.2"]
    target_addr = NodeAddr.parse(f"{base}.3.1:{port}")
    target = TargetSpec(target_addr, default_target_keys(target_addr),
                        StaticZone.parse("\n".join(zone_lines)), zone_lines)
    return TopologySpec(clients, relays, target, transport, link_ms)
