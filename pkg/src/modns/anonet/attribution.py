"""Who could have sent this query? Attribution under colluding relays.

The adversary is the target resolver plus a set of semi-honest relays that
hand over their forwarding logs. Because relays never touch the sealed
payload, its digest links one query across every colluding hop. Starting
from the address the resolver saw, the adversary walks backwards through
colluding relays until it reaches an entity that did not collude; the
candidate origins are the clients that could have routed through that
entity followed by the colluding run the adversary observed.

Three ways to get an identification probability:

* :func:`attribute_query` on logs from a real (simulated) trace;
* :func:`identification_probability_mc`: sample paths with the client's own
  path selector;
* :func:`identification_probability_exact`: enumerate every path outcome
  with its exact probability.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from ..pathsel import InsufficientRelays, select_path
from .topology import ClientSpec, TopologySpec

DEFAULT_MAX_OUTCOMES = 1_000_000


class InconsistentLogs(RuntimeError):
    pass


class SpaceTooLarge(RuntimeError):
    pass


@dataclass
class CollusionScenario:
    colluded: frozenset[str]
    relay_logs: dict[str, dict[str, str]] = field(default_factory=dict)
    resolver_log: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_trace(cls, trace: Iterable[dict], colluded: Iterable[str]) -> "CollusionScenario":
        """Keep only what the colluders and the resolver could have recorded.

        ``relay_logs[relay][payload_digest] = prev_hop`` and
        ``resolver_log[payload_digest] = sender``.
        """
        colluded = frozenset(colluded)
        scen = cls(colluded, {r: {} for r in colluded})
        for ev in trace:
            if ev["event"] == "relay_forward" and ev["relay"] in colluded:
                scen.relay_logs[ev["relay"]][ev["payload"]] = ev["prev"]
            elif ev["event"] == "target_recv":
                scen.resolver_log[ev["payload"]] = ev["sender"]
        return scen


@dataclass(frozen=True)
class AttributionResult:
    payload: str
    candidates: frozenset[str]
    first_honest: tuple[str, str] | None
    chain: tuple[str, ...] = ()

    @property
    def identified(self) -> bool:
        return len(self.candidates) == 1


def relay_candidates(topo: TopologySpec, relay_id: str, chain: tuple[str, ...] = ()) -> frozenset[str]:
    """Clients that could have routed through ``relay_id`` followed by ``chain``.

    ``chain`` is the run of colluding relays observed after ``relay_id``, in
    path order. A client qualifies if ``relay_id`` is its next-hop and it may
    use exactly ``len(chain)`` further relays, or if it could place
    ``relay_id`` later on a path: it lists every relay involved, may use at
    least ``len(chain) + 1`` relays after its next-hop, and has a next-hop
    outside the observed run.
    """
    seen = {relay_id, *chain}
    m = len(chain)
    out = set()
    for c in topo.clients:
        listed = set(topo.client_pool(c))
        if not set(chain) <= listed:
            continue
        if relay_id in c.nexthops and c.min_relays <= m <= c.max_relays:
            out.add(c.id)
        elif relay_id in listed and c.max_relays >= m + 1 and any(h not in seen for h in c.nexthops):
            out.add(c.id)
    return frozenset(out)


def _candidates_for(topo: TopologySpec, owner: tuple[str, str] | None, chain: tuple[str, ...],
                    cache: dict) -> frozenset[str]:
    if owner is None:
        return frozenset(c.id for c in topo.clients)
    kind, node_id = owner
    if kind == "client":
        return frozenset([node_id])
    key = (node_id, chain)
    if key not in cache:
        cache[key] = relay_candidates(topo, node_id, chain)
    return cache[key]


def attribute_query(scenario: CollusionScenario, payload: str, topo: TopologySpec,
                    _cache: dict | None = None) -> AttributionResult:
    """Walk back from the resolver through colluding relays to the first honest node."""
    if payload not in scenario.resolver_log:
        raise KeyError(f"payload {payload} never reached the resolver")
    current = scenario.resolver_log[payload]
    owner = topo.owner_of(current)
    chain: list[str] = []
    while owner is not None and owner[0] == "relay" and owner[1] in scenario.colluded:
        if owner[1] in chain:
            raise InconsistentLogs(f"chain for {payload} revisits {owner[1]}")
        chain.append(owner[1])
        log = scenario.relay_logs.get(owner[1], {})
        if payload not in log:
            raise InconsistentLogs(f"colluding relay {owner[1]} has no record of {payload}")
        current = log[payload]
        owner = topo.owner_of(current)
    chain_t = tuple(reversed(chain))
    cands = _candidates_for(topo, owner, chain_t, {} if _cache is None else _cache)
    return AttributionResult(payload, cands, owner, chain_t)


def attribute_trace(trace: list[dict], colluded: Iterable[str], topo: TopologySpec) -> dict[str, AttributionResult]:
    scen = CollusionScenario.from_trace(trace, colluded)
    cache: dict = {}
    return {p: attribute_query(scen, p, topo, cache) for p in scen.resolver_log}


def walk_path(path_ids: tuple[str, ...], colluded: frozenset[str]) -> tuple[tuple[str, str], tuple[str, ...]]:
    """The chain walk done analytically on a known path.

    ``path_ids`` is (client, nexthop, subsequent...); clients never collude.
    Returns the first honest node and the colluding run after it.
    """
    i = len(path_ids) - 1
    while i > 0 and path_ids[i] in colluded:
        i -= 1
    owner = ("client", path_ids[0]) if i == 0 else ("relay", path_ids[i])
    return owner, tuple(path_ids[i + 1:])


@dataclass(frozen=True)
class Outcome:
    client: str
    relay_ids: tuple[str, ...]
    probability: float
    candidates: frozenset[str]
    first_honest: tuple[str, str]

    @property
    def identified(self) -> bool:
        return len(self.candidates) == 1


def _client_weights(topo: TopologySpec, client: str | None) -> list[tuple[ClientSpec, float]]:
    if client is not None:
        return [(topo.client(client), 1.0)]
    return [(c, 1.0 / len(topo.clients)) for c in topo.clients]


def outcome_count(topo: TopologySpec, client: str | None = None) -> int:
    total = 0
    for c, _ in _client_weights(topo, client):
        listed = topo.client_pool(c)
        for nh in c.nexthops:
            m = len(listed) - 1
            total += sum(math.perm(m, k) for k in range(c.min_relays, c.max_relays + 1))
    return total


def enumerate_outcomes(topo: TopologySpec, colluded: Iterable[str], client: str | None = None,
                       max_outcomes: int = DEFAULT_MAX_OUTCOMES) -> Iterator[Outcome]:
    """Every (client, next-hop, ordered subsequent relays) with its probability.

    Mirrors the path selector's distribution: next-hop uniform over the
    client's flagged relays, ``k`` from the policy's length distribution,
    then a uniformly random ordered selection of ``k`` relays from the rest.
    """
    colluded = frozenset(colluded)
    size = outcome_count(topo, client)
    if size > max_outcomes:
        raise SpaceTooLarge(f"{size} outcomes exceed the limit of {max_outcomes}")
    cache: dict = {}
    for c, w_client in _client_weights(topo, client):
        listed = topo.client_pool(c)
        k_dist = topo.policy(c).length_distribution()
        for nh in c.nexthops:
            w_nh = w_client / len(c.nexthops)
            rest = [r for r in listed if r != nh]
            for k, w_k in k_dist.items():
                if k > len(rest):
                    raise InsufficientRelays(f"client {c.id} cannot pick {k} relays besides {nh}")
                p = w_nh * w_k / math.perm(len(rest), k)
                for sel in itertools.permutations(rest, k):
                    ids = (c.id, nh, *sel)
                    owner, chain = walk_path(ids, colluded)
                    yield Outcome(c.id, ids[1:], p, _candidates_for(topo, owner, chain, cache), owner)


def identification_probability_exact(topo: TopologySpec, colluded: Iterable[str], client: str | None = None,
                                     max_outcomes: int = DEFAULT_MAX_OUTCOMES) -> float:
    return math.fsum(o.probability for o in enumerate_outcomes(topo, colluded, client, max_outcomes)
                     if o.identified)


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    low: float
    high: float
    trials: int
    hits: int

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == n else min(1.0, centre + half)
    return lo, hi


def identification_probability_mc(topo: TopologySpec, colluded: Iterable[str], trials: int,
                                  rng: random.Random, client: str | None = None) -> MCEstimate:
    """Sample paths with the real selector and count identified queries."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    colluded = frozenset(colluded)
    clients = [c for c, _ in _client_weights(topo, client)]
    policies = {c.id: topo.policy(c) for c in clients}
    id_of = {r.addr: r.id for r in topo.relays}
    cache: dict = {}
    hits = 0
    for _ in range(trials):
        c = clients[0] if len(clients) == 1 else rng.choice(clients)
        path = select_path(policies[c.id], rng)
        ids = (c.id, id_of[path.nexthop], *(id_of[a] for a in path.subsequent))
        if len(_candidates_for(topo, *walk_path(ids, colluded), cache)) == 1:
            hits += 1
    lo, hi = wilson_interval(hits, trials)
    return MCEstimate(hits / trials, lo, hi, trials, hits)


def normal_band(p: float, trials: int, z: float = 1.959963984540054) -> float:
    """Half-width of the 95% band for a binomial proportion ``p`` at ``trials`` samples."""
    return z * math.sqrt(p * (1 - p) / trials)
