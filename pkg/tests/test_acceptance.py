"""Acceptance suite: one test per criterion, each printing a PASS or FAIL line."""

import itertools
import random
import time
from collections import Counter
from contextlib import contextmanager

import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from modns import seal, wire
from modns.anonet import harness, topology
from modns.anonet.attribution import (
    enumerate_outcomes,
    identification_probability_exact,
    identification_probability_mc,
    normal_band,
    outcome_count,
)
from modns.pathsel import PathPolicy, RelayEntry, select_path
from modns.relaynode import Drop, DropReason, ForwardUpstream, RelayLimits, handle_upstream
from modns.seal import Direction, KeyPair, SealedMessage
from modns.wire import Envelope, NodeAddr

from .conftest import ACCEPTANCE, golden_vectors
from .strategies import addrs
from .topologies import dedicated_unshared, fig3, random_topology


@contextmanager
def criterion(num, title, limit=None):
    note = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield note
        elapsed = time.perf_counter() - t0
        assert limit is None or elapsed < limit, f"took {elapsed:.2f}s, limit {limit}s"
        ok = True
    finally:
        elapsed = time.perf_counter() - t0
        extra = f"; {note['detail']}" if "detail" in note else ""
        line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {title} ({elapsed:.2f}s{extra})"
        print(line)
        ACCEPTANCE.append(line)


def rand_addr(rng):
    if rng.random() < 0.7:
        ip = ".".join(str(rng.randrange(256)) for _ in range(4))
        return NodeAddr.parse(f"{ip}:{rng.randint(1, 65535)}")
    ip = ":".join(f"{rng.getrandbits(16):x}" for _ in range(8))
    addr = NodeAddr.parse(f"[{ip}]:{rng.randint(1, 65535)}")
    return addr


def rand_envelope(rng):
    payload = rng.randbytes(rng.randint(1, 300))
    kind = rng.random()
    if kind < 0.6:
        return Envelope.modns([rand_addr(rng) for _ in range(rng.randint(1, 12))], payload)
    if kind < 0.8:
        return Envelope.adns(rand_addr(rng), payload)
    while payload[:8] == b"\xff" * 8:
        payload = rng.randbytes(len(payload))
    return Envelope.bare(payload)


# 1


def test_c1_wire_conformance():
    with criterion(1, "wire golden vectors and 10^4 roundtrips", limit=5) as note:
        vecs = golden_vectors()
        assert len(vecs) == 20
        for name, env, raw in vecs:
            assert wire.encode_envelope(env) == raw, name
            assert wire.decode_envelope(raw) == env, name
        rng = random.Random(1)
        kinds = Counter()
        for _ in range(10_000):
            env = rand_envelope(rng)
            raw = wire.encode_envelope(env)
            back = wire.decode_envelope(raw)
            assert back == env and wire.encode_envelope(back) == raw
            kinds[env.kind.value] += 1
        note["detail"] = "20 vectors, " + ", ".join(f"{k}={v}" for k, v in sorted(kinds.items()))


# 2

_c2_seen = Counter()


@settings(max_examples=400, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(1, 8).flatmap(lambda n: st.lists(addrs, min_size=n + 2, max_size=n + 2, unique=True)),
       st.binary(min_size=1, max_size=200))
def _strip_chain(addresses, payload):
    client, nexthop, *hops = addresses
    assume(not any(a.to_bytes() in payload for a in addresses))
    data = wire.encode_envelope(Envelope.modns(hops, payload))
    sender, here = client, nexthop
    prior = [client]
    visited = []
    limits = RelayLimits()
    for _ in hops:
        act = handle_upstream(data, sender, limits, here)
        assert isinstance(act, ForwardUpstream)
        prior.append(here)
        visited.append(act.dest)
        for p in prior:
            assert p.to_bytes() not in act.data
        sender, here, data = here, act.dest, act.data
    assert visited == hops and data == payload
    _c2_seen[len(hops)] += 1


def test_c2_hop_stripping_chain():
    with criterion(2, "hop stripping for n = 1..8 with byte scan", limit=10) as note:
        _c2_seen.clear()
        _strip_chain()
        assert set(_c2_seen) == set(range(1, 9))
        note["detail"] = f"{sum(_c2_seen.values())} chains"


# 3 and 4


def loopback_topology():
    return topology.simple_topology(4, transport="loopback", base="127.77")


def test_c3_end_to_end_loopback():
    with criterion(3, "loopback resolution, 1000 queries at k = 0..3", limit=60) as note:
        topo = loopback_topology()
        means = []
        for k in range(4):
            res = harness.run_workload(topo, 1000, relay_setting=k, seed=100 + k)
            assert len(res.queries) == 1000
            assert all(q.correct for q in res.queries)
            forwards = sum(c.get("forwarded_up", 0) for c in res.relay_counters.values())
            assert forwards == 1000 * (k + 1)
            means.append(res.mean_rtt * 1000)
        note["detail"] = "mean ms " + " / ".join(f"{m:.2f}" for m in means)


def test_c4_per_hop_overhead():
    with criterion(4, "per-hop overhead", limit=60) as note:
        topo = topology.simple_topology(4, link_ms=5.0)
        mem = []
        for k in range(4):
            res = harness.run_workload(topo, 500, relay_setting=k, seed=k)
            expected = 10.0 * (k + 2)
            assert abs(res.mean_rtt * 1000 - expected) <= 0.10 * expected
            mem.append(res.mean_rtt * 1000)
        lb = loopback_topology()
        r0 = harness.run_workload(lb, 1000, relay_setting=0, seed=7).mean_rtt * 1000
        r3 = harness.run_workload(lb, 1000, relay_setting=3, seed=8).mean_rtt * 1000
        assert r3 - r0 < 5.0
        note["detail"] = ("memory ms " + " / ".join(f"{m:.1f}" for m in mem)
                          + f"; loopback k=3 minus k=0 = {r3 - r0:.3f} ms")


# 5


def fuzz_case(rng, self_addr, limit):
    def fresh(n):
        out = set()
        while len(out) < n:
            a = rand_addr(rng)
            if a != self_addr:
                out.add(a)
        return list(out)

    payload = rng.randbytes(rng.randint(1, 64))
    kind = rng.randrange(5)
    if kind == 0:  # loop through a repeated hop
        hops = fresh(rng.randint(1, limit))
        hops.insert(rng.randrange(len(hops) + 1), rng.choice(hops))
        return wire.encode_envelope(Envelope.modns(hops, payload)), DropReason.LOOP_DETECTED
    if kind == 1:  # own address in the header
        hops = fresh(rng.randint(0, limit))
        hops.insert(rng.randrange(len(hops) + 1), self_addr)
        return wire.encode_envelope(Envelope.modns(hops, payload)), DropReason.LOOP_DETECTED
    if kind == 2:  # more subsequent hops than allowed
        hops = fresh(rng.randint(limit + 2, limit + 30))
        return wire.encode_envelope(Envelope.modns(hops, payload)), DropReason.HOP_LIMIT_EXCEEDED
    if kind == 3:  # header cut short
        n = rng.randint(1, 20)
        raw = wire.encode_envelope(Envelope.modns(fresh(n), payload))
        return raw[: rng.randint(len(wire.MODNS_MAGIC), wire.header_length(n) - 1)], DropReason.TRUNCATED
    return wire.MODNS_MAGIC + b"\x00" + payload, DropReason.ZERO_HOPS


def test_c5_drop_rules():
    with criterion(5, "10^4 fuzzed envelopes dropped with the right reason", limit=10) as note:
        rng = random.Random(5)
        limits = RelayLimits()
        me = NodeAddr.parse("10.0.0.1:8443")
        seen = Counter()
        for _ in range(10_000):
            raw, reason = fuzz_case(rng, me, limits.max_subsequent_hops)
            assert handle_upstream(raw, NodeAddr.parse("10.9.9.9:5300"), limits, me) == Drop(reason)
            seen[reason.value] += 1
        assert len(seen) == 4
        note["detail"] = ", ".join(f"{k}={v}" for k, v in sorted(seen.items()))


# 6


def test_c6_dedicated_nexthop_fully_colluded():
    with criterion(6, "dedicated next-hop with the whole pool colluded is identified") as note:
        topo = dedicated_unshared(n_pool=3, k_max=2)
        pool = set(topo.client("C1").pool)
        p = identification_probability_exact(topo, pool, client="C1")
        assert p == 1.0
        note["detail"] = f"P = {p}"


# 7


def test_c7_mutual_sharing_hides_both_clients():
    with criterion(7, "mutual sharing with R_C colluded never identifies") as note:
        topo = fig3()
        outcomes = list(enumerate_outcomes(topo, {"RC"}))
        assert {o.client for o in outcomes} == {"A", "B"}
        assert not any(o.identified for o in outcomes)
        smallest = min(len(o.candidates) for o in outcomes)
        assert smallest >= 2
        assert identification_probability_exact(topo, {"RC"}) == 0.0
        note["detail"] = f"{len(outcomes)} outcomes, smallest candidate set {smallest}"


# 8


def mc_fixtures(count=20):
    rng = random.Random(2024)
    out = []
    while len(out) < count:
        topo = random_topology(rng, max_relays=6, max_clients=4)
        ids = [r.id for r in topo.relays]
        colluded = set(rng.sample(ids, rng.randint(1, len(ids))))
        if outcome_count(topo) > 10**5:
            continue
        p = identification_probability_exact(topo, colluded)
        if 0.02 < p < 0.98:
            out.append((topo, colluded, p))
    return out


def test_c8_monte_carlo_matches_exact():
    with criterion(8, "Monte-Carlo within the 95% band of exact", limit=120) as note:
        trials = 100_000
        inside = 0
        for i, (topo, colluded, exact) in enumerate(mc_fixtures()):
            est = identification_probability_mc(topo, colluded, trials, random.Random(i))
            inside += abs(est.estimate - exact) <= normal_band(exact, trials)
        note["detail"] = f"{inside}/20 inside"
        assert inside >= 19


# 9


def test_c9_crypto_contract():
    with criterion(9, "seal roundtrip, tamper detection and padding", limit=30) as note:
        rng = random.Random(9)
        client, resolver = KeyPair.generate(rng), KeyPair.generate(rng)
        flips = 0
        for _ in range(10_000):
            pt = rng.randbytes(rng.randint(0, 512))
            msg = seal.seal(client, resolver.public, Direction.QUERY, pt, seal.new_nonce(rng))
            raw = msg.to_bytes()
            assert seal.open_sealed(resolver, SealedMessage.from_bytes(raw), Direction.QUERY) == pt
            bad = bytearray(raw)
            bit = rng.randrange(len(raw) * 8)
            bad[bit // 8] ^= 1 << (bit % 8)
            with pytest.raises(seal.SealError):
                seal.open_sealed(resolver, SealedMessage.from_bytes(bytes(bad)), Direction.QUERY)
            flips += 1
        for n in range(257):
            padded = seal.pad(bytes(n))
            assert len(padded) % 64 == 0 and len(padded) > n
        note["detail"] = f"{flips} flips all rejected"


# 10


def chi_square_config(flagged, others, lo, hi, draws, seed):
    target = NodeAddr.parse("10.0.9.53:8443")
    pol = PathPolicy([RelayEntry(a, True) for a in flagged] + [RelayEntry(a) for a in others], [target], lo, hi)
    expected = {}
    ks = range(lo, hi + 1)
    for nh in flagged:
        rest = [a for a in flagged + others if a != nh]
        for k in ks:
            perms = list(itertools.permutations(rest, k))
            for sel in perms:
                expected[(nh, sel)] = 1 / len(flagged) / len(ks) / len(perms)
    rng = random.Random(seed)
    counts = Counter()
    for _ in range(draws):
        p = select_path(pol, rng)
        counts[(p.nexthop, p.subsequent)] += 1
    assert set(counts) <= set(expected)
    keys = sorted(expected, key=str)
    return chisquare([counts[k] for k in keys], [expected[k] * draws for k in keys]).pvalue


def test_c10_path_distribution():
    with criterion(10, "chi-square uniformity of subsequent relays", limit=10) as note:
        r = [NodeAddr.parse(f"10.0.0.{i}:8443") for i in range(1, 9)]
        pvalues = [
            chi_square_config(r[:1], r[1:5], 1, 1, 100_000, 1),  # 4 cells
            chi_square_config(r[:1], r[1:6], 2, 2, 100_000, 2),  # 20 ordered pairs
            chi_square_config(r[:2], r[2:6], 0, 2, 100_000, 3),  # two next-hops, mixed lengths
        ]
        note["detail"] = "p = " + ", ".join(f"{p:.3f}" for p in pvalues)
        assert all(p > 0.01 for p in pvalues)
