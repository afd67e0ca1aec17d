import itertools
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modns.anonet import attribution, harness, topology
from modns.anonet.attribution import (
    CollusionScenario,
    InconsistentLogs,
    SpaceTooLarge,
    attribute_query,
    attribute_trace,
    enumerate_outcomes,
    identification_probability_exact,
    identification_probability_mc,
    relay_candidates,
    wilson_interval,
)
from modns.anonet.transport import SimNetwork

from .topologies import build, dedicated_unshared, fig3, random_topology


# topology files


def test_topology_roundtrip():
    topo = fig3()
    text = topology.serialize_topology(topo)
    again = topology.parse_topology(text)
    assert topology.serialize_topology(again) == text
    assert again.client("A").pool == ("RA", "RB", "RC")


@pytest.mark.parametrize("text", [
    "relay R1 10.0.0.1:1",                                   # no target
    "target 10.0.0.9:1\nrelay R1 10.0.0.1:1\nrelay R1 10.0.0.2:1",
    "target 10.0.0.9:1\nrelay R1 10.0.0.1:1\nrelay R2 10.0.0.1:2",
    "target 10.0.0.9:1\nclient C 10.0.2.1:1 nexthop=R9",
    "target 10.0.0.9:1\nclient C 10.0.2.1:1",
    "target 10.0.0.9:1\ntransport carrier-pigeon",
    "target 10.0.0.9:1\nwidget x",
    "target 10.0.0.9:1\nrelay R1 10.0.0.1:1 ttl",
])
def test_topology_errors(text):
    with pytest.raises(topology.TopologyError):
        topology.parse_topology(text)


def test_owner_by_ip():
    topo = topology.simple_topology(2)
    assert topo.owner_of("10.0.1.2:40001") == ("relay", "R2")
    assert topo.owner_of("10.0.2.1:1") == ("client", "C1")
    assert topo.owner_of("10.0.3.1:8443") == ("target", "target")
    assert topo.owner_of("192.0.2.9:1") is None


def test_sim_network_orders_by_time():
    got = []
    net = SimNetwork(lambda s, d: 0.002 if d == "b" else 0.001)
    net.bind("b", lambda data, src: got.append(("b", net.now)))
    net.bind("c", lambda data, src: got.append(("c", net.now)))
    net.send("a", "b", b"1")
    net.send("a", "c", b"2")
    net.send("a", "nowhere", b"3")
    net.run()
    assert got == [("c", 0.001), ("b", 0.002)] and net.undeliverable == 1


# harness


def test_memory_rtt_closed_form():
    topo = topology.simple_topology(4)
    for k in range(4):
        res = harness.run_workload(topo, 20, relay_setting=k, seed=k)
        assert res.answer_rate == 1.0
        assert all(abs(r - 0.010 * (k + 2)) < 1e-9 for r in res.rtts)


def test_link_overrides_change_rtt():
    topo = topology.simple_topology(2)
    topo.links[frozenset(("C1", "R1"))] = 20.0
    res = harness.run_workload(topo, 5, relay_setting=0)
    assert all(abs(r - 0.050) < 1e-9 for r in res.rtts)


def test_memory_deterministic_under_seed():
    topo = fig3()
    a = harness.run_workload(topo, 50, seed=4)
    b = harness.run_workload(topo, 50, seed=4)
    c = harness.run_workload(topo, 50, seed=5)
    assert a.trace_digest() == b.trace_digest() != c.trace_digest()


def test_trace_file_roundtrip(tmp_path):
    res = harness.run_workload(fig3(), 10, seed=1)
    harness.write_trace(res.trace, tmp_path / "t.jsonl")
    assert harness.read_trace(tmp_path / "t.jsonl") == res.trace


def test_resolver_only_sees_last_relay():
    topo = fig3()
    res = harness.run_workload(topo, 100, seed=2)
    sends = {ev["payload"]: ev for ev in res.trace if ev["event"] == "client_send"}
    recvs = [ev for ev in res.trace if ev["event"] == "target_recv"]
    assert len(recvs) == 100
    for ev in recvs:
        path = sends[ev["payload"]]["path"]
        assert topo.owner_of(ev["sender"]) == topo.owner_of(path[-2])
        assert topo.owner_of(ev["sender"])[0] == "relay"


def test_payload_unchanged_across_hops():
    res = harness.run_workload(fig3(), 60, seed=3)
    sent = {q.payload for q in res.queries}
    forwarded = {ev["payload"] for ev in res.trace if ev["event"] == "relay_forward"}
    received = {ev["payload"] for ev in res.trace if ev["event"] == "target_recv"}
    assert sent == forwarded == received


def test_unanswerable_zone_rejected():
    topo = topology.simple_topology(2)
    topo.target.zone = topology.StaticZone.parse("example.com A 192.0.2.2")
    with pytest.raises(ValueError):
        harness.run_workload(topo, 1)


def test_loopback_small():
    topo = topology.simple_topology(3, transport="loopback", base="127.61")
    res = harness.run_workload(topo, 20, relay_setting=2, seed=0)
    assert res.answer_rate == 1.0 and len(res.rtts) == 20
    assert sum(1 for ev in res.trace if ev["event"] == "relay_forward") == 60


# attribution


def test_soundness_on_traces():
    rng = random.Random(8)
    for _ in range(5):
        topo = random_topology(rng)
        res = harness.run_workload(topo, 60, rng=rng)
        origin = {q.payload: q.client for q in res.queries}
        ids = [r.id for r in topo.relays]
        colluded = rng.sample(ids, rng.randint(0, len(ids)))
        for payload, result in attribute_trace(res.trace, colluded, topo).items():
            assert origin[payload] in result.candidates


def test_trace_and_oracle_agree_on_fig3():
    topo = fig3()
    res = harness.run_workload(topo, 300, seed=6)
    results = attribute_trace(res.trace, {"RC"}, topo)
    assert not any(r.identified for r in results.values())
    assert min(len(r.candidates) for r in results.values()) >= 2


def test_no_colluders_candidates_are_all_routing_clients():
    topo = fig3()
    assert relay_candidates(topo, "RA") == relay_candidates(topo, "RC") == {"A", "B"}


def test_dedicated_fully_surrounded_is_identified():
    topo = dedicated_unshared(3, 1)
    scen = CollusionScenario(frozenset({"R2", "R3", "R4"}),
                             {"R2": {"p": "10.0.1.1:40000"}, "R3": {}, "R4": {}},
                             {"p": "10.0.1.2:40000"})
    r = attribute_query(scen, "p", topo)
    assert r.identified and r.candidates == {"C1"} and r.first_honest == ("relay", "R1") and r.chain == ("R2",)


def test_transit_client_hides_owner_at_k0():
    topo = build(["R1", "R2"], [("C1", ["R1"], (), 0, 0), ("C2", ["R2"], ["R1"], 1, 1)])
    scen = CollusionScenario(frozenset(), {}, {"p": "10.0.1.1:40000"})
    r = attribute_query(scen, "p", topo)
    assert r.candidates >= {"C1", "C2"} and not r.identified


def test_client_reached_directly():
    topo = fig3()
    scen = CollusionScenario(frozenset({"RA"}), {"RA": {"p": "10.0.2.1:8443"}}, {"p": "10.0.1.1:40000"})
    assert attribute_query(scen, "p", topo).candidates == {"A"}


def test_inconsistent_logs():
    topo = fig3()
    scen = CollusionScenario(frozenset({"RC"}), {"RC": {}}, {"p": "10.0.1.3:40000"})
    with pytest.raises(InconsistentLogs):
        attribute_query(scen, "p", topo)
    loop = CollusionScenario(frozenset({"RC"}), {"RC": {"p": "10.0.1.3:40001"}}, {"p": "10.0.1.3:40000"})
    with pytest.raises(InconsistentLogs):
        attribute_query(loop, "p", topo)


def test_scenario_keeps_only_colluder_logs():
    res = harness.run_workload(fig3(), 30, seed=1)
    scen = CollusionScenario.from_trace(res.trace, {"RC"})
    assert set(scen.relay_logs) == {"RC"} and len(scen.resolver_log) == 30


# probabilities


def test_exact_trivial_endpoints():
    topo = fig3()
    assert identification_probability_exact(topo, set()) == 0.0
    assert identification_probability_exact(dedicated_unshared(), {"R2", "R3", "R4", "RX"}, client="C1") == 1.0


def test_one_of_three_pool_hand_value():
    # C1 -> R1 -> {R2|R3|R4} with R2 colluded: only the R2 path walks back to R1,
    # and R1 belongs to C1 alone, so exactly one of three equiprobable paths is identified
    topo = build(["R1", "R2", "R3", "R4", "R5"], [
        ("C1", ["R1"], ["R2", "R3", "R4"], 1, 1),
        ("C2", ["R5"], ["R2", "R3", "R4"], 1, 1),
    ])
    assert identification_probability_exact(topo, {"R2"}, client="C1") == pytest.approx(1 / 3, abs=1e-15)


def test_probabilities_sum_to_one():
    rng = random.Random(3)
    for _ in range(20):
        topo = random_topology(rng)
        total = sum(o.probability for o in enumerate_outcomes(topo, set()))
        assert total == pytest.approx(1.0, abs=1e-12)


def test_space_limit():
    topo = topology.simple_topology(9)
    topo = topo.with_relay_count(8)
    with pytest.raises(SpaceTooLarge):
        identification_probability_exact(topo, set(), max_outcomes=1000)


def test_mc_trivial_endpoints():
    assert identification_probability_mc(fig3(), set(), 2000, random.Random(0)).estimate == 0.0
    est = identification_probability_mc(dedicated_unshared(), {"R2", "R3", "R4", "RX"}, 2000, random.Random(0),
                                        client="C1")
    assert est.estimate == 1.0 and est.hits == 2000


def test_mc_close_to_exact():
    topo = build(["R1", "R2", "R3", "R4", "R5"], [
        ("C1", ["R1"], ["R2", "R3", "R4"], 1, 1),
        ("C2", ["R5"], ["R2", "R3", "R4"], 1, 1),
    ])
    est = identification_probability_mc(topo, {"R2"}, 20_000, random.Random(1), client="C1")
    assert est.contains(1 / 3)


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=1e-4) and hi == pytest.approx(0.5962, abs=1e-4)
    assert wilson_interval(0, 10)[0] == 0.0 and wilson_interval(10, 10)[1] == 1.0
    with pytest.raises(ValueError):
        identification_probability_mc(fig3(), set(), 0, random.Random(0))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.data())
def test_monotonicity(seed, data):
    topo = random_topology(random.Random(seed))
    ids = [r.id for r in topo.relays]
    small = set(data.draw(st.lists(st.sampled_from(ids), unique=True)))
    big = small | set(data.draw(st.lists(st.sampled_from(ids), unique=True)))
    assert identification_probability_exact(topo, small) <= identification_probability_exact(topo, big) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.data())
def test_soundness_analytic(seed, data):
    topo = random_topology(random.Random(seed))
    colluded = set(data.draw(st.lists(st.sampled_from([r.id for r in topo.relays]), unique=True)))
    for o in enumerate_outcomes(topo, colluded):
        assert o.client in o.candidates


def brute_candidates(topo, colluded):
    """Map each observable (first honest entity, colluding run) to the clients with a matching path."""
    seen = {}
    for c in topo.clients:
        for nh in c.nexthops:
            rest = [r for r in topo.client_pool(c) if r != nh]
            for k in range(c.min_relays, min(c.max_relays, len(rest)) + 1):
                for tail in itertools.permutations(rest, k):
                    path = (c.id, nh, *tail)
                    i = len(path) - 1
                    while i > 0 and path[i] in colluded:
                        i -= 1
                    seen.setdefault((path[i], path[i + 1:]), set()).add(c.id)
    return seen


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32), st.data())
def test_candidates_match_bruteforce(seed, data):
    topo = random_topology(random.Random(seed))
    colluded = set(data.draw(st.lists(st.sampled_from([r.id for r in topo.relays]), unique=True)))
    oracle = brute_candidates(topo, colluded)
    for o in enumerate_outcomes(topo, colluded):
        chain = o.relay_ids[len(o.relay_ids) - len(oracle_chain(o, colluded)):]
        assert set(o.candidates) == oracle[(o.first_honest[1], chain)]


def oracle_chain(o, colluded):
    run = []
    for r in reversed(o.relay_ids):
        if r not in colluded:
            break
        run.append(r)
    return run


def test_with_relay_count_pins_k():
    topo = fig3().with_relay_count(1)
    assert {o.relay_ids.__len__() for o in enumerate_outcomes(topo, set())} == {2}


def test_replace_keeps_validation():
    topo = fig3()
    with pytest.raises(topology.TopologyError):
        topology.TopologySpec([replace(topo.clients[0], nexthops=("RZ",))], topo.relays, topo.target)


def test_attribution_module_exports():
    assert attribution.DEFAULT_MAX_OUTCOMES == 10**6
