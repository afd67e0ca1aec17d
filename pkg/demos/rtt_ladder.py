"""Mean RTT per relay count on the simulated network and on loopback."""

from modns.anonet import harness, topology
from modns.anonet.report import report, to_text

for transport, base in (("memory", "10.0"), ("loopback", "127.88")):
    topo = topology.simple_topology(4, transport=transport, base=base)
    rtts = {k: harness.run_workload(topo, 300, relay_setting=k, seed=k).rtts for k in range(4)}
    print(f"[{transport}]")
    print(to_text(report(rtts)))
