"""Identification probability as relays start colluding with the resolver."""

import random

from modns.anonet.attribution import identification_probability_exact, identification_probability_mc
from modns.anonet.report import report, to_text
from modns.anonet.topology import parse_topology

TOPO = """
target 10.0.3.1:8443
zone *.example.com A 192.0.2.1
relay RA 10.0.1.1:8443
relay RB 10.0.1.2:8443
relay RC 10.0.1.3:8443
relay RD 10.0.1.4:8443
client A 10.0.2.1:5300 nexthop=RA pool=RA,RB,RC,RD min=0 max=2
client B 10.0.2.2:5300 nexthop=RB pool=RA,RB,RC,RD min=0 max=2
client L 10.0.2.3:5300 nexthop=RD pool=RC min=1 max=1
"""

topo = parse_topology(TOPO)
rows = {}
for colluded in ([], ["RC"], ["RC", "RD"], ["RA", "RC"], ["RA", "RB", "RC", "RD"]):
    label = "{" + ",".join(colluded) + "}"
    rows[f"exact {label}"] = (identification_probability_exact(topo, colluded), 0)
    est = identification_probability_mc(topo, colluded, 20_000, random.Random(0))
    rows[f"mc {label}"] = (est.estimate, est.trials)
print(to_text(report(None, rows)))
