"""Draw paths from a relay list and tabulate how often each shape comes up."""

import random
from collections import Counter

from modns.conf import parse_relay_list
from modns.pathsel import PathPolicy, select_path

rl = parse_relay_list("""
relay 10.0.0.1:8443 nexthop tag=home
relay 10.0.0.2:8443
relay 10.0.0.3:8443
relay 10.0.0.4:8443
""")
policy = PathPolicy(rl.entries, ["10.0.9.53:8443"], 0, 2)
rng = random.Random(1)
counts = Counter(select_path(policy, rng) for _ in range(30_000))
for path, n in sorted(counts.items(), key=lambda kv: (kv[0].k, str(kv[0]))):
    hops = " -> ".join(str(h)[5:-5] for h in (path.nexthop, *path.subsequent))
    print(f"k={path.k}  {hops:<24} {n / 30_000:.4f}")
