"""Walk one query through three relays and back, printing what each relay sees."""

import random

from modns import dnscore, endpoints
from modns.conf import ClientConfig
from modns.pathsel import PathPolicy, RelayEntry
from modns.relaynode import ForwardUpstream, SessionTable, handle_downstream, handle_upstream, RelayLimits
from modns.seal import KeyPair
from modns.wire import NodeAddr

relays = [NodeAddr.parse(f"10.0.1.{i}:8443") for i in range(1, 4)]
target = NodeAddr.parse("10.0.3.1:8443")
stub = NodeAddr.parse("127.0.0.1:40000")
keys = KeyPair.generate()
zone = dnscore.StaticZone.parse("*.example.com A 192.0.2.1")

cfg = ClientConfig(NodeAddr.parse("10.0.2.1:5300"),
                   PathPolicy([RelayEntry(relays[0], True)] + [RelayEntry(a) for a in relays[1:]], [target], 2, 2),
                   {target: keys.public})
state = endpoints.ClientState()
out, pending = endpoints.client_handle_do53(dnscore.build_query("demo.example.com", qid=42), stub, cfg, state,
                                            random.Random(3), 0.0)

sender, here, data = cfg.listen, out.dest, out.data
tables, back = {}, []
while here != target:
    act = handle_upstream(data, sender, RelayLimits(), here)
    assert isinstance(act, ForwardUpstream)
    table = tables.setdefault(here, SessionTable())
    endpoint = table.open(sender, 0.0)
    print(f"{here} got {len(data)} bytes from {sender}, forwards {len(act.data)} bytes to {act.dest}")
    back.append((here, endpoint))
    sender, here, data = here, act.dest, act.data

reply = endpoints.target_handle_query(data, sender, keys, zone)
print(f"target saw the query from {sender}")
resp = reply.data
for relay, endpoint in reversed(back):
    resp = handle_downstream(resp, endpoint, tables[relay], 0.1).data
answer = endpoints.client_handle_response(resp, state, 0.1)
parsed = dnscore.parse_response(answer.data)
print(f"stub gets id {parsed.id}, rcode {parsed.rcode}, answer {[a.rdata.hex() for a in parsed.answers]}")
