"""Encode a few envelopes and print their layout."""

from modns import wire
from modns.cli import debug_decode
from modns.wire import Envelope, NodeAddr

payload = bytes.fromhex("00112233445566778899aabbccddeeff")
hops = [NodeAddr.parse("192.0.2.10:8443"), NodeAddr.parse("198.51.100.7:8443"), NodeAddr.parse("203.0.113.53:443")]

for env in (Envelope.modns(hops, payload), Envelope.adns(hops[-1], payload), Envelope.bare(payload)):
    raw = wire.encode_envelope(env)
    print(raw.hex())
    print(debug_decode(raw.hex()))
    print()

# each relay strips one hop; the last strip leaves only the payload
env = Envelope.modns(hops, payload)
while env.kind is wire.Kind.MODNS:
    dest, env = wire.strip_first_hop(env)
    print(f"-> {dest}: {len(wire.encode_envelope(env))} bytes")
