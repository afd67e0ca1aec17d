"""Seal a query, open it, and show what tampering does."""

from modns import dnscore, seal
from modns.seal import Direction, KeyPair, SealedMessage

client, resolver = KeyPair.generate(), KeyPair.generate()
query = dnscore.build_query("example.com", qid=0x1234)
nonce = seal.new_nonce()

msg = seal.seal(client, resolver.public, Direction.QUERY, query, nonce)
raw = msg.to_bytes()
print(f"query {len(query)} bytes -> sealed {len(raw)} bytes (padded to {len(msg.ciphertext) - seal.TAG_LEN})")
print("opened matches:", seal.open_sealed(resolver, SealedMessage.from_bytes(raw), Direction.QUERY) == query)

reply = seal.seal(resolver, client.public, Direction.RESPONSE, b"answer", seal.response_nonce(nonce))
print("response opened:", seal.open_sealed(client, reply, Direction.RESPONSE, expected_sender=resolver.public))

bad = bytearray(raw)
bad[-5] ^= 0x01
try:
    seal.open_sealed(resolver, SealedMessage.from_bytes(bytes(bad)), Direction.QUERY)
except seal.AuthenticationFailure as exc:
    print("tampered copy rejected:", exc)
