import ipaddress

from hypothesis import strategies as st

from modns import wire

ipv4 = st.integers(0, 2**32 - 1).map(ipaddress.IPv4Address)
# exclude the v4-mapped range, which folds to IPv4 by design
ipv6 = st.integers(0, 2**128 - 1).map(ipaddress.IPv6Address).filter(lambda a: a.ipv4_mapped is None)
ports = st.integers(1, 65535)
addrs = st.builds(wire.NodeAddr, st.one_of(ipv4, ipv6), ports)
payloads = st.binary(min_size=1, max_size=300)


@st.composite
def modns_envelopes(draw, min_hops=1, max_hops=12, unique=False):
    hops = draw(st.lists(addrs, min_size=min_hops, max_size=max_hops, unique=unique))
    return wire.Envelope.modns(hops, draw(payloads))


@st.composite
def adns_envelopes(draw):
    return wire.Envelope.adns(draw(addrs), draw(payloads))


@st.composite
def bare_envelopes(draw):
    p = draw(payloads)
    if p[:wire.MAGIC_LEN] in (wire.MODNS_MAGIC, wire.ADNS_MAGIC):
        p = b"\x00" + p
    return wire.Envelope.bare(p)


envelopes = st.one_of(modns_envelopes(), adns_envelopes(), bare_envelopes())
