"""Multi-relay oblivious DNS: envelope codec, relay core, client/target
endpoints and a simulation harness for latency and collusion analysis."""

__version__ = "0.1.0"
