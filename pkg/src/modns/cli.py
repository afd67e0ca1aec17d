"""``modns`` command line: daemons, simulation, analysis and wire debugging.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import random
import signal
import sys
from collections import Counter

from . import __version__, wire
from .conf import ConfigError, load_client_config
from .dnscore import StaticZone
from .pathsel import InsufficientRelays
from .relaynode import RelayLimits
from .seal import KeyPair, load_key

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("modns")


class UsageError(Exception):
    pass


class ConfigFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load(fn, *args, what: str = "config"):
    """Run a loader, turning any failure into a configuration error."""
    from .anonet.topology import TopologyError

    try:
        return fn(*args)
    except (ConfigError, TopologyError, InsufficientRelays, OSError, ValueError) as exc:
        raise ConfigFailure(f"{what}: {exc}") from None


def _addr(text: str) -> wire.NodeAddr:
    try:
        return wire.NodeAddr.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(kind):
    def conv(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return value
    return conv


def _nonneg_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text!r}")
    return value


# daemons


def _serve(daemons_factory, stats=None, stats_interval: float = 5.0) -> int:
    """Start daemons on a fresh loop and run until SIGINT/SIGTERM."""
    from .net import StatsWriter

    async def main():
        loop = asyncio.get_running_loop()
        stop = asyncio.Event()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, stop.set)
            except (NotImplementedError, RuntimeError):
                pass
        daemons = [await d.start() for d in daemons_factory()]
        writer = StatsWriter(*stats) if stats else None
        try:
            while not stop.is_set():
                try:
                    await asyncio.wait_for(stop.wait(), stats_interval)
                except asyncio.TimeoutError:
                    pass
                if writer:
                    writer.write()
        finally:
            if writer:
                writer.write()
            for d in daemons:
                d.close()

    asyncio.run(main())
    return EXIT_OK


def _jsonl_sink(path):
    if path is None:
        return None
    fh = open(path, "a", encoding="utf-8", buffering=1)

    def sink(ev):
        fh.write(json.dumps(ev, sort_keys=True) + "\n")
    return sink


def cmd_run_relay(args) -> int:
    from .net import UdpRelay

    limits = _load(lambda: RelayLimits(max_subsequent_hops=args.max_hops, session_ttl=args.session_ttl))
    sink = _load(_jsonl_sink, args.log_observations, what="observation log")
    relay = UdpRelay(args.listen, args.public_addr or args.listen, limits, str(args.public_addr or args.listen),
                     on_event=sink)
    log.info("relay listening on %s", args.listen)
    stats = (args.stats_file, lambda: dict(relay.node.counters, sessions=len(relay.node.table))) \
        if args.stats_file else None
    return _serve(lambda: [relay], stats)


def cmd_run_client(args) -> int:
    from .net import UdpClient

    cfg = _load(load_client_config, args.config)
    if args.listen is not None:
        cfg.listen = args.listen
    client = UdpClient(cfg)
    log.info("client listening on %s", cfg.listen)
    stats = (args.stats_file, lambda: dict(client.state.counters, pending=len(client.state.pending))) \
        if args.stats_file else None
    return _serve(lambda: [client], stats)


def cmd_run_target(args) -> int:
    from .net import UdpTarget

    zone = _load(StaticZone.load, args.zone, what="zone")
    keys = KeyPair.from_secret(_load(load_key, args.keys, what="keys"))
    upstream = args.upstream.sockaddr if args.upstream else None
    target = UdpTarget(args.listen, keys, zone, upstream)
    log.info("target listening on %s, public key %s", args.listen, keys.public.hex())
    stats = (args.stats_file, lambda: dict(target.counters)) if args.stats_file else None
    return _serve(lambda: [target], stats)


# batch commands


def cmd_simulate(args) -> int:
    from .anonet import harness
    from .anonet.report import report, to_text
    from .anonet.topology import load_topology

    topo = _load(load_topology, args.topo, what="topology")
    try:
        result = harness.run_workload(topo, args.queries, relay_setting=args.relays,
                                      rng=random.Random(args.seed))
    except InsufficientRelays as exc:
        raise ConfigFailure(f"topology: {exc}") from None
    harness.write_trace(result.trace, args.out)
    wrong = sum(not q.correct for q in result.queries)
    if wrong:
        log.warning("%d of %d answers were wrong", wrong, len(result.queries))
    if args.relays is not None:
        sys.stdout.write(to_text(report({args.relays: result.rtts})))
    else:
        print(f"{len(result.queries)} queries, mean RTT {result.mean_rtt * 1000:.3f} ms")
    print(f"trace written to {args.out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .anonet import attribution, harness
    from .anonet.report import report, to_csv, to_text
    from .anonet.topology import parse_topology

    trace = _load(harness.read_trace, args.trace, what="trace")
    topo_ev = next((ev for ev in trace if ev.get("event") == "topology"), None)
    if topo_ev is None:
        raise ConfigFailure("trace: no topology event")
    topo = _load(parse_topology, topo_ev["text"], what="trace topology")
    colluded = frozenset(c for c in args.colluded.split(",") if c)
    unknown = colluded - {r.id for r in topo.relays}
    if unknown:
        raise ConfigFailure(f"unknown relay ids: {','.join(sorted(unknown))}")

    results = attribution.attribute_trace(trace, colluded, topo)
    sizes = Counter(len(r.candidates) for r in results.values())
    identified = sum(r.identified for r in results.values())
    label = "{" + ",".join(sorted(colluded)) + "}"
    ident = {f"observed {label}": (identified / len(results) if results else 0.0, len(results))}
    if args.exact:
        ident[f"exact {label}"] = (attribution.identification_probability_exact(topo, colluded), 0)
    if args.mc:
        est = attribution.identification_probability_mc(topo, colluded, args.mc, random.Random(args.seed))
        ident[f"monte-carlo {label}"] = (est.estimate, est.trials)
    rows = report(None, ident)
    out = to_csv(rows) if args.csv else to_text(rows)
    sys.stdout.write(out)
    if not args.csv:
        print("candidate set sizes: " + ", ".join(f"{n}:{c}" for n, c in sorted(sizes.items())))
    return EXIT_OK


def cmd_keygen(args) -> int:
    kp = KeyPair.generate()
    flags = os.O_WRONLY | os.O_CREAT | (0 if args.force else os.O_EXCL)
    try:
        fd = os.open(args.out, flags | os.O_TRUNC, 0o600)
    except FileExistsError:
        raise ConfigFailure(f"{args.out} exists (use --force)") from None
    with os.fdopen(fd, "w") as fh:
        fh.write(kp.secret.hex() + "\n")
    print(kp.public.hex())
    return EXIT_OK


def cmd_encode(args) -> int:
    try:
        payload = bytes.fromhex(args.payload)
        hops = [_addr(h) for h in args.hops.split(",")] if args.hops else None
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"encode: {exc}") from None
    if args.adns:
        env = wire.Envelope.adns(args.adns, payload)
    elif hops:
        env = wire.Envelope.modns(hops, payload)
    else:
        env = wire.Envelope.bare(payload)
    print(wire.encode_envelope(env).hex())
    return EXIT_OK


def debug_decode(hex_text: str) -> str:
    raw = bytes.fromhex("".join(hex_text.split()))
    env = wire.decode_envelope(raw)
    lines = [f"kind: {env.kind.value.capitalize()}"]
    if env.kind is wire.Kind.MODNS:
        lines.append(f"n: {len(env.hops)}")
        lines += [f"  hop {i}: {h}" for i, h in enumerate(env.hops, 1)]
    elif env.kind is wire.Kind.ADNS:
        lines.append(f"target: {env.header.target}")
    lines.append(f"payload: {len(env.payload)} bytes")
    return "\n".join(lines)


def cmd_decode(args) -> int:
    text = args.hex
    if text is None or text == "-":
        text = sys.stdin.read()
    try:
        print(debug_decode(text))
    except wire.WireError as exc:
        print(f"modns decode: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError:
        raise UsageError("decode: input is not valid hex") from None
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modns", description="Multi-relay oblivious DNS toolkit.")
    p.add_argument("--version", action="version", version=f"modns {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    r = sub.add_parser("run-relay", help="run a relay daemon")
    r.add_argument("--listen", type=_addr, required=True)
    r.add_argument("--public-addr", type=_addr, help="address other nodes use for this relay")
    r.add_argument("--max-hops", type=_nonneg_int, default=8, help="most subsequent hops accepted")
    r.add_argument("--session-ttl", type=_positive(float), default=10.0, help="seconds")
    r.add_argument("--log-observations", metavar="FILE", help="JSON-lines forwarding log")
    r.add_argument("--stats-file", metavar="FILE")
    r.set_defaults(func=cmd_run_relay)

    c = sub.add_parser("run-client", help="run the client proxy (Do53 listener)")
    c.add_argument("--listen", type=_addr, help="overrides the config's listen address")
    c.add_argument("--config", required=True)
    c.add_argument("--stats-file", metavar="FILE")
    c.set_defaults(func=cmd_run_client)

    t = sub.add_parser("run-target", help="run the target resolver")
    t.add_argument("--listen", type=_addr, required=True)
    t.add_argument("--zone", required=True)
    t.add_argument("--keys", required=True, help="secret key file (raw or hex)")
    t.add_argument("--upstream", type=_addr, help="plain Do53 resolver for names outside the zone")
    t.add_argument("--stats-file", metavar="FILE")
    t.set_defaults(func=cmd_run_target)

    s = sub.add_parser("simulate", help="run a workload on a topology and write a trace")
    s.add_argument("--topo", required=True)
    s.add_argument("--queries", type=_positive(int), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--relays", type=_nonneg_int, help="pin every client to this many relays")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="attribute queries in a trace to candidate clients")
    a.add_argument("--trace", required=True)
    a.add_argument("--colluded", default="", help="comma-separated relay ids")
    a.add_argument("--exact", action="store_true", help="also enumerate the exact probability")
    a.add_argument("--mc", type=_positive(int), metavar="TRIALS", help="also run a Monte-Carlo estimate")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--csv", action="store_true")
    a.set_defaults(func=cmd_analyze)

    k = sub.add_parser("keygen", help="write a new secret key, print its public key")
    k.add_argument("--out", required=True)
    k.add_argument("--force", action="store_true")
    k.set_defaults(func=cmd_keygen)

    e = sub.add_parser("encode", help="build an envelope (hex out)")
    e.add_argument("--payload", required=True, help="hex")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--hops", help="comma-separated ip:port list")
    g.add_argument("--adns", type=_addr, metavar="TARGET")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="pretty-print an envelope given as hex")
    d.add_argument("hex", nargs="?", help="hex string, or '-' / omitted for stdin")
    d.set_defaults(func=cmd_decode)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigFailure as exc:
        print(f"modns: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"modns: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())
