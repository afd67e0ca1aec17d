"""Relay lists and client configuration files.

Relay list (one entry per line, ``#`` comments)::

    relay 10.0.0.1:8443 nexthop tag=home
    relay 10.0.0.2:8443 tag=acme
    target 10.0.0.53:8443 <64 hex chars of the resolver public key>

Client config (``key = value``)::

    listen = 127.0.0.1:5353
    relays = relays.txt        # relative to the config file
    min_relays = 0
    max_relays = 2
    timeout = 5
    retries = 2
    sticky_path = false
    ephemeral_keys = true
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .pathsel import InsufficientRelays, PathPolicy, RelayEntry
from .seal import KEY_LEN
from .wire import NodeAddr


class ConfigError(ValueError):
    pass


class DuplicateAddress(ConfigError):
    pass


class NoFlaggedRelay(ConfigError):
    pass


class BadKeyLength(ConfigError):
    pass


class RangeInvalid(ConfigError):
    pass


@dataclass
class RelayList:
    entries: list[RelayEntry] = field(default_factory=list)
    targets: list[tuple[NodeAddr, bytes]] = field(default_factory=list)

    @property
    def target_keys(self) -> dict[NodeAddr, bytes]:
        return dict(self.targets)


def parse_relay_list(text: str, client_mode: bool = False) -> RelayList:
    out = RelayList()
    seen: set[NodeAddr] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *rest = line.split()
        if not rest:
            raise ConfigError(f"line {lineno}: missing address")
        try:
            addr = NodeAddr.parse(rest[0])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        if addr in seen:
            raise DuplicateAddress(f"line {lineno}: {addr} listed twice")
        seen.add(addr)
        if kind == "relay":
            flagged, tag = False, None
            for opt in rest[1:]:
                if opt == "nexthop":
                    flagged = True
                elif opt.startswith("tag="):
                    tag = opt[4:]
                else:
                    raise ConfigError(f"line {lineno}: unknown relay option {opt!r}")
            out.entries.append(RelayEntry(addr, flagged, tag))
        elif kind == "target":
            if len(rest) != 2:
                raise ConfigError(f"line {lineno}: expected 'target <ip>:<port> <hex key>'")
            try:
                key = bytes.fromhex(rest[1])
            except ValueError:
                raise BadKeyLength(f"line {lineno}: key is not hex") from None
            if len(key) != KEY_LEN:
                raise BadKeyLength(f"line {lineno}: key is {len(key)} bytes, need {KEY_LEN}")
            out.targets.append((addr, key))
        else:
            raise ConfigError(f"line {lineno}: unknown entry type {kind!r}")
    if client_mode and not any(e.is_nexthop_candidate for e in out.entries):
        raise NoFlaggedRelay("no relay carries the nexthop flag")
    return out


def serialize_relay_list(rl: RelayList) -> str:
    lines = []
    for e in rl.entries:
        parts = ["relay", str(e.addr)]
        if e.is_nexthop_candidate:
            parts.append("nexthop")
        if e.operator_tag:
            parts.append(f"tag={e.operator_tag}")
        lines.append(" ".join(parts))
    for addr, key in rl.targets:
        lines.append(f"target {addr} {key.hex()}")
    return "\n".join(lines) + "\n"


@dataclass
class ClientConfig:
    listen: NodeAddr
    policy: PathPolicy
    resolver_public_keys: dict[NodeAddr, bytes]
    query_timeout: float = 5.0
    max_retries: int = 2
    sticky_path: bool = False
    ephemeral_keys: bool = True
    max_padded: int = 4096

    def __post_init__(self):
        missing = [t for t in self.policy.targets if t not in self.resolver_public_keys]
        if missing:
            raise ConfigError(f"no public key for target(s) {', '.join(map(str, missing))}")


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def build_client_config(values: dict[str, str], relay_list: RelayList) -> ClientConfig:
    known = {"listen", "relays", "min_relays", "max_relays", "timeout", "retries",
             "sticky_path", "ephemeral_keys", "max_padded"}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        listen = NodeAddr.parse(values.get("listen", "127.0.0.1:53"))
        lo = int(values.get("min_relays", 0))
        hi = int(values.get("max_relays", 0))
        timeout = float(values.get("timeout", 5))
        retries = int(values.get("retries", 2))
        max_padded = int(values.get("max_padded", 4096))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if lo < 0 or hi < lo:
        raise RangeInvalid(f"need 0 <= min_relays <= max_relays, got {lo}..{hi}")
    if not any(e.is_nexthop_candidate for e in relay_list.entries):
        raise NoFlaggedRelay("no relay carries the nexthop flag")
    if not relay_list.targets:
        raise ConfigError("relay list names no target resolver")
    relay_addrs = {e.addr for e in relay_list.entries}
    clash = [a for a, _ in relay_list.targets if a in relay_addrs]
    if clash:
        raise DuplicateAddress(f"{clash[0]} listed as both relay and target")
    policy = PathPolicy(relay_list.entries, [a for a, _ in relay_list.targets], lo, hi)
    policy.check()
    return ClientConfig(
        listen=listen,
        policy=policy,
        resolver_public_keys=relay_list.target_keys,
        query_timeout=timeout,
        max_retries=retries,
        sticky_path=_parse_bool(values.get("sticky_path", "false")),
        ephemeral_keys=_parse_bool(values.get("ephemeral_keys", "true")),
        max_padded=max_padded,
    )


def load_client_config(path) -> ClientConfig:
    """Read a client config and the relay list it points at.

    Raises RangeInvalid, InsufficientRelays or another ConfigError; a missing
    file surfaces as OSError.
    """
    with open(path, encoding="utf-8") as fh:
        values = parse_kv(fh.read())
    if "relays" not in values:
        raise ConfigError("config has no 'relays' entry")
    relays_path = os.path.join(os.path.dirname(os.path.abspath(path)), values["relays"])
    with open(relays_path, encoding="utf-8") as fh:
        relay_list = parse_relay_list(fh.read(), client_mode=True)
    return build_client_config(values, relay_list)


__all__ = [
    "BadKeyLength", "ClientConfig", "ConfigError", "DuplicateAddress", "InsufficientRelays",
    "NoFlaggedRelay", "RangeInvalid", "RelayList", "build_client_config", "load_client_config",
    "parse_kv", "parse_relay_list", "serialize_relay_list",
]
