"""Randomized, loop-free relay path construction.

A path is: a flagged (dedicated) next-hop, then ``k`` subsequent relays drawn
without replacement from every other listed relay, then a target resolver.
``k`` counts relays *after* the next-hop, so the hop header carries ``k + 1``
entries.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Sequence

from .wire import NodeAddr


class InsufficientRelays(ValueError):
    pass


@dataclass(frozen=True)
class RelayEntry:
    addr: NodeAddr
    is_nexthop_candidate: bool = False
    operator_tag: str | None = None


@dataclass(frozen=True)
class RelayPath:
    nexthop: NodeAddr
    subsequent: tuple[NodeAddr, ...]
    target: NodeAddr

    @property
    def k(self) -> int:
        return len(self.subsequent)

    def nodes(self) -> tuple[NodeAddr, ...]:
        return (self.nexthop, *self.subsequent, self.target)


@dataclass
class PathPolicy:
    """Where paths may go and how long they may be.

    ``length_weights`` optionally replaces the uniform draw of ``k``: entry
    ``i`` weights ``k = min_relays + i``.
    """

    relays: list[RelayEntry]
    targets: list[NodeAddr]
    min_relays: int = 0
    max_relays: int = 0
    length_weights: Sequence[float] | None = None
    rng_seed: int | None = None
    flagged: tuple[NodeAddr, ...] = field(init=False, repr=False)

    def __post_init__(self):
        self.relays = list(self.relays)
        self.targets = list(self.targets)
        self.flagged = tuple(e.addr for e in self.relays if e.is_nexthop_candidate)
        self._addrs = tuple(e.addr for e in self.relays)
        self._pools = {nh: [a for a in self._addrs if a != nh] for nh in self.flagged}
        if self.length_weights is not None:
            if len(self.length_weights) != self.max_relays - self.min_relays + 1:
                raise ValueError("length_weights must cover every k in [min_relays, max_relays]")
            if min(self.length_weights) < 0 or sum(self.length_weights) <= 0:
                raise ValueError("length_weights must be non-negative with positive sum")

    def check(self) -> None:
        if not self.flagged:
            raise InsufficientRelays("no relay is flagged as a next-hop candidate")
        if not self.targets:
            raise InsufficientRelays("no target resolver listed")
        if not 0 <= self.min_relays <= self.max_relays:
            raise ValueError(f"need 0 <= min_relays <= max_relays, got {self.min_relays}..{self.max_relays}")
        for nh in self.flagged:
            if len(self.pool(nh)) < self.min_relays:
                raise InsufficientRelays(
                    f"only {len(self.pool(nh))} relays besides next-hop {nh}, need {self.min_relays}"
                )

    def pool(self, nexthop: NodeAddr, target: NodeAddr | None = None) -> list[NodeAddr]:
        pool = self._pools.get(nexthop)
        if pool is None:
            pool = [a for a in self._addrs if a != nexthop]
        if target is not None and target in pool:
            pool = [a for a in pool if a != target]
        return pool

    def length_distribution(self) -> dict[int, float]:
        ks = range(self.min_relays, self.max_relays + 1)
        if self.length_weights is None:
            return {k: 1 / len(ks) for k in ks}
        total = float(sum(self.length_weights))
        return {k: w / total for k, w in zip(ks, self.length_weights)}


def select_path(policy: PathPolicy, rng: random.Random) -> RelayPath:
    policy.check()
    nexthop = rng.choice(policy.flagged)
    target = rng.choice(policy.targets)
    if target == nexthop:
        raise InsufficientRelays(f"next-hop {nexthop} is also a target")
    pool = policy.pool(nexthop, target)
    if policy.length_weights is None:
        k = rng.randint(policy.min_relays, policy.max_relays)
    else:
        k = rng.choices(range(policy.min_relays, policy.max_relays + 1), policy.length_weights)[0]
    if k > len(pool):
        raise InsufficientRelays(f"drew k={k} but only {len(pool)} relays are eligible")
    return RelayPath(nexthop, tuple(rng.sample(pool, k)), target)


def to_hop_list(path: RelayPath) -> list[NodeAddr]:
    return [*path.subsequent, path.target]


class PathViolation(enum.Enum):
    DUPLICATE_HOP = "DuplicateHop"
    UNFLAGGED_NEXTHOP = "UnflaggedNexthop"
    LENGTH_OUT_OF_RANGE = "LengthOutOfRange"


def validate_path(path: RelayPath, policy: PathPolicy) -> PathViolation | None:
    nodes = path.nodes()
    if len(set(nodes)) != len(nodes):
        return PathViolation.DUPLICATE_HOP
    if path.nexthop not in policy.flagged:
        return PathViolation.UNFLAGGED_NEXTHOP
    if not policy.min_relays <= path.k <= policy.max_relays:
        return PathViolation.LENGTH_OUT_OF_RANGE
    return None
