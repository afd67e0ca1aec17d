"""Deterministic in-memory datagram network.

Time is simulated: a send is delivered after the link's one-way latency and
handlers run in (time, send order). No loss, no reordering on a link, zero
processing delay, so round-trip times are exactly the sum of link latencies.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable, Hashable

Handler = Callable[[bytes, Hashable], None]


class SimNetwork:
    def __init__(self, latency: Callable[[Hashable, Hashable], float]):
        """``latency(src, dst)`` returns one-way delay in seconds."""
        self.latency = latency
        self.now = 0.0
        self._queue: list = []
        self._seq = itertools.count()
        self._handlers: dict[Hashable, Handler] = {}
        self.delivered = 0
        self.undeliverable = 0

    def bind(self, addr: Hashable, handler: Handler) -> None:
        if addr in self._handlers:
            raise ValueError(f"{addr} already bound")
        self._handlers[addr] = handler

    def unbind(self, addr: Hashable) -> None:
        self._handlers.pop(addr, None)

    def send(self, src: Hashable, dst: Hashable, data: bytes) -> None:
        self.call_at(self.now + self.latency(src, dst), self._deliver, src, dst, bytes(data))

    def call_at(self, when: float, fn, *args) -> None:
        heapq.heappush(self._queue, (when, next(self._seq), fn, args))

    def _deliver(self, src, dst, data) -> None:
        handler = self._handlers.get(dst)
        if handler is None:
            self.undeliverable += 1
            return
        self.delivered += 1
        handler(data, src)

    def step(self) -> bool:
        if not self._queue:
            return False
        when, _, fn, args = heapq.heappop(self._queue)
        self.now = max(self.now, when)
        fn(*args)
        return True

    def run(self, until: float | None = None, stop: Callable[[], bool] | None = None) -> None:
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                self.now = until
                return
            self.step()
            if stop is not None and stop():
                return
