"""Deterministic discrete-event network simulator.

A simulated link connects two endpoints. Each direction owns a token
bucket modeling the bandwidth cap (bucket holds 250 ms of budget and
starts empty, so a cold link transmits at exactly the configured rate),
plus seeded RNG streams for jitter and media loss. Delivery time for a
message is::

    depart (transmission complete per token bucket) + base latency + jitter

The reliable-ordered channel never loses messages and clamps delivery
times to be non-decreasing, preserving send order. The media channel
drops each message independently with the configured loss probability
(loss is applied after transmission: a lost frame still spent uplink
bandwidth) and does not clamp, so jitter may reorder it.

Everything runs on one :class:`EventLoop` with a logical microsecond
clock; identical seeds give bit-identical runs.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from ..errors import ConfigurationError, LinkClosedError

TOKEN_BUCKET_WINDOW_S = 0.25


@dataclass(frozen=True)
class NetworkProfile:
    """One-way link parameters; see module docstring for semantics."""

    base_latency_ms: float = 80.0
    jitter_ms: float = 20.0
    loss_probability: float = 0.005
    bandwidth_bps: float = 20e6  # 0 = unlimited
    seed: int = 0

    def __post_init__(self):
        if self.base_latency_ms < 0 or self.jitter_ms < 0 or self.bandwidth_bps < 0:
            raise ConfigurationError("profile values must be non-negative")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ConfigurationError(
                f"loss_probability must be in [0, 1], got {self.loss_probability}"
            )

    @classmethod
    def null(cls) -> "NetworkProfile":
        return cls(base_latency_ms=0.0, jitter_ms=0.0, loss_probability=0.0,
                   bandwidth_bps=0.0, seed=0)


class SimClock:
    """Monotonic logical clock in microseconds."""

    def __init__(self):
        self.now_us = 0

    def advance_to(self, t_us: int) -> None:
        if t_us < self.now_us:
            raise ConfigurationError(
                f"clock cannot move backwards ({t_us} < {self.now_us})"
            )
        self.now_us = t_us


class EventLoop:
    """Single-threaded event heap driving one simulation."""

    def __init__(self, clock: Optional[SimClock] = None):
        self.clock = clock or SimClock()
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0

    @property
    def now_us(self) -> int:
        return self.clock.now_us

    def schedule_at(self, t_us: int, callback: Callable[[], None]) -> None:
        if t_us < self.clock.now_us:
            t_us = self.clock.now_us
        heapq.heappush(self._heap, (t_us, self._seq, callback))
        self._seq += 1

    def schedule_in(self, delta_us: int, callback: Callable[[], None]) -> None:
        self.schedule_at(self.clock.now_us + delta_us, callback)

    def run_until(self, t_us: int) -> None:
        """Run every event scheduled at or before t_us, then land there."""
        while self._heap and self._heap[0][0] <= t_us:
            when, _, callback = heapq.heappop(self._heap)
            self.clock.advance_to(when)
            callback()
        self.clock.advance_to(t_us)

    def run_until_idle(self, max_events: int = 10_000_000) -> None:
        count = 0
        while self._heap:
            when, _, callback = heapq.heappop(self._heap)
            self.clock.advance_to(when)
            callback()
            count += 1
            if count > max_events:
                raise RuntimeError("event loop did not go idle")

    def pending_events(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class SendReceipt:
    """What happened to one send: when it left the link and arrived."""

    depart_us: int
    delivered: bool
    deliver_us: Optional[int]


@dataclass
class ChannelCounters:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    bytes_sent: int = 0


class _Direction:
    """One direction of a link: token bucket, ordering clamp, RNG."""

    def __init__(self, profile: NetworkProfile, loop: EventLoop, stream_id: int):
        self.profile = profile
        self.loop = loop
        self.rng = random.Random((profile.seed << 1) | stream_id)
        self.bucket_capacity = profile.bandwidth_bps * TOKEN_BUCKET_WINDOW_S / 8.0
        self.tokens = 0.0  # starts empty: a cold link has no burst credit
        self.last_refill_us = 0
        self.last_delivery_us = {0: 0, 1: 0}
        self.counters = {0: ChannelCounters(), 1: ChannelCounters()}

    def _depart_time(self, size_bytes: int, now_us: int) -> int:
        bw = self.profile.bandwidth_bps
        if bw <= 0:
            return now_us
        elapsed_s = (now_us - self.last_refill_us) / 1e6
        self.tokens = min(self.bucket_capacity, self.tokens + elapsed_s * bw / 8.0)
        self.last_refill_us = now_us
        self.tokens -= size_bytes
        if self.tokens >= 0:
            return now_us
        # Negative balance = queued transmission; departure when refilled to 0.
        wait_us = round(-self.tokens * 8.0 / bw * 1e6)
        self.last_refill_us = now_us + wait_us
        self.tokens = 0.0
        return now_us + wait_us

    def transmit(self, kind: int, data: bytes, deliver: Callable[[bytes], None]) -> SendReceipt:
        now = self.loop.now_us
        counters = self.counters[kind]
        counters.sent += 1
        counters.bytes_sent += len(data)
        depart = self._depart_time(len(data), now)

        if kind == 1 and self.rng.random() < self.profile.loss_probability:
            counters.dropped += 1
            return SendReceipt(depart_us=depart, delivered=False, deliver_us=None)

        latency_us = round(self.profile.base_latency_ms * 1000.0)
        jitter_us = round(self.rng.uniform(0.0, self.profile.jitter_ms) * 1000.0)
        deliver_at = depart + latency_us + jitter_us
        if kind == 0:
            # Reliable channel: clamp so jitter cannot reorder it.
            deliver_at = max(deliver_at, self.last_delivery_us[0])
        self.last_delivery_us[kind] = max(self.last_delivery_us[kind], deliver_at)

        counters.delivered += 1
        self.loop.schedule_at(deliver_at, lambda: deliver(data))
        return SendReceipt(depart_us=depart, delivered=True, deliver_us=deliver_at)


class SimEndpoint:
    """One side of a simulated link.

    Received messages go to ``handler(kind, data)`` when set, otherwise
    they accumulate in ``inbox`` as (deliver_us, kind, data) tuples.
    """

    def __init__(self, loop: EventLoop):
        self.loop = loop
        self.inbox: list[tuple[int, int, bytes]] = []
        self.handler: Optional[Callable[[int, bytes], None]] = None
        self.closed = False
        self._outbound: Optional[_Direction] = None
        self._peer: Optional["SimEndpoint"] = None

    def _attach(self, direction: _Direction, peer: "SimEndpoint") -> None:
        self._outbound = direction
        self._peer = peer

    def send(self, kind: int, data: bytes) -> SendReceipt:
        if self.closed:
            raise LinkClosedError("send on a closed endpoint")
        if kind not in (0, 1):
            raise ConfigurationError(f"unknown channel kind {kind}")
        peer = self._peer
        return self._outbound.transmit(
            kind, data, lambda payload: peer._deliver(kind, payload)
        )

    def _deliver(self, kind: int, data: bytes) -> None:
        if self.closed:
            return
        if self.handler is not None:
            self.handler(kind, data)
        else:
            self.inbox.append((self.loop.now_us, kind, data))

    def close(self) -> None:
        self.closed = True

    @property
    def outbound_counters(self) -> dict[int, ChannelCounters]:
        return self._outbound.counters


def sim_link(
    profile: NetworkProfile, loop: EventLoop
) -> tuple[SimEndpoint, SimEndpoint]:
    """Create two connected endpoints with independent per-direction state."""
    a = SimEndpoint(loop)
    b = SimEndpoint(loop)
    a._attach(_Direction(profile, loop, 0), b)
    b._attach(_Direction(profile, loop, 1), a)
    return a, b


class MediaSendQueue:
    """Bounded send queue with a latest-wins drop policy.

    Enqueueing beyond capacity drops the OLDEST queued message, bounding
    queueing delay under backpressure. Capacity ``None`` means unbounded
    (the failure mode this queue exists to prevent). Drain order is FIFO
    among survivors.
    """

    def __init__(self, capacity: Optional[int] = 2):
        if capacity is not None and capacity < 1:
            raise ConfigurationError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque = deque()
        self.drops = 0

    def push(self, item):
        """Enqueue; returns the evicted oldest item, or None."""
        evicted = None
        if self.capacity is not None and len(self._items) >= self.capacity:
            evicted = self._items.popleft()
            self.drops += 1
        self._items.append(item)
        return evicted

    def pop(self):
        return self._items.popleft()

    def __len__(self) -> int:
        return len(self._items)

    def __bool__(self) -> bool:
        return bool(self._items)
