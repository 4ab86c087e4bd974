"""Deterministic discrete-event network with a latency/cost model.

Simulated time is an exact rational (milliseconds as `Fraction`), so event
ordering never depends on float rounding and two runs of the same scenario
drain the queue in the same order. Ties are broken by a global sequence
number assigned at enqueue time.

Latency model: transit(m) = per_message_fixed_ms + size_bytes / bandwidth.
Defaults model a 1 Gbps link (125e6 bytes/s) plus a 1 ms fixed cost, and a
per-scheduling-run overhead of 176.66 ms charged by the trusted scheduler.
Delivery is FIFO per (src, dst) pair: a later send never arrives before an
earlier one, even if it is smaller.
"""

from __future__ import annotations

import enum
import heapq
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from .errors import Deadlock, UnknownEndpoint

MS = Fraction(1)


class MsgKind(enum.Enum):
    ACTIVATION = "activation"
    GRADIENT = "gradient"
    DIGEST = "digest"
    CONTROL = "control"
    PARAMS = "params"
    DATA = "data"


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    kind: MsgKind
    payload: object
    size_bytes: int
    send_time: Fraction


@dataclass(frozen=True)
class LatencyModel:
    bandwidth: Fraction = Fraction(125_000_000)  # bytes per simulated second
    per_message_fixed_ms: Fraction = Fraction(1)
    sgx_scheduling_overhead_ms: Fraction = Fraction(17666, 100)  # 176.66

    def transit_ms(self, size_bytes: int) -> Fraction:
        if size_bytes < 0:
            raise ValueError("size_bytes must be non-negative")
        return self.per_message_fixed_ms + Fraction(size_bytes) * 1000 / self.bandwidth


class SimNet:
    """Single-threaded event loop owning all simulated time."""

    def __init__(self, latency: LatencyModel | None = None):
        self.latency = latency or LatencyModel()
        self.now: Fraction = Fraction(0)
        self._queue: list[tuple[Fraction, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._endpoints: set[str] = set()
        self._last_arrival: dict[tuple[str, str], Fraction] = {}
        self.delivered_count = 0

    def register(self, endpoint: str) -> None:
        self._endpoints.add(endpoint)

    def is_registered(self, endpoint: str) -> bool:
        return endpoint in self._endpoints

    def schedule_at(self, time: Fraction, callback: Callable[[], None]) -> None:
        if time < self.now:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._queue, (Fraction(time), next(self._seq), callback))

    def call_later(self, delay_ms: Fraction, callback: Callable[[], None]) -> None:
        self.schedule_at(self.now + Fraction(delay_ms), callback)

    def send(
        self,
        src: str,
        dst: str,
        kind: MsgKind,
        payload: object,
        size_bytes: int,
        on_deliver: Callable[[Message], None],
    ) -> Fraction:
        """Enqueue a message; returns its arrival time."""
        if src not in self._endpoints:
            raise UnknownEndpoint(f"unknown src endpoint {src!r}")
        if dst not in self._endpoints:
            raise UnknownEndpoint(f"unknown dst endpoint {dst!r}")
        msg = Message(src, dst, kind, payload, int(size_bytes), self.now)
        arrival = self.now + self.latency.transit_ms(msg.size_bytes)
        # FIFO per pair: clamp to the previous arrival on this link
        prev = self._last_arrival.get((src, dst))
        if prev is not None and arrival < prev:
            arrival = prev
        self._last_arrival[(src, dst)] = arrival

        def deliver() -> None:
            self.delivered_count += 1
            on_deliver(msg)

        self.schedule_at(arrival, deliver)
        return arrival

    def run_until_idle(self) -> Fraction:
        """Process events to quiescence; returns the final simulated time."""
        while self._queue:
            time, _, callback = heapq.heappop(self._queue)
            self.now = time
            callback()
        return self.now

    def assert_quiescent(self, pending: str | None) -> None:
        """Raise Deadlock if work remains but no event can make progress."""
        if pending and not self._queue:
            raise Deadlock(f"no events queued but {pending} is unfinished")


class FaultKind(enum.Enum):
    CRASH = "crash"
    CORRUPT_RESULT = "corrupt_result"
    EXFILTRATE = "exfiltrate"


@dataclass(frozen=True)
class FaultSpec:
    worker_id: str
    kind: FaultKind
    epoch: int
    step: int


@dataclass
class JobAccounting:
    """Exact cost-model sums for one job."""

    compute_ms: Fraction = Fraction(0)
    comm_ms: Fraction = Fraction(0)
    scheduling_ms: Fraction = Fraction(0)
    work_units: Fraction = Fraction(0)

    def as_dict(self) -> dict[str, str]:
        return {
            "compute_ms": str(self.compute_ms),
            "comm_ms": str(self.comm_ms),
            "scheduling_ms": str(self.scheduling_ms),
            "work_units": str(self.work_units),
        }
