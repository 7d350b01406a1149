"""Discrete-event core: integer-nanosecond clock and a totally ordered event queue.

All simulation time is an integer count of nanoseconds (no floating point
anywhere on the clock path), so identical inputs replay identically on any
platform. Events firing at the same instant are delivered in insertion order.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Any, Callable

NS_PER_SEC = 1_000_000_000
NS_PER_MS = 1_000_000
NS_PER_US = 1_000


def ns_from_s(seconds: float | int) -> int:
    """Convert a configuration value in seconds to integer nanoseconds."""
    return int(round(seconds * NS_PER_SEC))


def tx_time_ns(size_bytes: int, rate_bps: int) -> int:
    """Serialization time of a frame, rounded up to the next nanosecond."""
    bits = size_bytes * 8
    return -(-bits * NS_PER_SEC // rate_bps)


class PastEvent(Exception):
    """Raised when an event is scheduled before the current clock."""


@dataclass
class RunSummary:
    events: int
    end: int


class EventHandle:
    """Permits cancellation of a scheduled event that has not yet fired."""

    __slots__ = ("_engine", "seq", "fire_at")

    def __init__(self, engine: "Engine", seq: int, fire_at: int):
        self._engine = engine
        self.seq = seq
        self.fire_at = fire_at

    def cancel(self) -> None:
        self._engine._cancelled.add(self.seq)


class Engine:
    """Single-threaded event loop owning one simulation run.

    Dispatch order is the total order (fire_at, insertion seq); ties at one
    instant are FIFO. The clock only moves inside run_until().
    """

    __slots__ = ("_now", "_heap", "_seq", "_cancelled", "_running")

    def __init__(self) -> None:
        self._now = 0
        self._heap: list[tuple[int, int, Callable, tuple]] = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self._running = False

    def now(self) -> int:
        return self._now

    def schedule(self, fire_at: int, fn: Callable, *args: Any) -> EventHandle:
        """Queue fn(*args) at fire_at and return a cancellable handle."""
        if fire_at < self._now:
            raise PastEvent(f"fire_at {fire_at} < now {self._now}")
        seq = self._seq
        self._seq = seq + 1
        heapq.heappush(self._heap, (fire_at, seq, fn, args))
        return EventHandle(self, seq, fire_at)

    def schedule_call(self, fire_at: int, fn: Callable, *args: Any) -> None:
        """Like schedule() without allocating a handle (hot path)."""
        if fire_at < self._now:
            raise PastEvent(f"fire_at {fire_at} < now {self._now}")
        heapq.heappush(self._heap, (fire_at, self._seq, fn, args))
        self._seq += 1

    def pending(self) -> int:
        return len(self._heap) - len(self._cancelled)

    def run_until(self, t_end: int) -> RunSummary:
        """Dispatch every event with fire_at <= t_end, then park the clock at t_end."""
        if self._running:
            raise RuntimeError("engine already running")
        self._running = True
        heap = self._heap
        cancelled = self._cancelled
        pop = heapq.heappop
        n = 0
        try:
            while heap and heap[0][0] <= t_end:
                t, seq, fn, args = pop(heap)
                if cancelled and seq in cancelled:
                    cancelled.discard(seq)
                    continue
                self._now = t
                fn(*args)
                n += 1
        finally:
            self._running = False
        if t_end > self._now:
            self._now = t_end
        return RunSummary(events=n, end=self._now)
