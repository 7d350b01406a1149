"""Fluid generalized-processor-sharing reference.

Simulates the idealized fluid server directly (piecewise-linear service of
per-packet remaining volume, rates proportional to the weights of backlogged
sessions), with exact rational arithmetic. This is the independent reference
the packet-by-packet approximation is checked against; it shares no code
with the tag-based scheduler implementations.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction

NS_PER_SEC = 1_000_000_000


@dataclass(frozen=True)
class FluidArrival:
    t_ns: int
    session: int
    size_bytes: int


def gps_completion_times(
    arrivals: list[FluidArrival],
    weights: dict[int, Fraction | int],
    rate_bps: int,
) -> list[Fraction]:
    """Fluid completion time (ns, exact rational) of every arrival, in input order.

    Sessions are FIFO internally; at any instant each backlogged session is
    served at rate * weight / sum(weights of backlogged sessions).
    """
    if rate_bps <= 0:
        raise ValueError("rate must be positive")
    phi = {s: Fraction(w) for s, w in weights.items()}
    total_w = sum(phi.values())
    order = sorted(range(len(arrivals)), key=lambda i: (arrivals[i].t_ns, i))
    completions: list[Fraction] = [Fraction(0)] * len(arrivals)

    # Per-session FIFO of [remaining_bits, arrival_index].
    backlog: dict[int, deque] = {s: deque() for s in phi}
    t = Fraction(0)
    pos = 0
    n = len(arrivals)

    def busy_sessions():
        return [s for s, q in backlog.items() if q]

    while pos < n or any(q for q in backlog.values()):
        busy = busy_sessions()
        if not busy:
            t = Fraction(arrivals[order[pos]].t_ns)
            while pos < n and Fraction(arrivals[order[pos]].t_ns) == t:
                idx = order[pos]
                a = arrivals[idx]
                backlog[a.session].append([Fraction(a.size_bytes * 8), idx])
                pos += 1
            continue
        w_busy = sum(phi[s] for s in busy)
        # Per-session head completion horizon at current rates.
        dt_done = None
        for s in busy:
            rem, _ = backlog[s][0]
            rate_s = Fraction(rate_bps) * phi[s] / w_busy  # bits per second
            dt = rem / rate_s * NS_PER_SEC  # ns
            if dt_done is None or dt < dt_done:
                dt_done = dt
        dt_next = None
        if pos < n:
            dt_next = Fraction(arrivals[order[pos]].t_ns) - t
        step = dt_done if dt_next is None or dt_done <= dt_next else dt_next
        # Drain step ns of fluid from every busy head.
        for s in busy:
            rate_s = Fraction(rate_bps) * phi[s] / w_busy
            drained = rate_s * step / NS_PER_SEC
            head = backlog[s][0]
            head[0] -= drained
        t = t + step
        for s in busy:
            head = backlog[s][0]
            if head[0] == 0:
                completions[head[1]] = t
                backlog[s].popleft()
        while pos < n and Fraction(arrivals[order[pos]].t_ns) == t:
            idx = order[pos]
            a = arrivals[idx]
            backlog[a.session].append([Fraction(a.size_bytes * 8), idx])
            pos += 1
    return completions
