"""Pluggable packet schedulers behind one interface.

One abstract class, nine work-conserving disciplines: strict priority (PQ),
round robin (RR), weighted round robin (WRR), weighted interleaved round
robin (WIRR), self-clocked fair queuing (SCFQ), start-time fair queuing
(SFQ), worst-case fair weighted fair queuing plus (WF2Q+), packet-by-packet
generalized processor sharing (PGPS) and low latency queuing (LLQ).

The egress driver consults pick_next() only at link-free instants, so every
discipline is non-preemptive. Virtual times and tags are exact rationals;
all tags reset to zero whenever the system drains, which bounds their growth
over long runs without changing any scheduling decision.

Conventions shared by all tag-based disciplines:
  - per-queue service share rho_i = weight_i * rate / sum(weights)
  - tag ties break to the lowest queue id, then FIFO within the queue
  - WRR/WIRR weights are packet counts per round, not bytes
"""

from __future__ import annotations

import math
from collections import deque
from fractions import Fraction
from typing import Optional

from .diffserv import IN_PROFILE, QueueConfig, TokenBucket
from .packet import Packet

NS_PER_SEC = 1_000_000_000


class Empty(Exception):
    """pick_next was forced on a scheduler with no backlog."""


class BadParam(Exception):
    """A latency-bound parameter is out of domain."""


def scfq_latency_bound(
    l_i_bytes: int,
    l_max_bytes: int,
    rho_i_bps: int | Fraction,
    rate_bps: int,
    active_sessions: int,
) -> int:
    """Worst-case queue latency of self-clocked fair queuing, in ns.

    l_i is the largest packet of the monitored session, l_max the largest
    packet of any session, rho_i the session's allocated rate, rate the line
    rate and active_sessions the number of concurrently backlogged sessions.
    The result is rounded up to the next nanosecond.
    """
    if rho_i_bps <= 0 or rate_bps <= 0:
        raise BadParam("rates must be positive")
    if active_sessions < 1:
        raise BadParam("active_sessions must be >= 1")
    if l_i_bytes <= 0 or l_max_bytes <= 0:
        raise BadParam("packet sizes must be positive")
    bound_s = Fraction(8 * l_i_bytes) / Fraction(rho_i_bps) + Fraction(
        8 * l_max_bytes, rate_bps
    ) * (active_sessions - 1)
    ns = bound_s * NS_PER_SEC
    return -(-ns.numerator // ns.denominator)


class Scheduler:
    """Scheduling discipline for one egress interface.

    The port owns the packet FIFOs; the scheduler mirrors whatever per-packet
    bookkeeping it needs via on_enqueue/on_dequeue and answers pick_next with
    the queue to serve. pick_next must return a queue whenever any queue is
    backlogged (work conservation is asserted by the driver).
    """

    kind = "abstract"
    needs_port = False

    def __init__(self, queues: list[QueueConfig], rate_bps: int):
        if not queues:
            raise ValueError("at least one queue required")
        if rate_bps <= 0:
            raise ValueError("rate_bps must be positive")
        ids = [q.queue_id for q in queues]
        if len(set(ids)) != len(ids):
            raise ValueError("queue ids must be unique")
        self.queues = {q.queue_id: q for q in queues}
        self.order = sorted(ids)
        self.rate_bps = rate_bps
        self.backlog = {qid: 0 for qid in self.order}
        self.total_backlog = 0

    # -- interface ---------------------------------------------------------

    def on_enqueue(self, queue_id: int, pkt: Packet, now: int) -> None:
        self.backlog[queue_id] += 1
        self.total_backlog += 1

    def pick_next(self, now: int) -> Optional[int]:
        raise NotImplementedError

    def on_dequeue(self, queue_id: int, pkt: Packet, now: int) -> None:
        self.backlog[queue_id] -= 1
        self.total_backlog -= 1

    def on_drop(self, queue_id: int, pkt: Packet, now: int) -> None:
        """A queued packet was removed without being served (LLQ policing)."""
        self.on_dequeue(queue_id, pkt, now)

    def on_idle(self, now: int) -> None:
        """System drained: renormalize any virtual-time state."""

    def bind_port(self, port) -> None:
        """Ports attach themselves so LLQ can drop policed head packets."""


def _weights(queues: list[QueueConfig]) -> dict[int, Fraction]:
    w = {}
    for q in queues:
        if q.weight is None or q.weight <= 0:
            raise ValueError(f"queue {q.queue_id}: positive weight required")
        w[q.queue_id] = Fraction(q.weight)
    return w


class FifoScheduler(Scheduler):
    """Single-queue FIFO, used by plain (non-DiffServ) interfaces."""

    kind = "fifo"

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        if len(self.order) != 1:
            raise ValueError("fifo serves exactly one queue")
        self._qid = self.order[0]

    def pick_next(self, now):
        return self._qid if self.total_backlog else None


class PqScheduler(Scheduler):
    """Strict priority: lowest priority_level wins, non-preemptively."""

    kind = "pq"

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        levels = [q.priority_level for q in queues]
        if any(lv is None for lv in levels) or len(set(levels)) != len(levels):
            raise ValueError("pq needs a unique priority_level per queue")
        self._by_prio = sorted(self.order, key=lambda qid: self.queues[qid].priority_level)

    def pick_next(self, now):
        if not self.total_backlog:
            return None
        backlog = self.backlog
        for qid in self._by_prio:
            if backlog[qid]:
                return qid
        return None


class RrScheduler(Scheduler):
    """Round robin: one packet per visit, cyclic over non-empty queues."""

    kind = "rr"

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        self._ptr = 0

    def pick_next(self, now):
        if not self.total_backlog:
            return None
        n = len(self.order)
        for k in range(n):
            qid = self.order[(self._ptr + k) % n]
            if self.backlog[qid]:
                return qid
        return None

    def on_dequeue(self, queue_id, pkt, now):
        super().on_dequeue(queue_id, pkt, now)
        self._ptr = (self.order.index(queue_id) + 1) % len(self.order)


class WrrScheduler(Scheduler):
    """Weighted round robin: up to weight_i consecutive packets per turn."""

    kind = "wrr"

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        self._w = {}
        for q in queues:
            if q.weight is None or int(q.weight) != q.weight or q.weight < 1:
                raise ValueError("wrr weights are positive integer packet counts")
            self._w[q.queue_id] = int(q.weight)
        self._ptr = 0
        self._served_in_turn = 0

    def pick_next(self, now):
        if not self.total_backlog:
            return None
        n = len(self.order)
        for _ in range(n + 1):
            qid = self.order[self._ptr]
            if self.backlog[qid] and self._served_in_turn < self._w[qid]:
                return qid
            self._ptr = (self._ptr + 1) % n
            self._served_in_turn = 0
        return None

    def on_dequeue(self, queue_id, pkt, now):
        super().on_dequeue(queue_id, pkt, now)
        self._served_in_turn += 1


class WirrScheduler(Scheduler):
    """Weighted interleaved round robin: one packet per visit, weight_i
    visits per round, rounds restart when every quota or queue is spent."""

    kind = "wirr"

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        self._w = {}
        for q in queues:
            if q.weight is None or int(q.weight) != q.weight or q.weight < 1:
                raise ValueError("wirr weights are positive integer packet counts")
            self._w[q.queue_id] = int(q.weight)
        self._quota = dict(self._w)
        self._ptr = 0

    def pick_next(self, now):
        if not self.total_backlog:
            return None
        n = len(self.order)
        for _attempt in (0, 1):
            for k in range(n):
                qid = self.order[(self._ptr + k) % n]
                if self.backlog[qid] and self._quota[qid] > 0:
                    return qid
            # Round exhausted while traffic remains: start a new round.
            self._quota = dict(self._w)
        return None

    def on_dequeue(self, queue_id, pkt, now):
        super().on_dequeue(queue_id, pkt, now)
        self._quota[queue_id] -= 1
        self._ptr = (self.order.index(queue_id) + 1) % len(self.order)


class _TagScheduler(Scheduler):
    """Shared machinery for the virtual-time disciplines.

    Tags are exact integers in a per-configuration virtual unit of
    1/(rate * L) seconds, where L is the least common multiple of the weight
    numerators over a common denominator. In that unit the finish-tag
    increment of queue i is (8 * sum_n * L / n_i) per byte, an integer, and
    one byte of real service time is 8*L units. Integer tags keep 200 s
    runs exact without rational arithmetic on the per-packet path.
    """

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        w = _weights(queues)
        total = sum(w.values())
        self.phi = {qid: w[qid] / total for qid in self.order}
        self.rho = {qid: self.phi[qid] * rate_bps for qid in self.order}
        denom = math.lcm(*(self.phi[qid].denominator for qid in self.order))
        self._n = {qid: int(self.phi[qid] * denom) for qid in self.order}
        sum_n = sum(self._n.values())
        scale = math.lcm(*self._n.values())
        # Integer finish-tag increment per byte of queue i.
        self._kb = {qid: 8 * sum_n * scale // self._n[qid] for qid in self.order}
        # Integer virtual units per byte of real link service.
        self._serv_kb = 8 * scale
        self._n_sum = sum_n
        self._scale = scale

    def tag_seconds(self, tag: int) -> Fraction:
        """Convert an integer tag back to virtual seconds (for inspection)."""
        return Fraction(tag, self.rate_bps * self._scale)


class ScfqScheduler(_TagScheduler):
    """Self-clocked fair queuing: virtual time is the finish tag of the
    packet in service; serve the smallest finish tag."""

    kind = "scfq"

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        self.v_now = 0
        self._last_f = {qid: 0 for qid in self.order}
        self._tags = {qid: deque() for qid in self.order}

    def on_enqueue(self, queue_id, pkt, now):
        super().on_enqueue(queue_id, pkt, now)
        prev = self._last_f[queue_id]
        start = prev if prev > self.v_now else self.v_now
        f = start + self._kb[queue_id] * pkt.size_bytes
        self._last_f[queue_id] = f
        self._tags[queue_id].append(f)

    def pick_next(self, now):
        if not self.total_backlog:
            return None
        best = None
        best_f = None
        for qid in self.order:
            tags = self._tags[qid]
            if tags and (best_f is None or tags[0] < best_f):
                best_f = tags[0]
                best = qid
        return best

    def on_dequeue(self, queue_id, pkt, now):
        super().on_dequeue(queue_id, pkt, now)
        self.v_now = self._tags[queue_id].popleft()

    def on_idle(self, now):
        self.v_now = 0
        for qid in self.order:
            self._last_f[qid] = 0


class SfqScheduler(_TagScheduler):
    """Start-time fair queuing: virtual time is the start tag of the packet
    in service; serve the smallest start tag."""

    kind = "sfq"

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        self.v_now = 0
        self._last_f = {qid: 0 for qid in self.order}
        self._starts = {qid: deque() for qid in self.order}

    def on_enqueue(self, queue_id, pkt, now):
        super().on_enqueue(queue_id, pkt, now)
        prev = self._last_f[queue_id]
        s = prev if prev > self.v_now else self.v_now
        self._last_f[queue_id] = s + self._kb[queue_id] * pkt.size_bytes
        self._starts[queue_id].append(s)

    def pick_next(self, now):
        if not self.total_backlog:
            return None
        best = None
        best_s = None
        for qid in self.order:
            starts = self._starts[qid]
            if starts and (best_s is None or starts[0] < best_s):
                best_s = starts[0]
                best = qid
        return best

    def on_dequeue(self, queue_id, pkt, now):
        super().on_dequeue(queue_id, pkt, now)
        self.v_now = self._starts[queue_id].popleft()

    def on_idle(self, now):
        self.v_now = 0
        for qid in self.order:
            self._last_f[qid] = 0


class Wf2qPlusScheduler(_TagScheduler):
    """WF2Q+: among head packets whose start tag is eligible (S <= V), serve
    the smallest finish tag. V advances by the real service time of each
    served packet and never falls below the smallest backlogged start tag."""

    kind = "wf2q+"

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        self.v_now = 0
        self._last_f = {qid: 0 for qid in self.order}
        self._tags = {qid: deque() for qid in self.order}  # (start, finish)
        self._pending_served_bytes = 0

    def on_enqueue(self, queue_id, pkt, now):
        super().on_enqueue(queue_id, pkt, now)
        prev = self._last_f[queue_id]
        s = prev if prev > self.v_now else self.v_now
        f = s + self._kb[queue_id] * pkt.size_bytes
        self._last_f[queue_id] = f
        self._tags[queue_id].append((s, f))

    def pick_next(self, now):
        if not self.total_backlog:
            return None
        v = self.v_now
        if self._pending_served_bytes:
            v = v + self._serv_kb * self._pending_served_bytes
            self._pending_served_bytes = 0
        min_s = None
        for qid in self.order:
            tags = self._tags[qid]
            if tags and (min_s is None or tags[0][0] < min_s):
                min_s = tags[0][0]
        if min_s is not None and min_s > v:
            v = min_s
        self.v_now = v
        best = None
        best_f = None
        for qid in self.order:
            tags = self._tags[qid]
            if tags:
                s, f = tags[0]
                if s <= v and (best_f is None or f < best_f):
                    best_f = f
                    best = qid
        assert best is not None, "eligibility must admit the minimum start tag"
        return best

    def on_dequeue(self, queue_id, pkt, now):
        super().on_dequeue(queue_id, pkt, now)
        self._tags[queue_id].popleft()
        self._pending_served_bytes = pkt.size_bytes

    def on_idle(self, now):
        self.v_now = 0
        self._pending_served_bytes = 0
        for qid in self.order:
            self._last_f[qid] = 0


class PgpsScheduler(_TagScheduler):
    """Packet-by-packet generalized processor sharing.

    Serves the smallest finish tag under the fluid reference virtual time,
    which advances at rate 1/sum(shares of fluid-backlogged sessions). The
    fluid-backlogged set is tracked exactly: a session stays active in the
    reference system while its largest assigned finish tag exceeds V, and
    the piecewise-linear advance iterates over those crossings. Tags are in
    the shared integer unit; V itself is rational between crossings.
    """

    kind = "pgps"

    def __init__(self, queues, rate_bps):
        super().__init__(queues, rate_bps)
        self.v_now = Fraction(0)  # virtual units
        self._t_last = Fraction(0)  # ns, rational between crossings
        self._last_f = {qid: 0 for qid in self.order}
        self._tags = {qid: deque() for qid in self.order}
        # Virtual units per real nanosecond, per unit of active share:
        # dV/dt = units_per_ns / sum(phi of active sessions).
        self._units_per_ns = Fraction(rate_bps * self._scale, NS_PER_SEC)

    def _advance(self, now: int) -> None:
        t = Fraction(now)
        v = self.v_now
        t_last = self._t_last
        last_f = self._last_f
        while t_last < t:
            active = [qid for qid in self.order if last_f[qid] > v]
            if not active:
                t_last = t
                break
            denom = Fraction(0)
            f_star = None
            for qid in active:
                denom += self.phi[qid]
                f = last_f[qid]
                if f_star is None or f < f_star:
                    f_star = f
            dt_need = (f_star - v) * denom / self._units_per_ns
            if t_last + dt_need <= t:
                v = Fraction(f_star)
                t_last = t_last + dt_need
            else:
                v = v + (t - t_last) * self._units_per_ns / denom
                t_last = t
        self.v_now = v
        self._t_last = t_last

    def on_enqueue(self, queue_id, pkt, now):
        super().on_enqueue(queue_id, pkt, now)
        self._advance(now)
        prev = self._last_f[queue_id]
        s = prev if prev > self.v_now else self.v_now
        f = s + self._kb[queue_id] * pkt.size_bytes
        self._last_f[queue_id] = f
        self._tags[queue_id].append(f)

    def pick_next(self, now):
        if not self.total_backlog:
            return None
        self._advance(now)
        best = None
        best_f = None
        for qid in self.order:
            tags = self._tags[qid]
            if tags and (best_f is None or tags[0] < best_f):
                best_f = tags[0]
                best = qid
        return best

    def on_dequeue(self, queue_id, pkt, now):
        super().on_dequeue(queue_id, pkt, now)
        self._tags[queue_id].popleft()

    def on_idle(self, now):
        self.v_now = Fraction(0)
        self._t_last = Fraction(now)
        for qid in self.order:
            self._last_f[qid] = 0


class LlqScheduler(Scheduler):
    """Low latency queuing: one policed strict-priority queue in front of
    self-clocked fair queuing over the remaining classes.

    The priority queue is policed only while other classes are backlogged
    (uncongested priority traffic always flows, debiting tokens when in
    profile). Under congestion an out-of-profile head is dropped by default,
    or deferred behind the fair-queued classes when exceed_action is defer.
    """

    kind = "llq"
    needs_port = True

    def __init__(self, queues, rate_bps, exceed_action: str = "drop"):
        super().__init__(queues, rate_bps)
        prio = [q for q in queues if q.llq_priority]
        if len(prio) != 1:
            raise ValueError("llq needs exactly one llq_priority queue")
        self._pq = prio[0].queue_id
        cir = prio[0].llq_cir_bps
        cbs = prio[0].llq_cbs_bytes
        if cir is None or cbs is None:
            raise ValueError("llq priority queue needs llq_cir_bps and llq_cbs_bytes")
        if exceed_action not in ("drop", "defer"):
            raise ValueError("exceed_action must be drop or defer")
        self._bucket = TokenBucket(cir, cbs)
        self._exceed = exceed_action
        self._sizes: deque[int] = deque()
        self._sub = ScfqScheduler([q for q in queues if not q.llq_priority], rate_bps)
        self._port = None

    def bind_port(self, port):
        self._port = port

    def on_enqueue(self, queue_id, pkt, now):
        super().on_enqueue(queue_id, pkt, now)
        if queue_id == self._pq:
            self._sizes.append(pkt.size_bytes)
        else:
            self._sub.on_enqueue(queue_id, pkt, now)

    def pick_next(self, now):
        if not self.total_backlog:
            return None
        if self.backlog[self._pq]:
            if self._sub.total_backlog == 0:
                # No congestion: serve unconditionally, consume tokens if conformant.
                self._bucket.meter(self._sizes[0], now)
                return self._pq
            while self.backlog[self._pq]:
                if self._bucket.meter(self._sizes[0], now) == IN_PROFILE:
                    return self._pq
                if self._exceed == "defer":
                    break
                self._port.drop_head(self._pq)
        if self._sub.total_backlog:
            return self._sub.pick_next(now)
        if self.backlog[self._pq]:  # deferred head, nothing else to send
            return self._pq
        return None

    def on_dequeue(self, queue_id, pkt, now):
        super().on_dequeue(queue_id, pkt, now)
        if queue_id == self._pq:
            self._sizes.popleft()
        else:
            self._sub.on_dequeue(queue_id, pkt, now)

    def on_drop(self, queue_id, pkt, now):
        Scheduler.on_dequeue(self, queue_id, pkt, now)
        if queue_id == self._pq:
            self._sizes.popleft()
        else:
            self._sub.on_drop(queue_id, pkt, now)

    def on_idle(self, now):
        self._sub.on_idle(now)


_KINDS = {
    "fifo": FifoScheduler,
    "pq": PqScheduler,
    "rr": RrScheduler,
    "wrr": WrrScheduler,
    "wirr": WirrScheduler,
    "scfq": ScfqScheduler,
    "wfq": ScfqScheduler,  # the deployed WFQ is the self-clocked variant
    "sfq": SfqScheduler,
    "wf2q+": Wf2qPlusScheduler,
    "pgps": PgpsScheduler,
    "llq": LlqScheduler,
}

SCHEDULER_KINDS = tuple(sorted(_KINDS))


def make_scheduler(kind: str, queues: list[QueueConfig], rate_bps: int, **kw) -> Scheduler:
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown scheduler kind {kind!r}") from None
    return cls(queues, rate_bps, **kw)
