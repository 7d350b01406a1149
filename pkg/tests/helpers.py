"""Shared test drivers: a standalone scheduler loop and a real-port harness."""

from __future__ import annotations

from collections import deque

from dssim.diffserv import QueueConfig
from dssim.engine import Engine, tx_time_ns
from dssim.network import Counters, EgressPort, Link
from dssim.packet import Packet
from dssim.schedulers import make_scheduler


def mk_queues(n, weights=None, priorities=None, capacity=10_000, **extra):
    qcs = []
    for i in range(n):
        qcs.append(QueueConfig(
            queue_id=i,
            dscp_set=frozenset({f"q{i}"}),
            capacity_packets=capacity,
            weight=None if weights is None else weights[i],
            priority_level=None if priorities is None else priorities[i],
            default=(i == n - 1),
            **({k: v[i] for k, v in extra.items()} if extra else {}),
        ))
    return qcs


def drive_sched(sched, arrivals, rate_bps):
    """Non-preemptive service loop over (t_ns, qid, size) arrivals.

    Mirrors the egress-port contract: arrivals at or before a link-free
    instant are enqueued before the pick, and tag state renormalizes when
    the system is found drained. Returns [(qid, arrival_idx, start, done)].
    """
    arrivals = sorted(enumerate(arrivals), key=lambda p: (p[1][0], p[0]))
    queues = {qid: deque() for qid in sched.order}
    served = []
    free = 0
    idx = 0
    n = len(arrivals)
    backlog = 0

    def enqueue_at(t):
        nonlocal idx, backlog
        while idx < n and arrivals[idx][1][0] <= t:
            orig_idx, (at, qid, size) = arrivals[idx]
            if backlog == 0 and at >= free:
                sched.on_idle(at)
            pkt = Packet(f"q{qid}", orig_idx, size, f"q{qid}", at)
            queues[qid].append((orig_idx, pkt))
            sched.on_enqueue(qid, pkt, at)
            backlog += 1
            idx += 1

    while idx < n or backlog:
        if backlog == 0:
            t = arrivals[idx][1][0]
            enqueue_at(t)
            continue
        start = free
        if idx < n and arrivals[idx][1][0] <= start:
            enqueue_at(start)
        qid = sched.pick_next(start)
        assert qid is not None, "work-conservation violation in driver"
        orig_idx, pkt = queues[qid].popleft()
        backlog -= 1
        sched.on_dequeue(qid, pkt, start)
        done = start + tx_time_ns(pkt.size_bytes, rate_bps)
        served.append((qid, orig_idx, start, done))
        free = done
    return served


class _Collector:
    def __init__(self):
        self.packets = []

    def receive(self, pkt):
        self.packets.append(pkt)


def drive_port(kind, queue_configs, rate_bps, arrivals, t_end=None, **sched_kw):
    """Run (t_ns, qid, size) arrivals through a real engine + egress port.

    Returns (delivered packets in service order, counters, port). Queue ids
    are addressed through per-queue codepoints q<i>.
    """
    engine = Engine()
    counters = Counters()
    sched = make_scheduler(kind, queue_configs, rate_bps, **sched_kw)
    link = Link("src", "dst", rate_bps, 0)
    sink = _Collector()
    port = EgressPort(engine, link, queue_configs, sched, counters, sink.receive)

    seqs = {qc.queue_id: 0 for qc in queue_configs}

    def inject(qid, size):
        pkt = Packet(f"q{qid}", seqs[qid], size, f"q{qid}", engine.now())
        seqs[qid] += 1
        counters.created += 1
        port.enqueue(pkt, engine.now())

    last_t = 0
    for t, qid, size in sorted(arrivals):
        engine.schedule(t, inject, qid, size)
        last_t = max(last_t, t)
    horizon = t_end if t_end is not None else last_t + sum(
        tx_time_ns(s, rate_bps) for _, _, s in arrivals) + 1
    engine.run_until(horizon)
    return sink.packets, counters, port
