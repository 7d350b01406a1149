"""Builds the simulation graph from a scenario, runs it, and gathers results.

Also houses the instrumentation attached to the DiffServ egress interface:
a per-packet latency-bound checker for self-clocked fair queuing and a
per-packet queuing-wait checker for strict priority.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .diffserv import Conditioner, PolicyEntry, TokenBucket
from .engine import Engine, RunSummary, tx_time_ns
from .metrics import IpdvMonitor, OwdMonitor
from .network import (
    Counters,
    EgressPort,
    HostNode,
    RouterNode,
    SourceProcess,
    SINK_HOSTS,
    SOURCE_HOSTS,
    build_testbed,
    spawn_background,
)
from .packet import DSCP_EF
from .diffserv import QueueConfig
from .scenario import Scenario
from .schedulers import make_scheduler, scfq_latency_bound


class ScfqBoundMonitor:
    """Checks each monitored packet's scheduler latency against the
    worst-case fair-queuing bound.

    The session count is the maximum number of concurrently backlogged
    sessions observed from the start of the monitored queue's current
    backlog period through the packet's service start. Anchoring at the
    backlog period matters: a packet can inherit head-of-line delay from a
    predecessor that was blocked by another session even if that session
    drained before the packet's own arrival.
    """

    __slots__ = ("target_qid", "rho_bps", "rate_bps", "checked", "violations",
                 "worst_excess_ns", "_waiting", "_l_i", "_l_max", "_bp_max",
                 "_bound_cache")

    def __init__(self, target_qid: int, rho_bps: Fraction, rate_bps: int):
        self.target_qid = target_qid
        self.rho_bps = rho_bps
        self.rate_bps = rate_bps
        self.checked = 0
        self.violations = 0
        self.worst_excess_ns = None
        self._waiting: deque = deque()  # (pkt, enqueue_ns)
        self._l_i = 0
        self._l_max = 0
        self._bp_max = 0  # high-water session count of the current backlog period
        self._bound_cache: dict[tuple[int, int, int], int] = {}

    def _bump(self, port, now):
        if self._waiting or port.serving_qid == self.target_qid:
            n = port.active_sessions(now)
            if n > self._bp_max:
                self._bp_max = n

    def on_enqueue(self, port, qid, pkt, now):
        if pkt.size_bytes > self._l_max:
            self._l_max = pkt.size_bytes
        if qid == self.target_qid:
            if pkt.size_bytes > self._l_i:
                self._l_i = pkt.size_bytes
            if not self._waiting and not (
                port.serving_qid == self.target_qid and now < port.link.busy_until
            ):
                self._bp_max = 0  # the monitored session was idle: new backlog period
            self._waiting.append((pkt, now))
        self._bump(port, now)

    def on_tx_start(self, port, qid, pkt, now, done):
        self._bump(port, now)
        if qid != self.target_qid:
            return
        queued_pkt, enq = self._waiting.popleft()
        assert queued_pkt is pkt, "monitored queue bookkeeping out of sync"
        sessions = self._bp_max
        latency = done - enq
        key = (self._l_i, self._l_max, sessions)
        bound = self._bound_cache.get(key)
        if bound is None:
            bound = scfq_latency_bound(self._l_i, self._l_max, self.rho_bps,
                                       self.rate_bps, sessions)
            self._bound_cache[key] = bound
        self.checked += 1
        if latency > bound:
            self.violations += 1
            excess = latency - bound
            if self.worst_excess_ns is None or excess > self.worst_excess_ns:
                self.worst_excess_ns = excess

    def on_state_change(self, port, now):
        self._bump(port, now)


class PqWaitMonitor:
    """Asserts the strict-priority queuing wait of the monitored queue never
    exceeds one lower-priority serialization time on the egress link."""

    __slots__ = ("target_qid", "rate_bps", "checked", "violations",
                 "worst_excess_ns", "_waiting", "_max_other_size")

    def __init__(self, target_qid: int, rate_bps: int):
        self.target_qid = target_qid
        self.rate_bps = rate_bps
        self.checked = 0
        self.violations = 0
        self.worst_excess_ns = None
        self._waiting: deque = deque()
        self._max_other_size = 0

    def on_enqueue(self, port, qid, pkt, now):
        if qid == self.target_qid:
            self._waiting.append((pkt, now))
        elif pkt.size_bytes > self._max_other_size:
            self._max_other_size = pkt.size_bytes

    def on_tx_start(self, port, qid, pkt, now, done):
        if qid != self.target_qid:
            return
        queued_pkt, enq = self._waiting.popleft()
        assert queued_pkt is pkt, "monitored queue bookkeeping out of sync"
        wait = now - enq
        bound = tx_time_ns(self._max_other_size, self.rate_bps) if self._max_other_size else 0
        self.checked += 1
        if wait > bound:
            self.violations += 1
            excess = wait - bound
            if self.worst_excess_ns is None or excess > self.worst_excess_ns:
                self.worst_excess_ns = excess

    def on_state_change(self, port, now):
        pass


@dataclass
class RunResult:
    summary: RunSummary
    created: int
    delivered: int
    dropped_policer: int
    dropped_tail: int
    dropped_llq: int
    queued_end: int
    wire_end: int
    owd: dict[str, OwdMonitor] = field(default_factory=dict)
    ipdv: dict[str, IpdvMonitor] = field(default_factory=dict)
    bound_monitor: Optional[ScfqBoundMonitor] = None
    pq_monitor: Optional[PqWaitMonitor] = None
    edge_tail_drops: dict[int, int] = field(default_factory=dict)
    delivery_log: Optional[list] = None

    @property
    def dropped(self) -> int:
        return self.dropped_policer + self.dropped_tail + self.dropped_llq

    @property
    def conservation_ok(self) -> bool:
        return self.created == self.delivered + self.dropped + self.queued_end + self.wire_end


def run_scenario(sc: Scenario, debug: bool = False) -> RunResult:
    """Run one scenario start to finish on a fresh engine."""
    topo = build_testbed(sc.topology)
    engine = Engine()
    counters = Counters()
    delivery_log: Optional[list] = [] if debug else None

    observers = []
    owd_monitors: dict[str, OwdMonitor] = {}
    ipdv_monitors: dict[str, IpdvMonitor] = {}
    for out in sc.outputs:
        ff = None if out.flow_filter is None else frozenset(out.flow_filter)
        if out.kind == "owd":
            mon = OwdMonitor(ff, sc.run.warmup_ns)
            owd_monitors[out.name] = mon
        else:
            mon = IpdvMonitor(ff, sc.run.warmup_ns)
            ipdv_monitors[out.name] = mon
        observers.append(mon)

    # Terminal hosts.
    hosts = {
        h: HostNode(h, engine, counters, observers, delivery_log)
        for h in SOURCE_HOSTS + SINK_HOSTS
    }

    # DiffServ egress at e1.
    entries = []
    for pol in sc.policy:
        meter = None
        if pol.meter is not None:
            meter = TokenBucket(pol.meter.cir_bps, pol.meter.cbs_bytes)
        entries.append(
            PolicyEntry(
                match=frozenset(pol.match),
                aggregate_id=pol.aggregate_id,
                meter=meter,
                in_dscp=pol.in_dscp,
                out_dscp=pol.out_dscp,
                out_action=pol.out_action,
            )
        )
    conditioner = Conditioner(entries) if entries else None

    qs = sc.queue_set
    kw = {"exceed_action": qs.exceed_action} if qs.scheduler == "llq" else {}
    edge_sched = make_scheduler(qs.scheduler, qs.queues, sc.topology.man_rate_bps, **kw)

    monitor = None
    ef_qid = None
    for qc in qs.queues:
        if DSCP_EF in qc.dscp_set:
            ef_qid = qc.queue_id
            break
    if ef_qid is not None and qs.scheduler in ("scfq", "wfq"):
        total_w = sum(q.weight for q in qs.queues)
        rho = Fraction(next(q.weight for q in qs.queues if q.queue_id == ef_qid), 1)
        rho = rho / total_w * sc.topology.man_rate_bps
        monitor = ScfqBoundMonitor(ef_qid, rho, sc.topology.man_rate_bps)
    elif ef_qid is not None and qs.scheduler == "pq":
        monitor = PqWaitMonitor(ef_qid, sc.topology.man_rate_bps)

    e1 = RouterNode("e1", engine, counters, conditioner)
    core = RouterNode("core", engine, counters)
    e2 = RouterNode("e2", engine, counters)

    def fifo_port(link, dst_receive):
        qc = [QueueConfig(queue_id=0, dscp_set=frozenset(),
                          capacity_packets=sc.topology.fifo_queue_capacity, default=True)]
        sched = make_scheduler("fifo", qc, link.rate_bps)
        return EgressPort(engine, link, qc, sched, counters, dst_receive)

    host_ports = {
        s: fifo_port(topo.links[(s, "e1")], e1.receive) for s in SOURCE_HOSTS
    }
    e1_port = EgressPort(engine, topo.links[("e1", "core")], qs.queues, edge_sched,
                         counters, core.receive, monitor)
    core_port = fifo_port(topo.links[("core", "e2")], e2.receive)
    e2_ports = {
        d: fifo_port(topo.links[("e2", d)], hosts[d].receive) for d in SINK_HOSTS
    }

    # Sources: configured flows plus the randomized background aggregate.
    duration = sc.run.duration_ns
    specs = []
    for f in sc.flows:
        from .network import CbrSource

        specs.append(
            CbrSource(
                flow_id=f.flow_id,
                src=f.src,
                dst=f.dst,
                rate_bps=f.rate_bps,
                packet_size_bytes=f.size_bytes,
                start_ns=f.start_ns,
                stop_ns=duration if f.stop_ns is None else f.stop_ns,
            )
        )
    if sc.background is not None:
        bg = sc.background
        specs.extend(
            spawn_background(
                bg.n_sources,
                bg.rate_range_bps,
                bg.start_range_ns,
                sc.run.seed,
                size_bytes=bg.size_bytes,
                size_schedule=bg.size_schedule,
                src_nodes=bg.src_nodes,
                dst_nodes=bg.dst_nodes,
                stop_ns=duration,
            )
        )

    for spec in specs:
        path = topo.route(spec.src, spec.dst)
        assert path[1] == "e1" and path[-2] == "e2"
        e1.port_by_flow[spec.flow_id] = e1_port
        core.port_by_flow[spec.flow_id] = core_port
        e2.port_by_flow[spec.flow_id] = e2_ports[spec.dst]
        proc = SourceProcess(engine, counters, host_ports[spec.src], spec)
        proc.start(spec.start_ns)

    summary = engine.run_until(duration)

    queued = e1_port.queued_packets() + core_port.queued_packets()
    queued += sum(p.queued_packets() for p in host_ports.values())
    queued += sum(p.queued_packets() for p in e2_ports.values())

    result = RunResult(
        summary=summary,
        created=counters.created,
        delivered=counters.delivered,
        dropped_policer=counters.dropped_policer,
        dropped_tail=counters.dropped_tail,
        dropped_llq=counters.dropped_llq,
        queued_end=queued,
        wire_end=counters.wire,
        owd=owd_monitors,
        ipdv=ipdv_monitors,
        bound_monitor=monitor if isinstance(monitor, ScfqBoundMonitor) else None,
        pq_monitor=monitor if isinstance(monitor, PqWaitMonitor) else None,
        edge_tail_drops=dict(e1_port.tail_drops),
        delivery_log=delivery_log,
    )
    assert result.conservation_ok, (
        f"conservation broken: created={result.created} delivered={result.delivered} "
        f"dropped={result.dropped} queued={result.queued_end} wire={result.wire_end}"
    )
    return result
