"""Network model: point-to-point links, static routing, the dumbbell testbed
topology, CBR sources and delivery accounting.

An egress interface owns one FIFO deque per configured queue plus a scheduler;
the link serializes exactly one packet at a time and the scheduler is asked
for the next packet only at link-free instants. There is no transmission
queue behind the scheduler: packets go straight onto the wire.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .diffserv import Conditioner, QueueConfig, UnmappedDscp
from .engine import Engine, tx_time_ns
from .packet import DSCP_UNMARKED, DeliveryRecord, MAX_FRAME_BYTES, MIN_FRAME_BYTES, Packet
from .rng import Splitmix64
from .schedulers import Scheduler


class LinkBusy(Exception):
    """transmit() was called while a previous serialization was in progress."""


class BadRange(Exception):
    """A randomized-source parameter range is empty or invalid."""


class Link:
    """Point-to-point pipe: one serialization at a time plus fixed propagation."""

    __slots__ = ("src", "dst", "rate_bps", "prop_delay_ns", "busy_until", "_tx_cache")

    def __init__(self, src: str, dst: str, rate_bps: int, prop_delay_ns: int = 0):
        if rate_bps <= 0 or prop_delay_ns < 0:
            raise ValueError("rate must be positive, delay non-negative")
        self.src = src
        self.dst = dst
        self.rate_bps = rate_bps
        self.prop_delay_ns = prop_delay_ns
        self.busy_until = 0
        self._tx_cache: dict[int, int] = {}

    def tx_ns(self, size_bytes: int) -> int:
        t = self._tx_cache.get(size_bytes)
        if t is None:
            t = tx_time_ns(size_bytes, self.rate_bps)
            self._tx_cache[size_bytes] = t
        return t

    def transmit(self, pkt: Packet, t: int) -> int:
        """Start serializing pkt at t; returns the delivery time at the far end."""
        if t < self.busy_until:
            raise LinkBusy(f"{self.src}->{self.dst} busy until {self.busy_until}, asked at {t}")
        done = t + self.tx_ns(pkt.size_bytes)
        self.busy_until = done
        return done + self.prop_delay_ns


@dataclass
class TopologyConfig:
    """Override knobs for the built-in testbed graph."""

    lan_rate_bps: int = 100_000_000
    lan_delay_ns: int = 1_000_000
    man_rate_bps: int = 2_000_000
    man_delay_ns: int = 0  # calibration knob, per MAN hop
    fifo_queue_capacity: int = 50


SOURCE_HOSTS = ("S0", "S1", "S2", "S3", "S4")
SINK_HOSTS = ("D0", "D1", "D2", "D3", "D4")
EDGE_NODE = "e1"


class Topology:
    """Static node/link/route description (no runtime state)."""

    def __init__(self, nodes: dict[str, str], links: dict[tuple[str, str], Link],
                 routes: dict[tuple[str, str], tuple[str, ...]]):
        self.nodes = nodes
        self.links = links
        self.routes = routes
        for (s, d), path in routes.items():
            if path[0] != s or path[-1] != d or len(set(path)) != len(path):
                raise ValueError(f"route {s}->{d} malformed: {path}")
            for u, v in zip(path, path[1:]):
                if (u, v) not in links:
                    raise ValueError(f"route {s}->{d} uses missing link {u}->{v}")

    def route(self, src: str, dst: str) -> tuple[str, ...]:
        return self.routes[(src, dst)]


def build_testbed(cfg: Optional[TopologyConfig] = None) -> Topology:
    """The dumbbell testbed: five senders and five receivers on fast LAN
    links around a two-hop 2 Mbps bottleneck; e1 is the DiffServ node."""
    cfg = cfg or TopologyConfig()
    if cfg.lan_rate_bps <= 0 or cfg.man_rate_bps <= 0:
        raise ValueError("link rates must be positive")
    if cfg.lan_delay_ns < 0 or cfg.man_delay_ns < 0:
        raise ValueError("link delays must be non-negative")
    nodes = {h: "host" for h in SOURCE_HOSTS}
    nodes.update({h: "host" for h in SINK_HOSTS})
    nodes.update({"e1": "router", "core": "router", "e2": "router"})
    links: dict[tuple[str, str], Link] = {}
    for s in SOURCE_HOSTS:
        links[(s, "e1")] = Link(s, "e1", cfg.lan_rate_bps, cfg.lan_delay_ns)
    links[("e1", "core")] = Link("e1", "core", cfg.man_rate_bps, cfg.man_delay_ns)
    links[("core", "e2")] = Link("core", "e2", cfg.man_rate_bps, cfg.man_delay_ns)
    for d in SINK_HOSTS:
        links[("e2", d)] = Link("e2", d, cfg.lan_rate_bps, cfg.lan_delay_ns)
    routes = {
        (s, d): (s, "e1", "core", "e2", d)
        for s in SOURCE_HOSTS
        for d in SINK_HOSTS
    }
    return Topology(nodes, links, routes)


@dataclass
class CbrSource:
    """Constant-bit-rate source description.

    The inter-emission gap is the frame serialization budget 8*size/rate,
    rounded up to a whole nanosecond so the flow never exceeds its nominal
    rate (a conformant flow stays conformant under an exact-fit policer).
    """

    flow_id: str
    src: str
    dst: str
    rate_bps: int
    packet_size_bytes: int
    start_ns: int = 0
    stop_ns: int = 0

    def __post_init__(self):
        if self.rate_bps <= 0:
            raise ValueError(f"{self.flow_id}: rate must be positive")
        if not MIN_FRAME_BYTES <= self.packet_size_bytes <= MAX_FRAME_BYTES:
            raise ValueError(
                f"{self.flow_id}: frame size {self.packet_size_bytes} outside "
                f"[{MIN_FRAME_BYTES}, {MAX_FRAME_BYTES}]"
            )

    @property
    def gap_ns(self) -> int:
        return tx_time_ns(self.packet_size_bytes, self.rate_bps)


def spawn_background(
    n_sources: int,
    rate_range_bps: tuple[int, int],
    start_range_ns: tuple[int, int],
    seed: int,
    *,
    size_bytes: Optional[int] = None,
    size_schedule: Optional[list[int]] = None,
    src_nodes: tuple[str, ...] = ("S1", "S2", "S3", "S4"),
    dst_nodes: tuple[str, ...] = ("D1", "D2", "D3", "D4"),
    stop_ns: int = 0,
    flow_prefix: str = "bg",
) -> list[CbrSource]:
    """Build n_sources randomized CBR sources from a seeded generator.

    Rates and start times are uniform integer draws over the given inclusive
    ranges; the draw order (rate, then start, per source) is part of the
    reproducibility contract. Sizes are either one fixed value or a schedule
    indexed by source.
    """
    if n_sources < 1:
        raise BadRange("n_sources must be >= 1")
    r_lo, r_hi = rate_range_bps
    s_lo, s_hi = start_range_ns
    if r_lo > r_hi or r_lo <= 0:
        raise BadRange(f"bad rate range [{r_lo}, {r_hi}]")
    if s_lo > s_hi or s_lo < 0:
        raise BadRange(f"bad start range [{s_lo}, {s_hi}]")
    if (size_bytes is None) == (size_schedule is None):
        raise BadRange("exactly one of size_bytes or size_schedule required")
    if size_schedule is not None and len(size_schedule) != n_sources:
        raise BadRange("size_schedule length must equal n_sources")
    rng = Splitmix64(seed)
    out = []
    for i in range(n_sources):
        rate = rng.uniform_int(r_lo, r_hi)
        start = rng.uniform_int(s_lo, s_hi)
        size = size_bytes if size_schedule is None else size_schedule[i]
        out.append(
            CbrSource(
                flow_id=f"{flow_prefix}{i:02d}",
                src=src_nodes[i % len(src_nodes)],
                dst=dst_nodes[i % len(dst_nodes)],
                rate_bps=rate,
                packet_size_bytes=size,
                start_ns=start,
                stop_ns=stop_ns,
            )
        )
    return out


class Counters:
    """Run-wide conservation accounting."""

    __slots__ = ("created", "delivered", "dropped_policer", "dropped_tail",
                 "dropped_llq", "wire")

    def __init__(self):
        self.created = 0
        self.delivered = 0
        self.dropped_policer = 0
        self.dropped_tail = 0
        self.dropped_llq = 0
        self.wire = 0  # packets currently serializing or propagating

    @property
    def dropped(self) -> int:
        return self.dropped_policer + self.dropped_tail + self.dropped_llq


class EgressPort:
    """Driver gluing queues, scheduler and link together.

    Enqueue admits to the per-codepoint FIFO (tail drop past capacity) and
    starts a transmission immediately if the link is free; otherwise a drain
    fires when the current serialization ends. Queues never sit between the
    scheduler and the wire.
    """

    __slots__ = ("engine", "link", "sched", "counters", "monitor", "queues",
                 "caps", "dscp_map", "default_qid", "backlog_total",
                 "drain_pending", "serving_qid", "tail_drops", "_dst_receive")

    def __init__(self, engine: Engine, link: Link, queue_configs: list[QueueConfig],
                 sched: Scheduler, counters: Counters, dst_receive: Callable[[Packet], None],
                 monitor=None):
        self.engine = engine
        self.link = link
        self.sched = sched
        self.counters = counters
        self.monitor = monitor
        self.queues: dict[int, deque] = {}
        self.caps: dict[int, int] = {}
        self.dscp_map: dict[str, int] = {}
        self.default_qid: Optional[int] = None
        for qc in queue_configs:
            self.queues[qc.queue_id] = deque()
            self.caps[qc.queue_id] = qc.capacity_packets
            for dscp in qc.dscp_set:
                if dscp in self.dscp_map:
                    raise ValueError(f"dscp {dscp!r} mapped to more than one queue")
                self.dscp_map[dscp] = qc.queue_id
            if qc.default:
                if self.default_qid is not None:
                    raise ValueError("more than one default queue")
                self.default_qid = qc.queue_id
        self.backlog_total = 0
        self.drain_pending = False
        self.serving_qid: Optional[int] = None
        self.tail_drops: dict[int, int] = {qid: 0 for qid in self.queues}
        self._dst_receive = dst_receive
        sched.bind_port(self)

    # -- queue admission ----------------------------------------------------

    def enqueue(self, pkt: Packet, now: int) -> None:
        qid = self.dscp_map.get(pkt.dscp, self.default_qid)
        if qid is None:
            raise UnmappedDscp(f"dscp {pkt.dscp!r} has no queue on {self.link.src}")
        q = self.queues[qid]
        if len(q) >= self.caps[qid]:
            self.tail_drops[qid] += 1
            self.counters.dropped_tail += 1
            return
        if self.backlog_total == 0 and now >= self.link.busy_until:
            # Busy period boundary: let virtual-time schedulers renormalize.
            self.sched.on_idle(now)
        q.append(pkt)
        self.backlog_total += 1
        self.sched.on_enqueue(qid, pkt, now)
        if self.monitor is not None:
            self.monitor.on_enqueue(self, qid, pkt, now)
        if now >= self.link.busy_until:
            if not self.drain_pending:
                self._start_next(now)
        elif not self.drain_pending:
            self.drain_pending = True
            self.engine.schedule_call(self.link.busy_until, self._drain)

    def drop_head(self, qid: int) -> None:
        """Remove the head of a queue without serving it (LLQ policing)."""
        pkt = self.queues[qid].popleft()
        self.backlog_total -= 1
        self.counters.dropped_llq += 1
        now = self.engine.now()
        self.sched.on_drop(qid, pkt, now)
        if self.monitor is not None:
            self.monitor.on_state_change(self, now)

    # -- transmission -------------------------------------------------------

    def _start_next(self, now: int) -> None:
        qid = self.sched.pick_next(now)
        if qid is None:
            assert self.backlog_total == 0, (
                f"work-conservation violation at {self.link.src}: "
                f"{self.backlog_total} queued but nothing picked"
            )
            self.sched.on_idle(now)
            return
        pkt = self.queues[qid].popleft()
        self.backlog_total -= 1
        self.sched.on_dequeue(qid, pkt, now)
        self.serving_qid = qid
        delivery = self.link.transmit(pkt, now)
        done = self.link.busy_until
        if self.monitor is not None:
            self.monitor.on_tx_start(self, qid, pkt, now, done)
        self.counters.wire += 1
        if self.link.prop_delay_ns:
            self.engine.schedule_call(delivery, self._deliver, pkt)
            if self.backlog_total and not self.drain_pending:
                self.drain_pending = True
                self.engine.schedule_call(done, self._drain)
        else:
            # Zero propagation: serialization end doubles as the drain point.
            self.drain_pending = True
            self.engine.schedule_call(done, self._deliver_and_drain, pkt)

    def _deliver(self, pkt: Packet) -> None:
        self.counters.wire -= 1
        self._dst_receive(pkt)

    def _drain(self) -> None:
        self.drain_pending = False
        if self.backlog_total:
            self._start_next(self.engine.now())

    def _deliver_and_drain(self, pkt: Packet) -> None:
        self.counters.wire -= 1
        self._dst_receive(pkt)
        self.drain_pending = False
        if self.backlog_total:
            self._start_next(self.engine.now())

    # -- introspection ------------------------------------------------------

    def active_sessions(self, now: int) -> int:
        """Queues currently backlogged or owning the packet in service."""
        n = 0
        serving = self.serving_qid if now < self.link.busy_until else None
        for qid, q in self.queues.items():
            if q or qid == serving:
                n += 1
        return n

    def queued_packets(self) -> int:
        return self.backlog_total


class RouterNode:
    """Forwards by flow id; optionally runs the conditioning pipeline first."""

    __slots__ = ("node_id", "engine", "counters", "conditioner", "port_by_flow")

    def __init__(self, node_id: str, engine: Engine, counters: Counters,
                 conditioner: Optional[Conditioner] = None):
        self.node_id = node_id
        self.engine = engine
        self.counters = counters
        self.conditioner = conditioner
        self.port_by_flow: dict[str, EgressPort] = {}

    def receive(self, pkt: Packet) -> None:
        now = self.engine.now()
        if self.conditioner is not None and not self.conditioner.condition(pkt, now):
            self.counters.dropped_policer += 1
            return
        self.port_by_flow[pkt.flow_id].enqueue(pkt, now)


class HostNode:
    """Terminal host: records deliveries and fans them out to observers."""

    __slots__ = ("node_id", "engine", "counters", "observers", "_last_seq", "delivery_log")

    def __init__(self, node_id: str, engine: Engine, counters: Counters,
                 observers: list, delivery_log: Optional[list] = None):
        self.node_id = node_id
        self.engine = engine
        self.counters = counters
        self.observers = observers
        self._last_seq: dict[str, int] = {}
        self.delivery_log = delivery_log

    def receive(self, pkt: Packet) -> None:
        now = self.engine.now()
        last = self._last_seq.get(pkt.flow_id, -1)
        assert pkt.seq_no > last, (
            f"duplicate or reordered delivery {pkt.flow_id}#{pkt.seq_no} at {self.node_id}"
        )
        self._last_seq[pkt.flow_id] = pkt.seq_no
        self.counters.delivered += 1
        rec = DeliveryRecord(pkt.flow_id, pkt.seq_no, pkt.created_at, now)
        if self.delivery_log is not None:
            self.delivery_log.append(rec)
        for obs in self.observers:
            obs.record(rec)


class SourceProcess:
    """Emits one CBR flow into its host's egress port."""

    __slots__ = ("engine", "counters", "port", "flow_id", "size", "gap", "stop", "seq")

    def __init__(self, engine: Engine, counters: Counters, port: EgressPort, spec: CbrSource):
        self.engine = engine
        self.counters = counters
        self.port = port
        self.flow_id = spec.flow_id
        self.size = spec.packet_size_bytes
        self.gap = spec.gap_ns
        self.stop = spec.stop_ns
        self.seq = 0

    def start(self, start_ns: int) -> None:
        if start_ns < self.stop:
            self.engine.schedule_call(start_ns, self._emit)

    def _emit(self) -> None:
        now = self.engine.now()
        pkt = Packet(self.flow_id, self.seq, self.size, DSCP_UNMARKED, now)
        self.seq += 1
        self.counters.created += 1
        self.port.enqueue(pkt, now)
        nxt = now + self.gap
        if nxt < self.stop:
            self.engine.schedule_call(nxt, self._emit)
