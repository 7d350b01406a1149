"""Scenario files: schema, parsing and validation.

Scenarios are YAML (schema_version 1). Times are given in seconds and
converted once to integer nanoseconds; rates are integer bits per second;
queue weights accept integers or exact "p/q" strings (floats are parsed
through their decimal representation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import yaml

from .diffserv import OUT_ACTION_DROP, OUT_ACTION_MARK, QueueConfig
from .engine import ns_from_s
from .network import SINK_HOSTS, SOURCE_HOSTS, TopologyConfig
from .packet import MAX_FRAME_BYTES, MIN_FRAME_BYTES
from .schedulers import SCHEDULER_KINDS

SCHEMA_VERSION = 1


class ScenarioError(Exception):
    """Scenario file is structurally or semantically invalid."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class FlowConfig:
    flow_id: str
    src: str
    dst: str
    rate_bps: int
    size_bytes: int
    start_ns: int = 0
    stop_ns: Optional[int] = None  # defaults to run duration


@dataclass
class BackgroundConfig:
    n_sources: int
    rate_range_bps: tuple[int, int]
    start_range_ns: tuple[int, int]
    size_bytes: Optional[int] = None
    size_schedule: Optional[list[int]] = None
    src_nodes: tuple[str, ...] = ("S1", "S2", "S3", "S4")
    dst_nodes: tuple[str, ...] = ("D1", "D2", "D3", "D4")


@dataclass
class MeterConfig:
    cir_bps: int
    cbs_bytes: int


@dataclass
class PolicyConfig:
    match: tuple[str, ...]
    aggregate_id: str
    meter: Optional[MeterConfig]
    in_dscp: str
    out_dscp: str = "BE-out"
    out_action: str = OUT_ACTION_DROP


@dataclass
class QueueSetConfig:
    scheduler: str
    queues: list[QueueConfig]
    exceed_action: str = "drop"  # llq only


@dataclass
class RunConfig:
    duration_ns: int
    seed: int = 0
    warmup_ns: int = 10_000_000_000


@dataclass
class BinUnit:
    """Histogram bin width rule: measured minimum delay, a fixed width in ns,
    or the serialization time of a reference frame at the bottleneck rate."""

    mode: str  # "min_owd" | "ns" | "tx_unit"
    value: Optional[int] = None


@dataclass
class OutputConfig:
    kind: str  # "owd" | "ipdv"
    name: str
    flow_filter: Optional[tuple[str, ...]] = None
    bin_unit: BinUnit = field(default_factory=lambda: BinUnit("min_owd"))


@dataclass
class Scenario:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    flows: list[FlowConfig] = field(default_factory=list)
    background: Optional[BackgroundConfig] = None
    policy: list[PolicyConfig] = field(default_factory=list)
    queue_set: QueueSetConfig = None
    run: RunConfig = None
    outputs: list[OutputConfig] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION


_HOSTS = set(SOURCE_HOSTS) | set(SINK_HOSTS)


def _weight(v, path, problems) -> Optional[Fraction]:
    if v is None:
        return None
    try:
        if isinstance(v, bool):
            raise ValueError
        if isinstance(v, int):
            return Fraction(v)
        if isinstance(v, float):
            return Fraction(str(v))
        if isinstance(v, str):
            return Fraction(v)
        raise ValueError
    except (ValueError, ZeroDivisionError):
        problems.append(f"{path}: bad weight {v!r}")
        return None


def _require(mapping, key, path, problems, default=None, required=False):
    if key not in mapping:
        if required:
            problems.append(f"{path}.{key}: missing")
        return default
    return mapping[key]


def scenario_from_dict(doc: dict) -> Scenario:
    """Parse a raw scenario document; raises ScenarioError on structure problems."""
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ScenarioError("scenario: top level must be a mapping")
    ver = doc.get("schema_version")
    if ver != SCHEMA_VERSION:
        problems.append(f"schema_version: expected {SCHEMA_VERSION}, got {ver!r}")

    topo_doc = doc.get("topology") or {}
    topo = TopologyConfig(
        lan_rate_bps=int(topo_doc.get("lan_rate_bps", 100_000_000)),
        lan_delay_ns=int(topo_doc.get("lan_delay_ns", 1_000_000)),
        man_rate_bps=int(topo_doc.get("man_rate_bps", 2_000_000)),
        man_delay_ns=int(topo_doc.get("man_delay_ns", 0)),
        fifo_queue_capacity=int(topo_doc.get("fifo_queue_capacity", 50)),
    )

    run_doc = doc.get("run") or {}
    run = RunConfig(
        duration_ns=ns_from_s(_require(run_doc, "duration_s", "run", problems, 0, required=True) or 0),
        seed=int(run_doc.get("seed", 0)),
        warmup_ns=ns_from_s(run_doc.get("warmup_s", 10)),
    )

    flows = []
    for i, f in enumerate(doc.get("flows") or []):
        path = f"flows[{i}]"
        flows.append(
            FlowConfig(
                flow_id=str(_require(f, "flow_id", path, problems, f"flow{i}", required=True)),
                src=str(_require(f, "src", path, problems, "", required=True)),
                dst=str(_require(f, "dst", path, problems, "", required=True)),
                rate_bps=int(_require(f, "rate_bps", path, problems, 0, required=True) or 0),
                size_bytes=int(_require(f, "size_bytes", path, problems, 0, required=True) or 0),
                start_ns=ns_from_s(f.get("start_s", 0)),
                stop_ns=None if f.get("stop_s") is None else ns_from_s(f["stop_s"]),
            )
        )

    background = None
    bg = doc.get("background")
    if bg:
        rr = bg.get("rate_range_bps", [0, 0])
        sr = bg.get("start_range_s", [0, 0])
        background = BackgroundConfig(
            n_sources=int(bg.get("n_sources", 0)),
            rate_range_bps=(int(rr[0]), int(rr[1])),
            start_range_ns=(ns_from_s(sr[0]), ns_from_s(sr[1])),
            size_bytes=None if bg.get("size_bytes") is None else int(bg["size_bytes"]),
            size_schedule=None if bg.get("size_schedule") is None else [int(x) for x in bg["size_schedule"]],
            src_nodes=tuple(bg.get("src_nodes", ("S1", "S2", "S3", "S4"))),
            dst_nodes=tuple(bg.get("dst_nodes", ("D1", "D2", "D3", "D4"))),
        )

    policy = []
    for i, p in enumerate(doc.get("policy") or []):
        path = f"policy[{i}]"
        meter = None
        m = p.get("meter")
        if m:
            meter = MeterConfig(cir_bps=int(m.get("cir_bps", 0)), cbs_bytes=int(m.get("cbs_bytes", 0)))
        policy.append(
            PolicyConfig(
                match=tuple(_require(p, "match", path, problems, (), required=True) or ()),
                aggregate_id=str(p.get("aggregate", f"agg{i}")),
                meter=meter,
                in_dscp=str(_require(p, "in_dscp", path, problems, "", required=True)),
                out_dscp=str(p.get("out_dscp", "BE-out")),
                out_action=str(p.get("out_action", OUT_ACTION_DROP)),
            )
        )

    qs_doc = doc.get("queues") or {}
    queues = []
    for i, q in enumerate(qs_doc.get("queues") or []):
        path = f"queues.queues[{i}]"
        queues.append(
            QueueConfig(
                queue_id=int(_require(q, "queue_id", path, problems, i, required=True) if q.get("queue_id") is not None else i),
                dscp_set=frozenset(q.get("dscp", ())),
                capacity_packets=int(q.get("capacity", 50)),
                weight=_weight(q.get("weight"), path, problems),
                priority_level=None if q.get("priority") is None else int(q["priority"]),
                default=bool(q.get("default", False)),
                llq_priority=bool(q.get("llq_priority", False)),
                llq_cir_bps=None if q.get("llq_cir_bps") is None else int(q["llq_cir_bps"]),
                llq_cbs_bytes=None if q.get("llq_cbs_bytes") is None else int(q["llq_cbs_bytes"]),
            )
        )
    queue_set = QueueSetConfig(
        scheduler=str(qs_doc.get("scheduler", "fifo")),
        queues=queues,
        exceed_action=str(qs_doc.get("exceed_action", "drop")),
    )

    outputs = []
    for i, o in enumerate(doc.get("outputs") or []):
        path = f"outputs[{i}]"
        bu_doc = o.get("bin_unit", "min_owd")
        if isinstance(bu_doc, str):
            bu = BinUnit(mode=bu_doc)
        elif isinstance(bu_doc, dict) and "ns" in bu_doc:
            bu = BinUnit(mode="ns", value=int(bu_doc["ns"]))
        elif isinstance(bu_doc, dict) and "tx_unit_bytes" in bu_doc:
            bu = BinUnit(mode="tx_unit", value=int(bu_doc["tx_unit_bytes"]))
        else:
            problems.append(f"{path}.bin_unit: unrecognized {bu_doc!r}")
            bu = BinUnit("min_owd")
        ff = o.get("flow_filter")
        outputs.append(
            OutputConfig(
                kind=str(_require(o, "kind", path, problems, "owd", required=True)),
                name=str(o.get("name", f"out{i}")),
                flow_filter=None if ff is None else tuple(ff),
                bin_unit=bu,
            )
        )

    if problems:
        raise ScenarioError(problems)
    return Scenario(
        topology=topo,
        flows=flows,
        background=background,
        policy=policy,
        queue_set=queue_set,
        run=run,
        outputs=outputs,
        schema_version=SCHEMA_VERSION,
    )


def validate(sc: Scenario) -> list[str]:
    """Semantic checks; returns a list of field-path diagnostics (empty = ok)."""
    p: list[str] = []
    t = sc.topology
    if t.lan_rate_bps <= 0 or t.man_rate_bps <= 0:
        p.append("topology: link rates must be positive")
    if t.lan_delay_ns < 0 or t.man_delay_ns < 0:
        p.append("topology: link delays must be non-negative")
    if t.fifo_queue_capacity <= 0:
        p.append("topology.fifo_queue_capacity: must be positive")

    if sc.run is None:
        p.append("run: missing")
        return p
    if sc.run.duration_ns < 0 or sc.run.warmup_ns < 0 or sc.run.duration_ns < sc.run.warmup_ns:
        p.append("run: need duration >= warmup >= 0")
    if sc.run.seed < 0:
        p.append("run.seed: must be non-negative")

    flow_ids = set()
    for i, f in enumerate(sc.flows):
        path = f"flows[{i}]"
        if f.flow_id in flow_ids:
            p.append(f"{path}.flow_id: duplicate {f.flow_id!r}")
        flow_ids.add(f.flow_id)
        if f.src not in _HOSTS:
            p.append(f"{path}.src: unknown node {f.src!r}")
        if f.dst not in _HOSTS:
            p.append(f"{path}.dst: unknown node {f.dst!r}")
        if f.rate_bps <= 0:
            p.append(f"{path}.rate_bps: must be positive")
        if not MIN_FRAME_BYTES <= f.size_bytes <= MAX_FRAME_BYTES:
            p.append(f"{path}.size_bytes: {f.size_bytes} outside [{MIN_FRAME_BYTES}, {MAX_FRAME_BYTES}]")
        if f.start_ns < 0:
            p.append(f"{path}.start_s: must be non-negative")

    bg = sc.background
    if bg is not None:
        if bg.n_sources < 1:
            p.append("background.n_sources: must be >= 1")
        if bg.rate_range_bps[0] > bg.rate_range_bps[1] or bg.rate_range_bps[0] <= 0:
            p.append("background.rate_range_bps: bad range")
        if bg.start_range_ns[0] > bg.start_range_ns[1] or bg.start_range_ns[0] < 0:
            p.append("background.start_range_s: bad range")
        if (bg.size_bytes is None) == (bg.size_schedule is None):
            p.append("background: exactly one of size_bytes or size_schedule")
        sizes = bg.size_schedule if bg.size_schedule is not None else (
            [bg.size_bytes] if bg.size_bytes is not None else []
        )
        for s in sizes:
            if not MIN_FRAME_BYTES <= s <= MAX_FRAME_BYTES:
                p.append(f"background: frame size {s} outside [{MIN_FRAME_BYTES}, {MAX_FRAME_BYTES}]")
        if bg.size_schedule is not None and len(bg.size_schedule) != bg.n_sources:
            p.append("background.size_schedule: length must equal n_sources")
        for n in tuple(bg.src_nodes) + tuple(bg.dst_nodes):
            if n not in _HOSTS:
                p.append(f"background: unknown node {n!r}")

    matched = set()
    for i, pol in enumerate(sc.policy):
        path = f"policy[{i}]"
        for f in pol.match:
            if f not in flow_ids and not f.startswith("bg"):
                p.append(f"{path}.match: unknown flow {f!r}")
            if f in matched:
                p.append(f"{path}.match: flow {f!r} matched twice")
            matched.add(f)
        if pol.meter is not None and (pol.meter.cir_bps <= 0 or pol.meter.cbs_bytes <= 0):
            p.append(f"{path}.meter: cir_bps and cbs_bytes must be positive")
        if pol.out_action not in (OUT_ACTION_DROP, OUT_ACTION_MARK):
            p.append(f"{path}.out_action: must be drop or mark")

    qs = sc.queue_set
    if qs is None or not qs.queues:
        p.append("queues: at least one queue required")
        return p
    if qs.scheduler not in SCHEDULER_KINDS:
        p.append(f"queues.scheduler: unknown kind {qs.scheduler!r}")
    seen_q = set()
    seen_dscp = set()
    defaults = 0
    for i, q in enumerate(qs.queues):
        path = f"queues.queues[{i}]"
        if q.queue_id in seen_q:
            p.append(f"{path}.queue_id: duplicate {q.queue_id}")
        seen_q.add(q.queue_id)
        for d in q.dscp_set:
            if d in seen_dscp:
                p.append(f"{path}.dscp: {d!r} mapped to more than one queue")
            seen_dscp.add(d)
        if q.capacity_packets <= 0:
            p.append(f"{path}.capacity: must be positive")
        if q.weight is not None and q.weight <= 0:
            p.append(f"{path}.weight: must be positive")
        defaults += 1 if q.default else 0
    if defaults > 1:
        p.append("queues: more than one default queue")
    if qs.scheduler == "pq":
        levels = [q.priority_level for q in qs.queues]
        if any(lv is None for lv in levels) or len(set(levels)) != len(levels):
            p.append("queues: pq needs a unique priority per queue")
    if qs.scheduler in ("scfq", "wfq", "sfq", "wf2q+", "pgps"):
        if any(q.weight is None for q in qs.queues):
            p.append(f"queues: {qs.scheduler} needs a weight per queue")
    if qs.scheduler in ("wrr", "wirr"):
        for q in qs.queues:
            if q.weight is None or int(q.weight) != q.weight or q.weight < 1:
                p.append("queues: wrr/wirr need positive integer weights")
    if qs.scheduler == "llq":
        prio = [q for q in qs.queues if q.llq_priority]
        if len(prio) != 1:
            p.append("queues: llq needs exactly one llq_priority queue")
        elif prio[0].llq_cir_bps is None or prio[0].llq_cbs_bytes is None:
            p.append("queues: llq priority queue needs llq_cir_bps and llq_cbs_bytes")
        others = [q for q in qs.queues if not q.llq_priority]
        if any(q.weight is None for q in others):
            p.append("queues: llq non-priority queues need weights")

    names = set()
    for i, o in enumerate(sc.outputs):
        path = f"outputs[{i}]"
        if o.kind not in ("owd", "ipdv"):
            p.append(f"{path}.kind: must be owd or ipdv")
        if o.name in names:
            p.append(f"{path}.name: duplicate {o.name!r}")
        names.add(o.name)
        if o.flow_filter is not None:
            for f in o.flow_filter:
                if f not in flow_ids and not f.startswith("bg"):
                    p.append(f"{path}.flow_filter: unknown flow {f!r}")
        if o.bin_unit.mode not in ("min_owd", "ns", "tx_unit"):
            p.append(f"{path}.bin_unit: unknown mode {o.bin_unit.mode!r}")
        elif o.bin_unit.mode in ("ns", "tx_unit") and (o.bin_unit.value is None or o.bin_unit.value <= 0):
            p.append(f"{path}.bin_unit: needs a positive value")
    return p


def load_scenario(path: str) -> Scenario:
    """Load, parse and validate a YAML scenario file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    sc = scenario_from_dict(doc)
    problems = validate(sc)
    if problems:
        raise ScenarioError(problems)
    return sc
