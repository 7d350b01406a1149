"""Experiment harness: the three testbed studies and their CSV outputs.

  a: delay vs. frame size for a fair-queuing edge, swept over the
     service-to-arrival ratio (STAR) of the expedited aggregate
  b: expedited delay and jitter vs. best-effort frame size under strict
     priority
  c: strict priority vs. fair queuing, averages and frequency distributions

Every CSV starts with a commented metadata block (seed, generator id, queue
capacities, jitter convention, calibration knobs) so a run is reproducible
from its output alone. Identical (scenario, seed) pairs produce byte-equal
files regardless of worker count.
"""

from __future__ import annotations

import multiprocessing
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .diffserv import QueueConfig
from .engine import NS_PER_SEC, tx_time_ns
from .metrics import DelayStats
from .network import TopologyConfig
from .packet import DSCP_BE_IN, DSCP_BE_OUT, DSCP_EF, DSCP_UNMARKED
from .rng import PRNG_ID
from .runner import run_scenario
from .scenario import (
    BackgroundConfig,
    BinUnit,
    FlowConfig,
    MeterConfig,
    OutputConfig,
    PolicyConfig,
    QueueSetConfig,
    RunConfig,
    Scenario,
)

DEFAULT_SEED = 42
DEFAULT_DURATION_S = 200
EF_RATE_BPS = 300_000
MAN_RATE_BPS = 2_000_000
BACKGROUND_SOURCES = 37  # ~2 Mbps aggregate at the 55 Kbps mean of U[10K, 100K]
BACKGROUND_RATE_RANGE = (10_000, 100_000)
BACKGROUND_START_RANGE_NS = (0, 5 * NS_PER_SEC)
QUEUE_CAPACITY = 50

EF_SIZES_A = (128, 256, 512, 1024, 1280, 1518)
STARS_A = (1, 2, 4, 8)
EF_SIZES_B = (128, 1024)
BE_SIZES_B = tuple(range(100, 1451, 50))
EF_SIZES_C = (64, 128, 256, 384, 512, 640, 768, 896, 1024, 1152, 1280, 1408, 1472, 1518)
HIST_SIZES_C = (128, 1518)
SCHEDULERS_C = ("pq", "scfq")

# Largest service fraction the expedited queue may take; the best-effort
# queue always keeps a positive share ("weights > 0").
MAX_EF_SHARE = Fraction(19, 20)


class Infeasible(Exception):
    """The requested service rate exceeds the line rate."""


def star_to_weight(a_r_bps: int, l_r_bps: int, star) -> Fraction:
    """Service fraction of the line rate from the service-to-arrival ratio.

    S_r * l_r = A_r * STAR, so S_r = A_r * STAR / l_r.
    """
    if a_r_bps <= 0 or l_r_bps <= 0 or star <= 0:
        raise Infeasible("rates and star must be positive")
    s_r = Fraction(a_r_bps) * Fraction(star) / l_r_bps
    if s_r > 1:
        raise Infeasible(f"A_r*STAR = {a_r_bps * star} exceeds line rate {l_r_bps}")
    return s_r


def effective_ef_share(a_r_bps: int, l_r_bps: int, star) -> Fraction:
    """star_to_weight with the share capped below 1 for infeasible sweeps."""
    try:
        return star_to_weight(a_r_bps, l_r_bps, star)
    except Infeasible:
        return MAX_EF_SHARE


# --------------------------------------------------------------------------
# scenario builders
# --------------------------------------------------------------------------

_BE_DSCPS = frozenset({DSCP_BE_IN, DSCP_BE_OUT, DSCP_UNMARKED})


def _ef_flow(size_bytes: int) -> FlowConfig:
    return FlowConfig(flow_id="ef0", src="S0", dst="D0",
                      rate_bps=EF_RATE_BPS, size_bytes=size_bytes)


def _ef_policy(size_bytes: int) -> PolicyConfig:
    # Committed burst of one packet: the bucket holds exactly one frame.
    return PolicyConfig(match=("ef0",), aggregate_id="ef",
                        meter=MeterConfig(cir_bps=EF_RATE_BPS, cbs_bytes=size_bytes),
                        in_dscp=DSCP_EF, out_action="drop")


def _outputs(ef_size: int) -> list[OutputConfig]:
    return [
        OutputConfig(kind="owd", name="ef_owd", flow_filter=("ef0",),
                     bin_unit=BinUnit("min_owd")),
        OutputConfig(kind="ipdv", name="ef_ipdv", flow_filter=("ef0",),
                     bin_unit=BinUnit("tx_unit", ef_size)),
    ]


def _fair_queues(ef_share: Fraction) -> list[QueueConfig]:
    return [
        QueueConfig(queue_id=0, dscp_set=frozenset({DSCP_EF}),
                    capacity_packets=QUEUE_CAPACITY, weight=ef_share),
        QueueConfig(queue_id=1, dscp_set=_BE_DSCPS, capacity_packets=QUEUE_CAPACITY,
                    weight=1 - ef_share, default=True),
    ]


def _priority_queues() -> list[QueueConfig]:
    return [
        QueueConfig(queue_id=0, dscp_set=frozenset({DSCP_EF}),
                    capacity_packets=QUEUE_CAPACITY, priority_level=0),
        QueueConfig(queue_id=1, dscp_set=_BE_DSCPS, capacity_packets=QUEUE_CAPACITY,
                    priority_level=1, default=True),
    ]


def _uniform_background(size_bytes: int) -> BackgroundConfig:
    return BackgroundConfig(
        n_sources=BACKGROUND_SOURCES,
        rate_range_bps=BACKGROUND_RATE_RANGE,
        start_range_ns=BACKGROUND_START_RANGE_NS,
        size_bytes=size_bytes,
    )


def _stepped_background() -> BackgroundConfig:
    sizes = list(range(64, 1473, 64))  # 23 flows, 64-byte increments
    return BackgroundConfig(
        n_sources=len(sizes),
        rate_range_bps=(100_000, 100_000),
        start_range_ns=BACKGROUND_START_RANGE_NS,
        size_schedule=sizes,
    )


def scenario_a(ef_size: int, star: int, seed: int, man_delay_ns: int = 0,
               duration_s: float = DEFAULT_DURATION_S) -> Scenario:
    share = effective_ef_share(EF_RATE_BPS, MAN_RATE_BPS, star)
    return Scenario(
        topology=TopologyConfig(man_delay_ns=man_delay_ns),
        flows=[_ef_flow(ef_size)],
        background=_uniform_background(1000),
        policy=[_ef_policy(ef_size)],
        queue_set=QueueSetConfig(scheduler="scfq", queues=_fair_queues(share)),
        run=RunConfig(duration_ns=int(duration_s * NS_PER_SEC), seed=seed, warmup_ns=0),
        outputs=_outputs(ef_size),
    )


def scenario_b(ef_size: int, be_size: int, seed: int, man_delay_ns: int = 0,
               duration_s: float = DEFAULT_DURATION_S) -> Scenario:
    return Scenario(
        topology=TopologyConfig(man_delay_ns=man_delay_ns),
        flows=[_ef_flow(ef_size)],
        background=_uniform_background(be_size),
        policy=[_ef_policy(ef_size)],
        queue_set=QueueSetConfig(scheduler="pq", queues=_priority_queues()),
        run=RunConfig(duration_ns=int(duration_s * NS_PER_SEC), seed=seed, warmup_ns=0),
        outputs=_outputs(ef_size),
    )


def scenario_c(scheduler: str, ef_size: int, seed: int, man_delay_ns: int = 0,
               duration_s: float = DEFAULT_DURATION_S) -> Scenario:
    if scheduler == "pq":
        qs = QueueSetConfig(scheduler="pq", queues=_priority_queues())
    else:
        share = star_to_weight(EF_RATE_BPS, MAN_RATE_BPS, 1)
        qs = QueueSetConfig(scheduler=scheduler, queues=_fair_queues(share))
    return Scenario(
        topology=TopologyConfig(man_delay_ns=man_delay_ns),
        flows=[_ef_flow(ef_size)],
        background=_stepped_background(),
        policy=[_ef_policy(ef_size)],
        queue_set=qs,
        run=RunConfig(duration_ns=int(duration_s * NS_PER_SEC), seed=seed, warmup_ns=0),
        outputs=_outputs(ef_size),
    )


# --------------------------------------------------------------------------
# sweep execution
# --------------------------------------------------------------------------


def _run_point(payload):
    sc, want_hists, label = payload
    res = run_scenario(sc)
    owd = res.owd["ef_owd"].stats
    ipdv = res.ipdv["ef_ipdv"]
    out = {
        "label": label,
        "owd": (owd.count, owd.sum_ns, owd.min_ns, owd.max_ns),
        "ipdv_abs": (ipdv.stats_abs.count, ipdv.stats_abs.sum_ns,
                     ipdv.stats_abs.min_ns, ipdv.stats_abs.max_ns),
        "ipdv_signed_sum": ipdv.stats_signed.sum_ns if ipdv.stats_signed.count else 0,
        "created": res.created,
        "delivered": res.delivered,
        "dropped_policer": res.dropped_policer,
        "dropped_tail": res.dropped_tail,
        "conservation_ok": res.conservation_ok,
        "events": res.summary.events,
    }
    if res.bound_monitor is not None:
        out["bound_checked"] = res.bound_monitor.checked
        out["bound_violations"] = res.bound_monitor.violations
    if res.pq_monitor is not None:
        out["pq_checked"] = res.pq_monitor.checked
        out["pq_violations"] = res.pq_monitor.violations
    if want_hists:
        out["owd_counts"] = owd.counts
        out["ipdv_signed_counts"] = ipdv.stats_signed.counts
    return out


def _run_sweep(payloads, jobs: Optional[int]):
    if jobs is None:
        jobs = os.cpu_count() or 1
    jobs = max(1, min(jobs, len(payloads)))
    if jobs == 1:
        return [_run_point(p) for p in payloads]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=jobs) as pool:
        return pool.map(_run_point, payloads, chunksize=1)


def stats_from_counts(counts: dict[int, int]) -> DelayStats:
    ds = DelayStats()
    for v, n in counts.items():
        ds.count += n
        ds.sum_ns += v * n
        if ds.min_ns is None or v < ds.min_ns:
            ds.min_ns = v
        if ds.max_ns is None or v > ds.max_ns:
            ds.max_ns = v
    ds.counts = dict(counts)
    return ds


# --------------------------------------------------------------------------
# CSV formatting (integer/rational decimal strings, platform independent)
# --------------------------------------------------------------------------


def fmt_s(ns: int) -> str:
    """Integer nanoseconds as seconds with 9 decimals."""
    sign = "-" if ns < 0 else ""
    a = abs(ns)
    return f"{sign}{a // NS_PER_SEC}.{a % NS_PER_SEC:09d}"


def fmt_mean_s(count: int, sum_ns: int) -> str:
    """Exact mean (sum/count ns) as seconds with 12 decimals, half-even."""
    ps = round(Fraction(sum_ns * 1000, count))
    sign = "-" if ps < 0 else ""
    a = abs(ps)
    return f"{sign}{a // 10**12}.{a % 10**12:012d}"


def fmt_frequency(fr: Fraction) -> str:
    scaled = round(fr * 10**12)
    return f"{scaled // 10**12}.{scaled % 10**12:012d}"


def write_csv(path: str, meta: list[tuple[str, object]], header: list[str],
              rows: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in meta:
            fh.write(f"# {k}={v}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _common_meta(experiment: str, seed: int, repeats: int, man_delay_ns: int,
                 duration_s: float) -> list[tuple[str, object]]:
    return [
        ("schema_version", 1),
        ("experiment", experiment),
        ("seed", seed),
        ("repeats", repeats),
        ("prng", PRNG_ID),
        ("duration_s", duration_s),
        ("warmup_s", 0),
        ("lan_rate_bps", 100_000_000),
        ("lan_delay_ns", 1_000_000),
        ("man_rate_bps", MAN_RATE_BPS),
        ("man_delay_ns", man_delay_ns),
        ("man_hops", 2),
        ("queue_capacity_packets", QUEUE_CAPACITY),
        ("ef_rate_bps", EF_RATE_BPS),
        ("ef_policer", f"cir={EF_RATE_BPS}bps,cbs=1pkt,out=drop"),
        ("ipdv_convention", "mean_abs_consecutive"),
        ("ipdv_hist_stream", "signed"),
    ]


def _stat_row(prefix: list[str], stat: tuple[int, int, Optional[int], Optional[int]]) -> list[str]:
    count, sum_ns, min_ns, max_ns = stat
    if count == 0:
        return prefix + ["0", "", "", ""]
    return prefix + [str(count), fmt_mean_s(count, sum_ns), fmt_s(min_ns), fmt_s(max_ns)]


@dataclass
class ExperimentResult:
    csv_paths: list[str]
    summaries: list[dict]


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


def run_experiment_a(out_dir: str, seed: int = DEFAULT_SEED, repeats: int = 1,
                     jobs: Optional[int] = None, man_delay_ns: int = 0,
                     duration_s: float = DEFAULT_DURATION_S) -> ExperimentResult:
    os.makedirs(out_dir, exist_ok=True)
    payloads = []
    for rep in range(repeats):
        run_seed = seed + rep
        for star in STARS_A:
            for size in EF_SIZES_A:
                sc = scenario_a(size, star, run_seed, man_delay_ns, duration_s)
                payloads.append((sc, False, {"ef_size": size, "star": star, "seed": run_seed}))
    results = _run_sweep(payloads, jobs)

    meta = _common_meta("a", seed, repeats, man_delay_ns, duration_s)
    meta += [
        ("scheduler", "scfq"),
        ("ef_sizes_bytes", " ".join(map(str, EF_SIZES_A))),
        ("star_values", " ".join(map(str, STARS_A))),
        ("ef_share_cap", str(MAX_EF_SHARE)),
        ("background", f"n={BACKGROUND_SOURCES},rate=U[10000,100000]bps,start=U[0,5]s,size=1000B"),
        ("bound_violations_total", sum(r.get("bound_violations", 0) for r in results)),
    ]
    header = ["ef_size_bytes", "star", "seed", "count", "mean_s", "min_s", "max_s"]
    owd_rows = []
    ipdv_rows = []
    for r in results:
        lab = r["label"]
        prefix = [str(lab["ef_size"]), str(lab["star"]), str(lab["seed"])]
        owd_rows.append(_stat_row(prefix, r["owd"]))
        ipdv_rows.append(_stat_row(prefix, r["ipdv_abs"]))
    p1 = os.path.join(out_dir, "owd_vs_size_per_star.csv")
    p2 = os.path.join(out_dir, "ipdv_vs_star.csv")
    write_csv(p1, meta, header, owd_rows)
    write_csv(p2, meta, header, ipdv_rows)
    return ExperimentResult([p1, p2], results)


def run_experiment_b(out_dir: str, seed: int = DEFAULT_SEED, repeats: int = 1,
                     jobs: Optional[int] = None, man_delay_ns: int = 0,
                     duration_s: float = DEFAULT_DURATION_S,
                     ef_sizes: tuple[int, ...] = EF_SIZES_B) -> ExperimentResult:
    os.makedirs(out_dir, exist_ok=True)
    payloads = []
    for rep in range(repeats):
        run_seed = seed + rep
        for ef_size in ef_sizes:
            for be_size in BE_SIZES_B:
                sc = scenario_b(ef_size, be_size, run_seed, man_delay_ns, duration_s)
                payloads.append((sc, False, {"ef_size": ef_size, "be_size": be_size,
                                             "seed": run_seed}))
    results = _run_sweep(payloads, jobs)

    meta = _common_meta("b", seed, repeats, man_delay_ns, duration_s)
    meta += [
        ("scheduler", "pq"),
        ("ef_sizes_bytes", " ".join(map(str, ef_sizes))),
        ("be_sizes_bytes", " ".join(map(str, BE_SIZES_B))),
        ("background", f"n={BACKGROUND_SOURCES},rate=U[10000,100000]bps,start=U[0,5]s,size=swept"),
        ("pq_wait_violations_total", sum(r.get("pq_violations", 0) for r in results)),
    ]
    header = ["ef_size_bytes", "be_size_bytes", "seed", "count", "mean_s", "min_s", "max_s"]
    owd_rows = []
    ipdv_rows = []
    for r in results:
        lab = r["label"]
        prefix = [str(lab["ef_size"]), str(lab["be_size"]), str(lab["seed"])]
        owd_rows.append(_stat_row(prefix, r["owd"]))
        ipdv_rows.append(_stat_row(prefix, r["ipdv_abs"]))
    p1 = os.path.join(out_dir, "owd_vs_be_size.csv")
    p2 = os.path.join(out_dir, "ipdv_vs_be_size.csv")
    write_csv(p1, meta, header, owd_rows)
    write_csv(p2, meta, header, ipdv_rows)
    return ExperimentResult([p1, p2], results)


def run_experiment_c(out_dir: str, seed: int = DEFAULT_SEED, repeats: int = 1,
                     jobs: Optional[int] = None, man_delay_ns: int = 0,
                     duration_s: float = DEFAULT_DURATION_S) -> ExperimentResult:
    os.makedirs(out_dir, exist_ok=True)
    payloads = []
    for rep in range(repeats):
        run_seed = seed + rep
        for sched in SCHEDULERS_C:
            for size in EF_SIZES_C:
                want_hists = size in HIST_SIZES_C
                sc = scenario_c(sched, size, run_seed, man_delay_ns, duration_s)
                payloads.append((sc, want_hists, {"scheduler": sched, "ef_size": size,
                                                  "seed": run_seed}))
    results = _run_sweep(payloads, jobs)

    meta = _common_meta("c", seed, repeats, man_delay_ns, duration_s)
    meta += [
        ("schedulers", " ".join(SCHEDULERS_C)),
        ("ef_sizes_bytes", " ".join(map(str, EF_SIZES_C))),
        ("ef_size_grid", "harness-chosen"),
        ("scfq_ef_share", "3/20"),
        ("background", "n=23,rate=100000bps,start=U[0,5]s,sizes=64..1472step64"),
        ("owd_hist_unit", "run_min_owd"),
        ("ipdv_hist_unit", "ef_tx_time_at_bottleneck"),
        ("bound_violations_total", sum(r.get("bound_violations", 0) for r in results)),
    ]
    header = ["scheduler", "ef_size_bytes", "seed", "count", "mean_s", "min_s", "max_s"]
    owd_rows = []
    ipdv_rows = []
    for r in results:
        lab = r["label"]
        prefix = [lab["scheduler"], str(lab["ef_size"]), str(lab["seed"])]
        owd_rows.append(_stat_row(prefix, r["owd"]))
        ipdv_rows.append(_stat_row(prefix, r["ipdv_abs"]))
    paths = []
    p = os.path.join(out_dir, "avg_owd_vs_size.csv")
    write_csv(p, meta, header, owd_rows)
    paths.append(p)
    p = os.path.join(out_dir, "avg_ipdv_vs_size.csv")
    write_csv(p, meta, header, ipdv_rows)
    paths.append(p)

    hist_header = ["scheduler", "bin_lower_edge_units", "bin_lower_edge_s", "frequency"]
    for size in HIST_SIZES_C:
        owd_hist_rows = []
        ipdv_hist_rows = []
        for r in results:
            lab = r["label"]
            if lab["ef_size"] != size or "owd_counts" not in r:
                continue
            owd_stats = stats_from_counts(r["owd_counts"])
            report = owd_stats.export(max(owd_stats.min_ns, 1))
            for k, edge_ns, freq in report.bins:
                owd_hist_rows.append([lab["scheduler"], str(k), fmt_s(edge_ns),
                                      fmt_frequency(freq)])
            if r["ipdv_signed_counts"]:
                ipdv_stats = stats_from_counts(r["ipdv_signed_counts"])
                unit = tx_time_ns(size, MAN_RATE_BPS)
                report = ipdv_stats.export(unit)
                for k, edge_ns, freq in report.bins:
                    ipdv_hist_rows.append([lab["scheduler"], str(k), fmt_s(edge_ns),
                                           fmt_frequency(freq)])
        p = os.path.join(out_dir, f"owd_hist_{size}.csv")
        write_csv(p, meta, hist_header, owd_hist_rows)
        paths.append(p)
        p = os.path.join(out_dir, f"ipdv_hist_{size}.csv")
        write_csv(p, meta, hist_header, ipdv_hist_rows)
        paths.append(p)
    return ExperimentResult(paths, results)


EXPERIMENTS = {"a": run_experiment_a, "b": run_experiment_b, "c": run_experiment_c}
