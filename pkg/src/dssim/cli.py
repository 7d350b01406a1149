"""Command-line entry point.

  dssim validate --scenario FILE          parse and check a scenario
  dssim run --scenario FILE [--seed N]    run one scenario, write its CSVs
  dssim experiment {a,b,c} [...]          run a study sweep, write its CSVs

Exit codes: 0 success, 1 configuration error, 2 runtime error. The output
directory may also be set with the DSSIM_OUT environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys

from .engine import tx_time_ns
from .experiments import (
    DEFAULT_SEED,
    EXPERIMENTS,
    fmt_frequency,
    fmt_mean_s,
    fmt_s,
    write_csv,
)
from .metrics import EmptyStats
from .rng import PRNG_ID
from .runner import run_scenario
from .scenario import ScenarioError, load_scenario


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dssim",
                                 description="DiffServ testbed simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and check a scenario file")
    v.add_argument("--scenario", required=True)

    r = sub.add_parser("run", help="run a single scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--debug-log", action="store_true",
                   help="keep the full delivery log (memory heavy)")

    e = sub.add_parser("experiment", help="run one of the predefined studies")
    e.add_argument("which", choices=sorted(EXPERIMENTS))
    e.add_argument("--out", default=None, help="output directory")
    e.add_argument("--seed", type=int, default=DEFAULT_SEED)
    e.add_argument("--repeats", type=int, default=1)
    e.add_argument("--jobs", type=int, default=None,
                   help="parallel sweep workers (default: cpu count)")
    e.add_argument("--man-delay-ns", type=int, default=0,
                   help="propagation delay per bottleneck hop (calibration knob)")
    e.add_argument("--duration-s", type=float, default=200.0)
    return ap


def _out_dir(arg) -> str:
    return arg or os.environ.get("DSSIM_OUT") or "out"


def _cmd_validate(args) -> int:
    try:
        load_scenario(args.scenario)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"{args.scenario}: {problem}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{args.scenario}: {exc}", file=sys.stderr)
        return 1
    print(f"{args.scenario}: ok")
    return 0


def _cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        print(f"{args.scenario}: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        sc.run.seed = args.seed
    out_dir = _out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    try:
        res = run_scenario(sc, debug=args.debug_log)
        meta = [
            ("schema_version", 1),
            ("scenario", os.path.basename(args.scenario)),
            ("seed", sc.run.seed),
            ("prng", PRNG_ID),
            ("duration_ns", sc.run.duration_ns),
            ("warmup_ns", sc.run.warmup_ns),
            ("man_delay_ns", sc.topology.man_delay_ns),
            ("scheduler", sc.queue_set.scheduler),
            ("ipdv_convention", "mean_abs_consecutive"),
            ("created", res.created),
            ("delivered", res.delivered),
            ("dropped_policer", res.dropped_policer),
            ("dropped_tail", res.dropped_tail),
            ("dropped_llq", res.dropped_llq),
        ]
        for out in sc.outputs:
            if out.kind == "owd":
                stats = res.owd[out.name].stats
            else:
                stats = res.ipdv[out.name].stats_abs
            if stats.count == 0:
                raise EmptyStats(f"output {out.name!r} collected no samples")
            if out.bin_unit.mode == "ns":
                unit = out.bin_unit.value
            elif out.bin_unit.mode == "tx_unit":
                unit = tx_time_ns(out.bin_unit.value, sc.topology.man_rate_bps)
            else:
                unit = max(stats.min_ns, 1)
            if out.kind == "ipdv":
                # Histogram the signed stream; summary stats are absolute.
                hist_stats = res.ipdv[out.name].stats_signed
            else:
                hist_stats = stats
            summary_path = os.path.join(out_dir, f"{out.name}_summary.csv")
            write_csv(summary_path, meta,
                      ["count", "mean_s", "min_s", "max_s"],
                      [[str(stats.count), fmt_mean_s(stats.count, stats.sum_ns),
                        fmt_s(stats.min_ns), fmt_s(stats.max_ns)]])
            rows = []
            if hist_stats.count:
                report = hist_stats.export(unit)
                rows = [[str(k), fmt_s(edge), fmt_frequency(f)]
                        for k, edge, f in report.bins]
            hist_path = os.path.join(out_dir, f"{out.name}_hist.csv")
            write_csv(hist_path, meta,
                      ["bin_lower_edge_units", "bin_lower_edge_s", "frequency"], rows)
        print(f"wrote {out_dir}: {res.delivered} delivered, {res.dropped} dropped, "
              f"{res.summary.events} events")
        return 0
    except EmptyStats as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # engine/contract violations are runtime errors
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def _cmd_experiment(args) -> int:
    out_dir = _out_dir(args.out)
    fn = EXPERIMENTS[args.which]
    kwargs = {}
    if args.which == "b":
        pass  # default EF size set
    try:
        result = fn(out_dir, seed=args.seed, repeats=args.repeats, jobs=args.jobs,
                    man_delay_ns=args.man_delay_ns, duration_s=args.duration_s, **kwargs)
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    for path in result.csv_paths:
        print(path)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "validate":
        return _cmd_validate(args)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_experiment(args)


if __name__ == "__main__":
    sys.exit(main())
