"""Online one-way delay and delay-variation statistics.

Everything is gathered at simulation time from delivery records, no trace
files. Accumulators are exact: integer sums, and an exact duration-keyed
count map from which histograms are binned at export, so the bin unit can be
chosen after the fact (e.g. the run's measured minimum delay).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .packet import DeliveryRecord


class EmptyStats(Exception):
    """export was asked for statistics with no samples."""


class NegativeDelay(Exception):
    """A delivery happened before its creation timestamp (clock bug)."""


@dataclass
class StatsReport:
    """Exported snapshot: exact mean plus a normalized histogram.

    Bins are half-open [k*unit, (k+1)*unit); the list covers the contiguous
    index range between the smallest and largest occupied bin and the
    frequencies sum to one exactly (they are rationals).
    """

    count: int
    mean_ns: Fraction
    min_ns: int
    max_ns: int
    bin_unit_ns: int
    bins: list[tuple[int, int, Fraction]]  # (index, lower_edge_ns, frequency)


class DelayStats:
    """Running count/sum/min/max plus an exact value->count map."""

    __slots__ = ("count", "sum_ns", "min_ns", "max_ns", "counts")

    def __init__(self):
        self.count = 0
        self.sum_ns = 0
        self.min_ns: Optional[int] = None
        self.max_ns: Optional[int] = None
        self.counts: dict[int, int] = {}

    def add(self, value_ns: int) -> None:
        self.count += 1
        self.sum_ns += value_ns
        if self.min_ns is None or value_ns < self.min_ns:
            self.min_ns = value_ns
        if self.max_ns is None or value_ns > self.max_ns:
            self.max_ns = value_ns
        c = self.counts
        c[value_ns] = c.get(value_ns, 0) + 1

    @property
    def mean_ns(self) -> Fraction:
        if not self.count:
            raise EmptyStats("no samples")
        return Fraction(self.sum_ns, self.count)

    def export(self, bin_unit_ns: int) -> StatsReport:
        """Re-bin the exact count map into bin_unit_ns-wide buckets."""
        if not self.count:
            raise EmptyStats("no samples")
        if bin_unit_ns <= 0:
            raise ValueError("bin_unit_ns must be positive")
        by_bin: dict[int, int] = {}
        for v, n in self.counts.items():
            k = v // bin_unit_ns  # floor keeps negative bins symmetric around 0
            by_bin[k] = by_bin.get(k, 0) + n
        lo = min(by_bin)
        hi = max(by_bin)
        bins = [
            (k, k * bin_unit_ns, Fraction(by_bin.get(k, 0), self.count))
            for k in range(lo, hi + 1)
        ]
        return StatsReport(
            count=self.count,
            mean_ns=self.mean_ns,
            min_ns=self.min_ns,
            max_ns=self.max_ns,
            bin_unit_ns=bin_unit_ns,
            bins=bins,
        )


class OwdMonitor:
    """Accumulates one-way delay of the monitored flows, online."""

    __slots__ = ("flow_filter", "warmup_ns", "stats")

    def __init__(self, flow_filter: Optional[frozenset] = None, warmup_ns: int = 0):
        self.flow_filter = flow_filter
        self.warmup_ns = warmup_ns
        self.stats = DelayStats()

    def record(self, rec: DeliveryRecord) -> None:
        if self.flow_filter is not None and rec.flow_id not in self.flow_filter:
            return
        if rec.received_at < self.warmup_ns:
            return
        owd = rec.received_at - rec.created_at
        if owd < 0:
            raise NegativeDelay(f"{rec.flow_id}#{rec.seq_no}: owd {owd} ns")
        self.stats.add(owd)


class IpdvMonitor:
    """Delay variation between consecutive received packets of each flow.

    Defined from the second packet onward. Both the signed differences and
    their absolute values are kept: the signed stream telescopes to
    last-minus-first delay, the absolute stream is what "average jitter"
    reports (recorded as the convention in output metadata).
    """

    __slots__ = ("flow_filter", "warmup_ns", "stats_signed", "stats_abs", "_last_owd")

    def __init__(self, flow_filter: Optional[frozenset] = None, warmup_ns: int = 0):
        self.flow_filter = flow_filter
        self.warmup_ns = warmup_ns
        self.stats_signed = DelayStats()
        self.stats_abs = DelayStats()
        self._last_owd: dict[str, int] = {}

    def record(self, rec: DeliveryRecord) -> None:
        if self.flow_filter is not None and rec.flow_id not in self.flow_filter:
            return
        if rec.received_at < self.warmup_ns:
            return
        owd = rec.received_at - rec.created_at
        if owd < 0:
            raise NegativeDelay(f"{rec.flow_id}#{rec.seq_no}: owd {owd} ns")
        last = self._last_owd.get(rec.flow_id)
        self._last_owd[rec.flow_id] = owd
        if last is None:
            return
        d = owd - last
        self.stats_signed.add(d)
        self.stats_abs.add(d if d >= 0 else -d)
