"""Edge conditioning: classify flows into aggregates, meter with a token
bucket, mark in/out of profile, and drop or remark out-of-profile traffic.

Token counts are exact rationals updated lazily at packet arrival, which is
mathematically identical to continuous refill and keeps 200 s runs drift-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .packet import PROFILE_IN, PROFILE_OUT, Packet

IN_PROFILE = "in"
OUT_PROFILE = "out"

OUT_ACTION_DROP = "drop"
OUT_ACTION_MARK = "mark"


class ClockRegression(Exception):
    """A meter was updated with a timestamp earlier than its last update."""


class UnmappedDscp(Exception):
    """A packet reached a queue set whose codepoint maps to no queue."""


_TOKEN_SCALE = 8 * 1_000_000_000  # tokens kept as bytes * 8e9: refill is cir * dt, exactly


class TokenBucket:
    """Single-rate meter: cir_bps refill, cbs_bytes depth, starts full.

    The fill level is an exact rational with fixed denominator 8e9, stored
    as a scaled integer: one nanosecond of refill adds exactly cir_bps units.
    No drift over arbitrarily long runs.
    """

    __slots__ = ("cir_bps", "cbs_bytes", "_tokens_scaled", "_cap_scaled", "last_update")

    def __init__(self, cir_bps: int, cbs_bytes: int, start_at: int = 0):
        if cir_bps <= 0 or cbs_bytes <= 0:
            raise ValueError("cir_bps and cbs_bytes must be positive")
        self.cir_bps = cir_bps
        self.cbs_bytes = cbs_bytes
        self._cap_scaled = cbs_bytes * _TOKEN_SCALE
        self._tokens_scaled = self._cap_scaled
        self.last_update = start_at

    @property
    def tokens(self) -> Fraction:
        """Current fill in bytes (exact)."""
        return Fraction(self._tokens_scaled, _TOKEN_SCALE)

    def meter(self, size_bytes: int, now: int) -> str:
        """Refill for the elapsed time, then admit or reject one packet.

        Admission consumes size_bytes tokens; rejection leaves the bucket
        untouched so a later, smaller packet may still conform.
        """
        dt = now - self.last_update
        if dt < 0:
            raise ClockRegression(f"meter moved backwards: {now} < {self.last_update}")
        if dt:
            fill = self._tokens_scaled + self.cir_bps * dt
            self._tokens_scaled = fill if fill < self._cap_scaled else self._cap_scaled
            self.last_update = now
        need = size_bytes * _TOKEN_SCALE
        if self._tokens_scaled >= need:
            self._tokens_scaled -= need
            return IN_PROFILE
        return OUT_PROFILE


@dataclass
class PolicyEntry:
    """Conditioning rule for the flows of one aggregate."""

    match: frozenset
    aggregate_id: str
    meter: Optional[TokenBucket]
    in_dscp: str
    out_dscp: str
    out_action: str = OUT_ACTION_DROP


@dataclass
class QueueConfig:
    """One physical queue of an egress interface."""

    queue_id: int
    dscp_set: frozenset
    capacity_packets: int = 50
    weight: Optional[Fraction] = None
    priority_level: Optional[int] = None
    default: bool = False
    # LLQ only: strict-priority queue policed at cir/cbs below.
    llq_priority: bool = False
    llq_cir_bps: Optional[int] = None
    llq_cbs_bytes: Optional[int] = None


class Conditioner:
    """Applies the per-flow policy table at a DiffServ-enabled node.

    Flows mapped to the same aggregate share a single bucket, so metering is
    on an aggregate basis. Unmatched flows pass through unmarked.
    """

    __slots__ = ("entries", "_by_flow")

    def __init__(self, entries: list[PolicyEntry]):
        self.entries = entries
        self._by_flow: dict[str, PolicyEntry] = {}
        for e in entries:
            for flow in e.match:
                if flow in self._by_flow:
                    raise ValueError(f"flow {flow!r} matched by more than one policy entry")
                self._by_flow[flow] = e

    def condition(self, pkt: Packet, now: int) -> bool:
        """Mark pkt and return True to forward it, False to drop it."""
        entry = self._by_flow.get(pkt.flow_id)
        if entry is None:
            return True
        if entry.meter is None:
            pkt.dscp = entry.in_dscp
            pkt.profile = PROFILE_IN
            return True
        if entry.meter.meter(pkt.size_bytes, now) == IN_PROFILE:
            pkt.dscp = entry.in_dscp
            pkt.profile = PROFILE_IN
            return True
        if entry.out_action == OUT_ACTION_DROP:
            return False
        pkt.dscp = entry.out_dscp
        pkt.profile = PROFILE_OUT
        return True
