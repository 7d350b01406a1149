"""Packet and delivery-record types shared by the whole pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

DSCP_EF = "EF"
DSCP_BE_IN = "BE-in"
DSCP_BE_OUT = "BE-out"
DSCP_UNMARKED = "unmarked"

PROFILE_IN = "in"
PROFILE_OUT = "out"
PROFILE_UNSET = "unset"

MIN_FRAME_BYTES = 28
MAX_FRAME_BYTES = 65535


@dataclass(slots=True)
class Packet:
    """One frame in flight; size includes all headers (ideal p2p pipes)."""

    flow_id: str
    seq_no: int
    size_bytes: int
    dscp: str
    created_at: int
    profile: str = PROFILE_UNSET


class DeliveryRecord(NamedTuple):
    flow_id: str
    seq_no: int
    created_at: int
    received_at: int
