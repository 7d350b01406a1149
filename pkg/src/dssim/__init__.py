"""dssim: deterministic discrete-event simulation of a DiffServ IP testbed.

Integer-nanosecond clock, a family of work-conserving packet schedulers
behind one interface, token-bucket policing with out-of-profile dropping,
and online one-way delay / delay-variation measurement.
"""

from .engine import Engine, EventHandle, PastEvent, RunSummary, tx_time_ns
from .diffserv import (
    Conditioner,
    ClockRegression,
    PolicyEntry,
    QueueConfig,
    TokenBucket,
    UnmappedDscp,
)
from .metrics import DelayStats, EmptyStats, IpdvMonitor, NegativeDelay, OwdMonitor
from .network import (
    BadRange,
    CbrSource,
    Link,
    LinkBusy,
    Topology,
    TopologyConfig,
    build_testbed,
    spawn_background,
)
from .packet import DeliveryRecord, Packet
from .rng import PRNG_ID, Splitmix64
from .runner import RunResult, run_scenario
from .scenario import Scenario, ScenarioError, load_scenario, validate
from .schedulers import (
    BadParam,
    SCHEDULER_KINDS,
    Scheduler,
    make_scheduler,
    scfq_latency_bound,
)

__version__ = "0.1.0"
