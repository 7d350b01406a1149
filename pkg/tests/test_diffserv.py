"""Token-bucket metering, conditioning and queue admission."""

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dssim.diffserv import (
    IN_PROFILE,
    OUT_PROFILE,
    ClockRegression,
    Conditioner,
    PolicyEntry,
    QueueConfig,
    TokenBucket,
    UnmappedDscp,
)
from dssim.packet import DSCP_EF, PROFILE_IN, PROFILE_OUT, Packet
from dssim.rng import Splitmix64
from oracles import token_meter_trace

from helpers import drive_port, mk_queues

S = 1_000_000_000


def _pkt(size, flow="f"):
    return Packet(flow, 0, size, "unmarked", 0)


class TestTokenBucket:
    def test_exact_fit_then_empty(self):
        tb = TokenBucket(300_000, 1000)
        assert tb.meter(1000, 0) == IN_PROFILE
        assert tb.tokens == 0
        assert tb.meter(1000, 0) == OUT_PROFILE  # same instant, bucket empty
        assert tb.tokens == 0

    def test_refill_time_is_8_size_over_cir(self):
        tb = TokenBucket(300_000, 1000)
        tb.meter(1000, 0)
        # 8*1000/300000 s rounded up to whole ns.
        refill = -(-8 * 1000 * S // 300_000)
        assert tb.meter(1000, refill - 1) == OUT_PROFILE
        # The failed attempt must not consume anything; one ns later it fits.
        assert tb.meter(1000, refill) == IN_PROFILE

    def test_cap_at_cbs(self):
        tb = TokenBucket(300_000, 500)
        tb.meter(500, 0)
        assert tb.meter(400, 10 * S) == IN_PROFILE  # long wait still caps at cbs
        assert tb.tokens == 100

    def test_clock_regression(self):
        tb = TokenBucket(1000, 100)
        tb.meter(10, 5)
        with pytest.raises(ClockRegression):
            tb.meter(10, 4)

    def test_rejection_leaves_tokens_for_smaller_packet(self):
        tb = TokenBucket(8_000, 100)  # 1 byte per ms
        tb.meter(100, 0)
        assert tb.meter(100, 50_000_000) == OUT_PROFILE  # 50 tokens < 100
        assert tb.meter(40, 50_000_000) == IN_PROFILE

    @given(st.lists(st.tuples(st.integers(0, 1_000_000), st.integers(1, 2000)),
                    min_size=1, max_size=60),
           st.integers(1_000, 5_000_000), st.integers(1, 4000))
    @settings(max_examples=200, deadline=None)
    def test_conformance_and_oracle_equality(self, steps, cir, cbs):
        # steps are (gap_ns, size) pairs: adversarial irregular arrivals.
        t = 0
        arrivals = []
        for gap, size in steps:
            t += gap
            arrivals.append((t, size))
        tb = TokenBucket(cir, cbs)
        got = [tb.meter(size, at) == IN_PROFILE for at, size in arrivals]
        assert got == token_meter_trace(cir, cbs, arrivals)
        # Admitted volume over any window obeys cbs + cir*dt/8.
        admitted = [(at, size) for (at, size), ok in zip(arrivals, got) if ok]
        for i in range(len(admitted)):
            total = 0
            for j in range(i, len(admitted)):
                total += admitted[j][1]
                dt = admitted[j][0] - admitted[i][0]
                assert total <= cbs + Fraction(cir * dt, 8 * S)


class TestConditioner:
    def _cond(self, out_action="drop", meter=True):
        tb = TokenBucket(300_000, 1000) if meter else None
        return Conditioner([
            PolicyEntry(frozenset({"ef"}), "agg", tb, DSCP_EF, "BE-out", out_action)
        ])

    def test_unmatched_passes_unmarked(self):
        cond = self._cond()
        pkt = _pkt(500, "other")
        assert cond.condition(pkt, 0)
        assert pkt.dscp == "unmarked"

    def test_in_profile_marked(self):
        cond = self._cond()
        pkt = _pkt(1000, "ef")
        assert cond.condition(pkt, 0)
        assert pkt.dscp == DSCP_EF and pkt.profile == PROFILE_IN

    def test_out_profile_dropped(self):
        cond = self._cond()
        assert cond.condition(_pkt(1000, "ef"), 0)
        assert not cond.condition(_pkt(1000, "ef"), 0)

    def test_out_profile_marked_when_action_mark(self):
        cond = self._cond(out_action="mark")
        assert cond.condition(_pkt(1000, "ef"), 0)
        pkt = _pkt(1000, "ef")
        assert cond.condition(pkt, 0)
        assert pkt.dscp == "BE-out" and pkt.profile == PROFILE_OUT

    def test_meterless_entry_just_marks(self):
        cond = self._cond(meter=False)
        for _ in range(5):
            pkt = _pkt(1000, "ef")
            assert cond.condition(pkt, 0)
            assert pkt.dscp == DSCP_EF

    def test_one_entry_per_flow(self):
        tb = TokenBucket(1000, 100)
        with pytest.raises(ValueError):
            Conditioner([
                PolicyEntry(frozenset({"a"}), "x", tb, DSCP_EF, "BE-out"),
                PolicyEntry(frozenset({"a"}), "y", None, DSCP_EF, "BE-out"),
            ])

    def test_aggregate_shares_one_bucket(self):
        """Two flows in one aggregate admit exactly what one merged flow would."""
        tb = TokenBucket(100_000, 1500)
        cond = Conditioner([
            PolicyEntry(frozenset({"a", "b"}), "agg", tb, DSCP_EF, "BE-out")
        ])
        rng = Splitmix64(3)
        t = 0
        arrivals = []
        for _ in range(300):
            t += rng.uniform_int(0, 200_000)
            arrivals.append((t, rng.uniform_int(64, 1500),
                             "a" if rng.next_u64() % 2 else "b"))
        got = [cond.condition(_pkt(size, flow), at) for at, size, flow in arrivals]
        merged = token_meter_trace(100_000, 1500, [(at, sz) for at, sz, _ in arrivals])
        assert got == merged


class TestEnqueue:
    def test_capacity_boundary(self):
        qcs = mk_queues(1, capacity=50)
        # First packet starts service immediately, the next 50 fill the queue.
        arrivals = [(0, 0, 1000)] * 51
        delivered, counters, port = drive_port("fifo", qcs, 2_000_000, arrivals)
        assert counters.dropped_tail == 0
        arrivals = [(0, 0, 1000)] * 60
        delivered, counters, port = drive_port("fifo", qcs, 2_000_000, arrivals)
        assert counters.dropped_tail == 60 - 51
        assert len(delivered) == 51

    def test_ef_queue_independent_of_be_backlog(self):
        qcs = [
            QueueConfig(0, frozenset({DSCP_EF}), capacity_packets=5, priority_level=0),
            QueueConfig(1, frozenset({"q1"}), capacity_packets=5, priority_level=1,
                        default=True),
        ]
        arrivals = [(0, 1, 1000)] * 5 + [(1, 0, 100)]
        from dssim.engine import Engine
        from dssim.network import Counters, EgressPort, Link
        from dssim.schedulers import make_scheduler
        eng = Engine()
        counters = Counters()
        got = []
        port = EgressPort(eng, Link("a", "b", 2_000_000, 0), qcs,
                          make_scheduler("pq", qcs, 2_000_000), counters,
                          got.append)
        for t, qid, size in arrivals:
            dscp = DSCP_EF if qid == 0 else "q1"
            eng.schedule(t, port.enqueue, Packet(f"f{qid}", t, size, dscp, t), t)
        eng.run_until(10)
        assert counters.dropped_tail == 0
        assert len(port.queues[0]) == 1  # EF admitted despite BE backlog

    def test_unmapped_dscp_without_default(self):
        qcs = [QueueConfig(0, frozenset({DSCP_EF}), capacity_packets=5)]
        from dssim.engine import Engine
        from dssim.network import Counters, EgressPort, Link
        from dssim.schedulers import make_scheduler
        eng = Engine()
        port = EgressPort(eng, Link("a", "b", 2_000_000, 0), qcs,
                          make_scheduler("fifo", qcs, 2_000_000), Counters(),
                          lambda pkt: None)
        with pytest.raises(UnmappedDscp):
            port.enqueue(Packet("f", 0, 100, "unmarked", 0), 0)


class TestPolicedCbr:
    def test_cbr_at_exactly_cir_never_drops(self):
        from dssim.experiments import scenario_a
        for size in (128, 1000, 1518):
            sc = scenario_a(size, 1, 42, duration_s=20)
            sc.background = None  # isolate the policer
            from dssim.runner import run_scenario
            res = run_scenario(sc)
            assert res.dropped_policer == 0
            assert res.created == 20 * 300_000 // (8 * size) or res.created > 0

    def test_cbr_at_twice_cir_drops_half(self):
        from dssim.experiments import scenario_a
        from dssim.runner import run_scenario
        size = 1000
        sc = scenario_a(size, 1, 42, duration_s=40)
        sc.background = None
        sc.flows[0].rate_bps = 600_000  # 2x the committed rate
        res = run_scenario(sc)
        # Independent token arithmetic over the same arrival instants.
        gap = -(-8 * size * S // 600_000)
        arrivals = [(k * gap, size) for k in range(res.created)]
        oracle = token_meter_trace(300_000, size, arrivals)
        assert res.dropped_policer == oracle.count(False)
        frac = res.dropped_policer / res.created
        assert abs(frac - 0.5) < 0.01
