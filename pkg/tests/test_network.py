"""Links, topology, sources, and end-to-end path properties."""

import pytest

from dssim.engine import tx_time_ns
from dssim.network import (
    BadRange,
    CbrSource,
    Link,
    LinkBusy,
    TopologyConfig,
    build_testbed,
    spawn_background,
)
from dssim.packet import Packet
from dssim.rng import Splitmix64
from dssim.scenario import (
    BinUnit,
    FlowConfig,
    OutputConfig,
    QueueSetConfig,
    RunConfig,
    Scenario,
)
from dssim.diffserv import QueueConfig
from dssim.runner import run_scenario

S = 1_000_000_000


def _pkt(size, flow="f", seq=0):
    return Packet(flow, seq, size, "unmarked", 0)


class TestLink:
    def test_serialization_time_2mbps(self):
        link = Link("a", "b", 2_000_000, 0)
        assert link.transmit(_pkt(1000), 0) == 4_000_000
        assert link.busy_until == 4_000_000

    def test_lan_delivery_includes_propagation(self):
        link = Link("a", "b", 100_000_000, 1_000_000)
        assert link.transmit(_pkt(128), 0) == 10_240 + 1_000_000

    def test_busy_rejected(self):
        link = Link("a", "b", 2_000_000, 0)
        link.transmit(_pkt(1000), 0)
        with pytest.raises(LinkBusy):
            link.transmit(_pkt(1000), 3_999_999)
        link.transmit(_pkt(1000), 4_000_000)

    def test_tiny_frames_rejected_by_source_spec(self):
        with pytest.raises(ValueError):
            CbrSource("f", "S0", "D0", 1000, 27, 0, S)
        with pytest.raises(ValueError):
            CbrSource("f", "S0", "D0", 1000, 65536, 0, S)


class TestTopology:
    def test_default_build(self):
        topo = build_testbed()
        assert len(topo.nodes) == 13  # 5 senders + 5 receivers + e1/core/e2
        assert topo.nodes["e1"] == "router"
        assert topo.route("S0", "D0") == ("S0", "e1", "core", "e2", "D0")
        assert topo.route("S1", "D1") == ("S1", "e1", "core", "e2", "D1")
        assert topo.links[("e1", "core")].rate_bps == 2_000_000
        assert topo.links[("S3", "e1")].prop_delay_ns == 1_000_000

    def test_lan_rate_override(self):
        topo = build_testbed(TopologyConfig(lan_rate_bps=10_000_000))
        for s in ("S0", "S1", "S2", "S3", "S4"):
            assert topo.links[(s, "e1")].rate_bps == 10_000_000

    def test_bad_overrides(self):
        with pytest.raises(ValueError):
            build_testbed(TopologyConfig(man_rate_bps=0))
        with pytest.raises(ValueError):
            build_testbed(TopologyConfig(lan_delay_ns=-1))


class TestSpawnBackground:
    def test_stepped_schedule(self):
        sizes = list(range(64, 1473, 64))
        srcs = spawn_background(23, (100_000, 100_000), (0, 5 * S), 1,
                                size_schedule=sizes)
        assert len(srcs) == 23
        assert [s.packet_size_bytes for s in srcs] == sizes
        assert all(s.rate_bps == 100_000 for s in srcs)
        assert all(0 <= s.start_ns <= 5 * S for s in srcs)

    def test_degenerate_range_is_deterministic(self):
        srcs = spawn_background(1, (40_000, 40_000), (0, 0), 9, size_bytes=500)
        assert srcs[0].rate_bps == 40_000 and srcs[0].start_ns == 0

    def test_same_seed_same_sources(self):
        a = spawn_background(12, (10_000, 100_000), (0, 5 * S), 77, size_bytes=1000)
        b = spawn_background(12, (10_000, 100_000), (0, 5 * S), 77, size_bytes=1000)
        assert a == b

    def test_bad_ranges(self):
        with pytest.raises(BadRange):
            spawn_background(0, (1, 2), (0, 1), 1, size_bytes=100)
        with pytest.raises(BadRange):
            spawn_background(1, (2, 1), (0, 1), 1, size_bytes=100)
        with pytest.raises(BadRange):
            spawn_background(1, (1, 2), (5, 1), 1, size_bytes=100)
        with pytest.raises(BadRange):
            spawn_background(1, (1, 2), (0, 1), 1)
        with pytest.raises(BadRange):
            spawn_background(2, (1, 2), (0, 1), 1, size_bytes=100,
                             size_schedule=[100, 100])


def single_flow_scenario(size_bytes, rate_bps, duration_s=20, man_delay_ns=0):
    return Scenario(
        topology=__import__("dssim.network", fromlist=["TopologyConfig"]).TopologyConfig(
            man_delay_ns=man_delay_ns),
        flows=[FlowConfig("f0", "S0", "D0", rate_bps, size_bytes)],
        background=None,
        policy=[],
        queue_set=QueueSetConfig(scheduler="fifo", queues=[
            QueueConfig(queue_id=0, dscp_set=frozenset(), capacity_packets=50,
                        default=True)]),
        run=RunConfig(duration_ns=duration_s * S, seed=0, warmup_ns=0),
        outputs=[
            OutputConfig("owd", "owd", ("f0",), BinUnit("min_owd")),
            OutputConfig("ipdv", "ipdv", ("f0",), BinUnit("ns", 1000)),
        ],
    )


def closed_form_owd(size, lan_rate=100_000_000, man_rate=2_000_000,
                    lan_delay=1_000_000, man_delay=0):
    return (tx_time_ns(size, lan_rate) * 2 + tx_time_ns(size, man_rate) * 2
            + 2 * lan_delay + 2 * man_delay)


class TestEndToEnd:
    def test_emission_count_closed_form(self):
        # 300 Kbps, 1000 B, 200 s -> 200*300000/8000 = 7500 emissions.
        res = run_scenario(single_flow_scenario(1000, 300_000, duration_s=200))
        assert res.created == 7500

    def test_uncontended_owd_equals_closed_form_exactly(self):
        rng = Splitmix64(5)
        for _ in range(6):
            size = rng.uniform_int(28, 1518)
            rate = rng.uniform_int(20_000, 400_000)
            delay = rng.uniform_int(0, 5_000_000)
            sc = single_flow_scenario(size, rate, duration_s=5, man_delay_ns=delay)
            res = run_scenario(sc)
            stats = res.owd["owd"].stats
            want = closed_form_owd(size, man_delay=delay)
            assert stats.min_ns == want and stats.max_ns == want
            assert res.delivered > 0

    def test_uncontended_cbr_ipdv_identically_zero(self):
        res = run_scenario(single_flow_scenario(731, 77_000, duration_s=10))
        ip = res.ipdv["ipdv"]
        assert ip.stats_abs.count > 10
        assert ip.stats_abs.max_ns == 0 and ip.stats_signed.min_ns == 0

    def test_conservation_under_congestion(self):
        # 5 high-rate flows into the 2 Mbps bottleneck force tail drops.
        sc = single_flow_scenario(1000, 900_000, duration_s=10)
        sc.flows = [
            FlowConfig(f"f{i}", f"S{i}", f"D{i}", 900_000, 1000)
            for i in range(5)
        ]
        sc.outputs = [OutputConfig("owd", "owd", None, BinUnit("min_owd"))]
        res = run_scenario(sc)
        assert res.dropped_tail > 0
        assert res.created == (res.delivered + res.dropped + res.queued_end
                               + res.wire_end)

    def test_delivery_record_subtraction(self):
        from dssim.metrics import OwdMonitor
        from dssim.packet import DeliveryRecord
        mon = OwdMonitor()
        mon.record(DeliveryRecord("f", 0, 10_000_000, 16_000_000))
        assert mon.stats.min_ns == 6_000_000
