"""
Tests for links: serialization, credit flow control and VL arbitration.
"""

from collections import deque

import pytest

from ebsim.core.engine import PS_PER_NS, Engine
from ebsim.core.errors import ConfigError, ModelInvariantError
from ebsim.core.link import (
    BLOCK_BYTES,
    Channel,
    CreditState,
    LinkParams,
    Packet,
    PortCounters,
    Transmitter,
    blocks_for,
    return_credits,
    serialization_time,
    try_send_packet,
)


class Sink:
    """Receiver that records arrivals and optionally frees space right away."""

    def __init__(self, engine, cut_through=False, free_immediately=True):
        self.engine = engine
        self.name = "sink"
        self.cut_through = cut_through
        self.free_immediately = free_immediately
        self.arrivals = []

    def accept_flit(self, channel, flit, packet):
        self.arrivals.append((self.engine.now, packet.packet_id, flit.index_in_packet))
        if self.free_immediately:
            return_credits(channel, packet.vl, packet.blocks)


class QueueSource:
    """Per-VL FIFOs of ready packets."""

    def __init__(self, num_vls):
        self.queues = [deque() for _ in range(num_vls)]
        self.popped = []

    def peek(self, vl):
        return self.queues[vl][0] if self.queues[vl] else None

    def pop(self, vl):
        packet = self.queues[vl].popleft()
        self.popped.append(packet.packet_id)
        return packet


def make_packet(packet_id, payload=4096, vl=0, header=30):
    return Packet(packet_id, None, 0, 1, vl, 0, 1, payload, payload + header)


def build(params, cut_through=False, free_immediately=True):
    engine = Engine()
    sink = Sink(engine, cut_through, free_immediately)
    counters = PortCounters("sink", 1, params.num_vls)
    channel = Channel(engine, "h0->sink", params, sink, 1, counters)
    source = QueueSource(params.num_vls)
    transmitter = Transmitter(engine, "h0:1", source, PortCounters("h0", 1, params.num_vls))
    transmitter.connect(channel)
    return engine, sink, channel, source, transmitter


class TestSerialization:
    """Wire timing at 100 Gb/s."""

    def setup_method(self):
        self.params = LinkParams()

    def test_flit_time(self):
        assert serialization_time(BLOCK_BYTES, self.params) == 5_120
        assert self.params.flit_time == 5_120

    def test_full_packet_time(self):
        assert serialization_time(4126, self.params) == 330_080

    def test_rounds_up_to_whole_picosecond(self):
        params = LinkParams(data_rate_bps=3 * 10**9)

        assert serialization_time(1, params) == 2_667

    def test_rejects_empty_transfer(self):
        with pytest.raises(ValueError):
            serialization_time(0, self.params)

    def test_blocks_for(self):
        assert blocks_for(1) == 1
        assert blocks_for(64) == 1
        assert blocks_for(65) == 2
        assert blocks_for(4126) == 65


class TestLinkParams:
    """Parameter validation."""

    def test_defaults(self):
        params = LinkParams()

        assert params.buffer_bytes_per_vl == 64 * 1024
        assert params.propagation_delay == 170 * PS_PER_NS
        assert params.to_dict()["num_vls"] == 4

    @pytest.mark.parametrize(
        "kwargs",
        [{"data_rate_bps": 0}, {"propagation_delay": -1}, {"num_vls": 0}, {"num_vls": 16}, {"buffer_blocks_per_vl": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            LinkParams(**kwargs)

    def test_packet_larger_than_buffer(self):
        params = LinkParams(buffer_blocks_per_vl=32)

        with pytest.raises(ConfigError, match="exceeds"):
            params.check_packet_fits(4126)
        params.check_packet_fits(2048)


class TestPacket:
    """Packets, their hand-over flits and the receiver's view of them."""

    def test_head_and_tail_flits(self):
        packet = make_packet(7, payload=100, header=30)

        head, tail = packet.head_flit(), packet.tail_flit()

        assert packet.blocks == 3
        assert (head.index_in_packet, tail.index_in_packet) == (0, 2)
        assert head.is_head and not head.is_tail
        assert tail.is_tail and not tail.is_head

    def test_single_block_packet_is_head_and_tail(self):
        flit = make_packet(8, payload=10, header=30).head_flit()

        assert flit.is_head and flit.is_tail

    def test_store_and_forward_receiver_rejects_head_hand_over(self):
        _, _, channel, _, _ = build(LinkParams())
        packet = make_packet(1)

        with pytest.raises(ModelInvariantError, match="handed over on flit 0"):
            channel.deliver(packet, packet.head_flit())

    def test_cut_through_receiver_rejects_tail_hand_over(self):
        _, _, channel, _, _ = build(LinkParams(), cut_through=True)
        packet = make_packet(1)

        with pytest.raises(ModelInvariantError, match="handed over on flit 64"):
            channel.deliver(packet, packet.tail_flit())


class TestCreditState:
    """Sender-side credit bookkeeping."""

    def test_consume_and_restore(self):
        credits = CreditState(2, 10)

        credits.consume(0, 4)
        assert credits.free_blocks == [6, 10]
        assert not credits.can_send(0, 7)
        credits.restore(0, 4)
        assert credits.free_blocks == [10, 10]

    def test_over_return_is_fatal(self):
        credits = CreditState(1, 10)

        with pytest.raises(ModelInvariantError, match="over-return"):
            credits.restore(0, 1)

    def test_overspend_is_fatal(self):
        credits = CreditState(1, 2)

        with pytest.raises(ModelInvariantError):
            credits.consume(0, 3)


class TestChannel:
    """Delivery timing and credit conservation of one channel."""

    def test_store_and_forward_arrival_on_tail(self):
        params = LinkParams()
        engine, sink, channel, _, _ = build(params)

        assert try_send_packet(channel, make_packet(1))
        engine.run()

        assert sink.arrivals == [(330_080 + 170_000, 1, 64)]

    def test_cut_through_arrival_on_head(self):
        params = LinkParams()
        engine, sink, channel, _, _ = build(params, cut_through=True)

        try_send_packet(channel, make_packet(1))
        engine.run()

        assert sink.arrivals == [(5_120 + 170_000, 1, 0)]

    def test_whole_packet_credit_check(self):
        params = LinkParams(buffer_blocks_per_vl=100)
        engine, _, channel, _, _ = build(params, free_immediately=False)

        assert try_send_packet(channel, make_packet(1))
        assert not try_send_packet(channel, make_packet(2))
        assert channel.credits.free_blocks[0] == 35

    def test_credits_return_after_propagation_delay(self):
        params = LinkParams()
        engine, sink, channel, _, _ = build(params, free_immediately=False)
        try_send_packet(channel, make_packet(1))
        engine.run()
        channel.audit()

        return_credits(channel, 0, 65)
        assert channel.credits.free_blocks[0] == 1024 - 65
        channel.audit()
        engine.run()

        assert channel.credits.free_blocks[0] == 1024
        assert channel.is_idle()

    def test_audit_detects_leak(self):
        params = LinkParams()
        _, _, channel, _, _ = build(params)

        channel.credits.free_blocks[0] -= 1

        with pytest.raises(ModelInvariantError, match="conservation"):
            channel.audit()

    def test_freeing_more_than_occupied_is_fatal(self):
        params = LinkParams()
        _, _, channel, _, _ = build(params)

        with pytest.raises(ModelInvariantError):
            return_credits(channel, 0, 1)

    def test_peak_occupancy_recorded(self):
        params = LinkParams()
        engine, _, channel, _, _ = build(params, free_immediately=False)
        try_send_packet(channel, make_packet(1))
        try_send_packet(channel, make_packet(2))
        engine.run()

        assert channel.rx_counters.max_occupancy_blocks[0] == 130

    def test_vl_outside_link_is_fatal(self):
        params = LinkParams(num_vls=1)
        _, _, channel, _, _ = build(params)

        with pytest.raises(ModelInvariantError):
            try_send_packet(channel, make_packet(1, vl=2))


class TestTransmitter:
    """Arbitration, back-to-back sending and XmitWait."""

    def test_back_to_back_packets(self):
        params = LinkParams()
        engine, sink, _, source, transmitter = build(params)
        for pid in range(3):
            source.queues[0].append(make_packet(pid))

        transmitter.kick()
        engine.run()

        times = [t for t, _, _ in sink.arrivals]
        assert times == [500_080, 830_160, 1_160_240]
        assert source.popped == [0, 1, 2]
        assert transmitter.counters.packets_tx == 3
        assert transmitter.counters.bytes_tx == 3 * 4126

    def test_round_robin_across_vls(self):
        params = LinkParams()
        engine, sink, _, source, transmitter = build(params)
        for pid in range(2):
            source.queues[0].append(make_packet(10 + pid, vl=0))
            source.queues[2].append(make_packet(20 + pid, vl=2))

        transmitter.kick()
        engine.run()

        assert [pid for _, pid, _ in sink.arrivals] == [10, 20, 11, 21]

    def test_starved_vl_does_not_block_other_vl(self):
        params = LinkParams(buffer_blocks_per_vl=65)
        engine, sink, channel, source, transmitter = build(params, free_immediately=False)
        source.queues[0].append(make_packet(1, vl=0))
        source.queues[0].append(make_packet(2, vl=0))
        source.queues[1].append(make_packet(3, vl=1))

        transmitter.kick()
        engine.run()

        assert sorted(pid for _, pid, _ in sink.arrivals) == [1, 3]
        assert source.peek(0).packet_id == 2

    def test_xmit_wait_accumulates_while_starved(self):
        params = LinkParams(buffer_blocks_per_vl=65)
        engine, sink, channel, source, transmitter = build(params, free_immediately=False)
        source.queues[0].append(make_packet(1))
        source.queues[0].append(make_packet(2))
        transmitter.kick()
        engine.run()
        stall_start = 330_080
        assert engine.now == 500_080

        engine.call_at(1_000_000, "test", return_credits, channel, 0, 65)
        engine.run_until(1_000_000)
        assert transmitter.xmit_wait_ps() == 1_000_000 - stall_start
        engine.run()

        assert transmitter.counters.xmit_wait_ps == 1_170_000 - stall_start
        assert [pid for _, pid, _ in sink.arrivals] == [1, 2]

    def test_no_xmit_wait_when_idle(self):
        params = LinkParams()
        engine, _, _, source, transmitter = build(params)
        source.queues[0].append(make_packet(1))

        transmitter.kick()
        engine.run()

        assert transmitter.xmit_wait_ps() == 0
