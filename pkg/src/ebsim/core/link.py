"""
Point-to-point link model.

A link is two independent channels, one per direction. Channels are
packet-granular and flit-accounted: a packet is one event on the wire, but
its serialization time, credits and buffer space are counted in 64-byte
flits. Flow control is InfiniBand-style and per virtual lane: the sender
holds credits for the receiver's input buffer in 64-byte blocks, spends them
for a whole packet before it starts serializing, and gets them back one
propagation delay after the receiver frees the space.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol

from ebsim.core.engine import PS_PER_NS, PS_PER_S, Engine
from ebsim.core.errors import ConfigError, ModelInvariantError

BLOCK_BYTES = 64
MAX_VLS = 15


def blocks_for(num_bytes: int) -> int:
    """Number of 64-byte credit blocks needed for num_bytes."""
    return -(-num_bytes // BLOCK_BYTES)


@dataclass(frozen=True)
class LinkParams:
    """
    Physical and flow-control parameters shared by every link of a fabric.

    Attributes:
        data_rate_bps: Data rate after line encoding, bits per second
        propagation_delay: One-way delay in picoseconds
        num_vls: Number of data virtual lanes
        buffer_blocks_per_vl: Receiver input buffer per VL, in 64-byte blocks
    """

    data_rate_bps: int = 100 * 10**9
    propagation_delay: int = 170 * PS_PER_NS
    num_vls: int = 4
    buffer_blocks_per_vl: int = 1024

    def __post_init__(self) -> None:
        if self.data_rate_bps <= 0:
            raise ConfigError("link data rate must be > 0")
        if self.propagation_delay < 0:
            raise ConfigError("link propagation delay must be >= 0")
        if not 1 <= self.num_vls <= MAX_VLS:
            raise ConfigError(f"num_vls must be within [1, {MAX_VLS}], got {self.num_vls}")
        if self.buffer_blocks_per_vl < 1:
            raise ConfigError("buffer_blocks_per_vl must be >= 1")

    @property
    def buffer_bytes_per_vl(self) -> int:
        return self.buffer_blocks_per_vl * BLOCK_BYTES

    @property
    def flit_time(self) -> int:
        return serialization_time(BLOCK_BYTES, self)

    def check_packet_fits(self, wire_bytes: int) -> None:
        """
        Raises:
            ConfigError: If one packet needs more credits than a whole VL buffer holds
        """
        if blocks_for(wire_bytes) > self.buffer_blocks_per_vl:
            raise ConfigError(
                f"packet of {wire_bytes} B ({blocks_for(wire_bytes)} blocks) exceeds the "
                f"{self.buffer_blocks_per_vl}-block VL buffer"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "data_rate_gbps": self.data_rate_bps / 1e9,
            "propagation_delay_ns": self.propagation_delay / PS_PER_NS,
            "num_vls": self.num_vls,
            "buffer_bytes_per_vl": self.buffer_bytes_per_vl,
        }


def serialization_time(num_bytes: int, params: LinkParams) -> int:
    """
    Time to put num_bytes on the wire, rounded up to a whole picosecond.

    Args:
        num_bytes: Bytes to serialize (> 0)
        params: Link parameters

    Returns:
        Serialization time in picoseconds
    """
    if num_bytes <= 0:
        raise ValueError(f"num_bytes must be > 0, got {num_bytes}")
    return -(-num_bytes * 8 * PS_PER_S // params.data_rate_bps)


@dataclass(frozen=True)
class Flit:
    """
    One 64-byte flow-control unit of a packet.

    Only the flit that hands a packet to its receiver is materialized: the
    head under cut-through, the tail otherwise.
    """

    packet_id: int
    index_in_packet: int
    num_flits: int
    vl: int

    @property
    def is_head(self) -> bool:
        return self.index_in_packet == 0

    @property
    def is_tail(self) -> bool:
        return self.index_in_packet == self.num_flits - 1


@dataclass(eq=False)
class Packet:
    """
    A wire packet: up to one MTU of payload plus the header.

    Attributes:
        packet_id: Fabric-wide unique id
        message: The message this packet belongs to
        src: Source host id
        dest: Destination host id
        vl: Virtual lane
        index: Position inside the message (0-based)
        count: Number of packets of the message
        payload_bytes: Application bytes carried
        wire_bytes: payload_bytes plus header bytes
    """

    packet_id: int
    message: Any
    src: int
    dest: int
    vl: int
    index: int
    count: int
    payload_bytes: int
    wire_bytes: int
    blocks: int = field(init=False)

    def __post_init__(self) -> None:
        self.blocks = blocks_for(self.wire_bytes)

    @property
    def is_last(self) -> bool:
        return self.index == self.count - 1

    def head_flit(self) -> Flit:
        return Flit(self.packet_id, 0, self.blocks, self.vl)

    def tail_flit(self) -> Flit:
        return Flit(self.packet_id, self.blocks - 1, self.blocks, self.vl)


class CreditState:
    """Sender-side view of free receiver buffer blocks, per VL."""

    def __init__(self, num_vls: int, capacity: int) -> None:
        self.capacity = capacity
        self.free_blocks: List[int] = [capacity] * num_vls

    def can_send(self, vl: int, blocks: int) -> bool:
        return self.free_blocks[vl] >= blocks

    def consume(self, vl: int, blocks: int) -> None:
        if blocks > self.free_blocks[vl]:
            raise ModelInvariantError(
                f"VL{vl}: spending {blocks} blocks with only {self.free_blocks[vl]} credits"
            )
        self.free_blocks[vl] -= blocks

    def restore(self, vl: int, blocks: int) -> None:
        if self.free_blocks[vl] + blocks > self.capacity:
            raise ModelInvariantError(
                f"VL{vl}: credit over-return ({self.free_blocks[vl]} + {blocks} > {self.capacity})"
            )
        self.free_blocks[vl] += blocks


class Receiver(Protocol):
    """Anything at the far end of a channel: a switch or a host adapter."""

    name: str
    cut_through: bool

    def accept_flit(self, channel: "Channel", flit: Flit, packet: Packet) -> None: ...


@dataclass
class PortCounters:
    """
    Performance counters of one port.

    xmit_wait_ps accumulates time with a queued packet but no VL holding
    enough credits; it is reported in ticks of the configured length.
    """

    node: str
    port: int
    num_vls: int
    bytes_tx: int = 0
    packets_tx: int = 0
    xmit_wait_ps: int = 0
    max_occupancy_blocks: List[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.max_occupancy_blocks:
            self.max_occupancy_blocks = [0] * self.num_vls


class Channel:
    """
    One direction of a link, from a transmitter to a receiver.

    Credit conservation, checked by audit():
        free_blocks + in_flight + occupancy + returning == buffer_blocks_per_vl
    where in_flight counts blocks of packets on the wire, occupancy blocks held
    in the receiver's input buffer and returning blocks whose credits travel back.
    """

    def __init__(
        self,
        engine: Engine,
        name: str,
        params: LinkParams,
        receiver: Receiver,
        rx_port: int,
        rx_counters: PortCounters,
    ) -> None:
        self.engine = engine
        self.name = name
        self.params = params
        self.receiver = receiver
        self.rx_port = rx_port
        self.rx_counters = rx_counters
        self.sender: Optional["Transmitter"] = None
        self.credits = CreditState(params.num_vls, params.buffer_blocks_per_vl)
        self.in_flight = [0] * params.num_vls
        self.occupancy = [0] * params.num_vls
        self.returning = [0] * params.num_vls

    def deliver(self, packet: Packet, flit: Flit) -> None:
        handover = flit.is_head if self.receiver.cut_through else flit.is_tail
        if flit.packet_id != packet.packet_id or not handover:
            raise ModelInvariantError(
                f"packet {packet.packet_id} handed over on flit {flit.index_in_packet} of {flit.num_flits}",
                time_ps=self.engine.now,
                component=self.name,
            )
        vl = packet.vl
        self.in_flight[vl] -= packet.blocks
        self.occupancy[vl] += packet.blocks
        if self.occupancy[vl] > self.params.buffer_blocks_per_vl:
            raise ModelInvariantError(
                f"input buffer overflow on VL{vl}: {self.occupancy[vl]} blocks",
                time_ps=self.engine.now,
                component=self.name,
            )
        if self.occupancy[vl] > self.rx_counters.max_occupancy_blocks[vl]:
            self.rx_counters.max_occupancy_blocks[vl] = self.occupancy[vl]
        self.receiver.accept_flit(self, flit, packet)

    def return_credits(self, vl: int, blocks: int) -> None:
        return_credits(self, vl, blocks)

    def _credit_arrival(self, vl: int, blocks: int) -> None:
        self.returning[vl] -= blocks
        try:
            self.credits.restore(vl, blocks)
        except ModelInvariantError as e:
            raise ModelInvariantError(str(e), time_ps=self.engine.now, component=self.name)
        if self.sender is not None:
            self.sender.kick()

    def audit(self) -> None:
        """
        Raises:
            ModelInvariantError: If any VL breaks credit conservation
        """
        capacity = self.params.buffer_blocks_per_vl
        for vl in range(self.params.num_vls):
            free = self.credits.free_blocks[vl]
            total = free + self.in_flight[vl] + self.occupancy[vl] + self.returning[vl]
            if total != capacity or min(free, self.in_flight[vl], self.occupancy[vl], self.returning[vl]) < 0:
                raise ModelInvariantError(
                    f"credit conservation broken on VL{vl}: free={free} in_flight={self.in_flight[vl]} "
                    f"occupancy={self.occupancy[vl]} returning={self.returning[vl]} capacity={capacity}",
                    time_ps=self.engine.now,
                    component=self.name,
                )

    def is_idle(self) -> bool:
        return not any(self.in_flight) and not any(self.occupancy) and not any(self.returning)


def try_send_packet(channel: Channel, packet: Packet) -> bool:
    """
    Start serializing a packet if the receiver has room for all of it.

    The packet is scheduled as a single delivery: one propagation delay after
    its tail leaves (store-and-forward receiver) or after its head flit
    leaves (cut-through receiver). Intermediate flits are not simulated.

    Args:
        channel: Outgoing channel
        packet: Fully formed packet

    Returns:
        True if the credits were taken and the packet is on the wire
    """
    params = channel.params
    if not 0 <= packet.vl < params.num_vls:
        raise ModelInvariantError(
            f"packet on VL{packet.vl} but link has {params.num_vls} VLs", component=channel.name
        )
    if not channel.credits.can_send(packet.vl, packet.blocks):
        return False
    channel.credits.consume(packet.vl, packet.blocks)
    channel.in_flight[packet.vl] += packet.blocks
    engine = channel.engine
    if channel.receiver.cut_through:
        head_time = serialization_time(min(BLOCK_BYTES, packet.wire_bytes), params)
        arrival = engine.now + head_time + params.propagation_delay
        flit = packet.head_flit()
    else:
        arrival = engine.now + serialization_time(packet.wire_bytes, params) + params.propagation_delay
        flit = packet.tail_flit()
    engine.call_at(arrival, channel.name, channel.deliver, packet, flit)
    return True


def return_credits(channel: Channel, vl: int, blocks: int) -> None:
    """
    Free receiver buffer space; the sender sees the credits one propagation delay later.
    """
    if blocks > channel.occupancy[vl]:
        raise ModelInvariantError(
            f"freeing {blocks} blocks on VL{vl} with only {channel.occupancy[vl]} occupied",
            time_ps=channel.engine.now,
            component=channel.name,
        )
    channel.occupancy[vl] -= blocks
    channel.returning[vl] += blocks
    channel.engine.call_in(
        channel.params.propagation_delay, channel.name, channel._credit_arrival, vl, blocks
    )


class PacketSource(Protocol):
    """Per-VL packet queues feeding a transmitter."""

    def peek(self, vl: int) -> Optional[Packet]: ...

    def pop(self, vl: int) -> Packet: ...


class Transmitter:
    """
    Output side of a port: VL arbitration, serialization and XmitWait accounting.

    Arbitration is round-robin over VLs at packet boundaries; a VL is eligible
    when its oldest packet is ready and the peer has credits for all of it.
    """

    def __init__(self, engine: Engine, name: str, source: PacketSource, counters: PortCounters) -> None:
        self.engine = engine
        self.name = name
        self.source = source
        self.counters = counters
        self.channel: Optional[Channel] = None
        self.busy = False
        self._next_vl = 0
        self._starved = False
        self._stall_since: Optional[int] = None

    def connect(self, channel: Channel) -> None:
        self.channel = channel
        channel.sender = self

    def vl_arbitrate(self) -> Optional[Packet]:
        """
        Pick the next packet to transmit.

        Returns:
            The selected packet, or None if no VL is eligible
        """
        assert self.channel is not None
        credits = self.channel.credits
        num_vls = len(credits.free_blocks)
        queued = False
        for step in range(num_vls):
            vl = (self._next_vl + step) % num_vls
            packet = self.source.peek(vl)
            if packet is None:
                continue
            queued = True
            if credits.can_send(vl, packet.blocks):
                self._next_vl = (vl + 1) % num_vls
                self._starved = False
                return packet
        self._starved = queued
        return None

    def kick(self) -> None:
        """Try to start a transmission; called whenever something may have changed."""
        if self.busy or self.channel is None:
            return
        packet = self.vl_arbitrate()
        if packet is None:
            if self._starved:
                if self._stall_since is None:
                    self._stall_since = self.engine.now
            else:
                self._close_stall()
            return
        self._close_stall()
        self.source.pop(packet.vl)
        if not try_send_packet(self.channel, packet):
            raise ModelInvariantError(
                "arbiter picked a packet without credits", time_ps=self.engine.now, component=self.name
            )
        self.busy = True
        self.counters.bytes_tx += packet.wire_bytes
        self.counters.packets_tx += 1
        self.engine.call_in(
            serialization_time(packet.wire_bytes, self.channel.params), self.name, self._tail_sent, packet
        )

    def _tail_sent(self, packet: Packet) -> None:
        self.busy = False
        self.kick()

    def _close_stall(self) -> None:
        if self._stall_since is not None:
            self.counters.xmit_wait_ps += self.engine.now - self._stall_since
            self._stall_since = None

    def xmit_wait_ps(self) -> int:
        """XmitWait including a stall still open at the current time."""
        open_stall = 0
        if self._stall_since is not None:
            open_stall = self.engine.now - self._stall_since
        return self.counters.xmit_wait_ps + open_stall
