"""
Switch model.

Each port has per-VL input buffers (the space advertised upstream through
credits) and per-VL output buffers feeding the port's transmitter. The model
is packet-granular and flit-accounted: buffers and credits count 64-byte
blocks, but a packet crosses the crossbar as one unit.

A packet is routed once, on arrival, into the virtual output queue of its
input port, VL and output port, so a packet waiting for a busy output never
holds back one bound for an idle output. It crosses the crossbar only when
the output buffer can hold all of it, and at that moment its input blocks
are credited back upstream, under cut-through as well.
"""

from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, List, Optional, Tuple

from ebsim.core.engine import PS_PER_NS, Engine
from ebsim.core.errors import ConfigError, ModelInvariantError
from ebsim.core.link import (
    BLOCK_BYTES,
    Channel,
    Flit,
    LinkParams,
    Packet,
    PortCounters,
    Transmitter,
)
from ebsim.core.routing import RoutingTable
from ebsim.utils.logging import get_logger

logger = get_logger("switch")


@dataclass(frozen=True)
class SwitchParams:
    """
    Attributes:
        crossbar_delay: Input-to-output forwarding latency in picoseconds
        output_buffer_blocks_per_vl: Output buffer per port per VL, in 64-byte blocks
        cut_through: Accept packets on head-flit arrival instead of tail arrival
        xmit_wait_tick: Length of one XmitWait tick in picoseconds
    """

    crossbar_delay: int = 100 * PS_PER_NS
    output_buffer_blocks_per_vl: int = 128
    cut_through: bool = False
    xmit_wait_tick: int = 1 * PS_PER_NS

    def __post_init__(self) -> None:
        if self.crossbar_delay < 0:
            raise ConfigError("crossbar delay must be >= 0")
        if self.output_buffer_blocks_per_vl < 1:
            raise ConfigError("output buffer must hold at least one block")
        if self.xmit_wait_tick < 1:
            raise ConfigError("xmit_wait_tick must be >= 1 ps")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "crossbar_delay_ns": self.crossbar_delay / PS_PER_NS,
            "output_buffer_bytes_per_vl": self.output_buffer_blocks_per_vl * BLOCK_BYTES,
            "cut_through": self.cut_through,
            "xmit_wait_tick_ns": self.xmit_wait_tick / PS_PER_NS,
        }


def route_lookup(table: RoutingTable, dest: int) -> int:
    """
    Output port for a destination host.

    Raises:
        RoutingError: If the table has no entry for dest
    """
    return table.lookup(dest)


class OutputBuffer:
    """Per-VL output queues of one port (the packet source of its transmitter)."""

    def __init__(self, switch: "Switch", port: int, num_vls: int, capacity: int) -> None:
        self.switch = switch
        self.port = port
        self.capacity = capacity
        self.queues: List[Deque[Packet]] = [deque() for _ in range(num_vls)]
        # Reserved at crossbar grant, released when transmission starts.
        self.occupancy = [0] * num_vls

    def has_room(self, vl: int, blocks: int) -> bool:
        return self.occupancy[vl] + blocks <= self.capacity

    def reserve(self, vl: int, blocks: int) -> None:
        if not self.has_room(vl, blocks):
            raise ModelInvariantError(
                f"output buffer overflow on port {self.port} VL{vl}", component=self.switch.name
            )
        self.occupancy[vl] += blocks

    def push(self, packet: Packet) -> None:
        self.queues[packet.vl].append(packet)

    def peek(self, vl: int) -> Optional[Packet]:
        queue = self.queues[vl]
        return queue[0] if queue else None

    def pop(self, vl: int) -> Packet:
        packet = self.queues[vl].popleft()
        self.occupancy[vl] -= packet.blocks
        self.switch.output_space_freed(self.port, vl)
        return packet

    def is_empty(self) -> bool:
        return not any(self.queues) and not any(self.occupancy)


class SwitchPort:
    """Input buffers, output buffers and the VL arbiter of one switch port."""

    def __init__(self, switch: "Switch", index: int, link_params: LinkParams, params: SwitchParams) -> None:
        self.index = index
        self.counters = PortCounters(switch.name, index, link_params.num_vls)
        # per VL: output port -> packets in arrival order
        self.inputs: List[Dict[int, Deque[Packet]]] = [{} for _ in range(link_params.num_vls)]
        self.output = OutputBuffer(switch, index, link_params.num_vls, params.output_buffer_blocks_per_vl)
        self.transmitter = Transmitter(
            switch.engine, f"{switch.name}:{index}:tx", self.output, self.counters
        )
        self.upstream: Optional[Channel] = None

    def vl_arbitrate(self) -> Optional[Packet]:
        return self.transmitter.vl_arbitrate()

    def queued_inputs(self) -> int:
        """Packets held in this port's input buffers, all VLs and outputs."""
        return sum(len(queue) for voqs in self.inputs for queue in voqs.values())


class Switch:
    """A switch with static lookup-table forwarding."""

    def __init__(
        self,
        engine: Engine,
        switch_id: int,
        name: str,
        num_ports: int,
        link_params: LinkParams,
        params: SwitchParams,
        table: RoutingTable,
    ) -> None:
        self.engine = engine
        self.switch_id = switch_id
        self.name = name
        self.params = params
        self.cut_through = params.cut_through
        self.table = table
        self.ports = [SwitchPort(self, index, link_params, params) for index in range(num_ports)]
        # Inputs with packets queued for (output port, VL), served round-robin.
        self._waiting: Dict[Tuple[int, int], Deque[int]] = {}

    def accept_flit(self, channel: Channel, flit: Flit, packet: Packet) -> None:
        """
        Store an arriving packet in the virtual output queue of its VL and output port.

        Called on the tail flit (store-and-forward) or the head flit (cut-through).
        """
        port = self.ports[channel.rx_port]
        out_port = route_lookup(self.table, packet.dest)
        if out_port >= len(self.ports) or self.ports[out_port].transmitter.channel is None:
            raise ModelInvariantError(
                f"route to host {packet.dest} uses unconnected port {out_port}",
                time_ps=self.engine.now,
                component=self.name,
            )
        voq = port.inputs[packet.vl].setdefault(out_port, deque())
        voq.append(packet)
        if len(voq) == 1:
            # first packet for this output: join its arbitration round
            self._waiting.setdefault((out_port, packet.vl), deque()).append(port.index)
            self._serve(out_port, packet.vl)

    def _serve(self, out_port: int, vl: int) -> None:
        waiting = self._waiting.get((out_port, vl))
        output = self.ports[out_port].output
        while waiting:
            source = self.ports[waiting[0]]
            voq = source.inputs[vl][out_port]
            packet = voq[0]
            if not output.has_room(vl, packet.blocks):
                break
            in_port = waiting.popleft()
            voq.popleft()
            output.reserve(vl, packet.blocks)
            # granted: the input blocks are free again
            assert source.upstream is not None
            source.upstream.return_credits(vl, packet.blocks)
            self.engine.call_in(
                self.params.crossbar_delay, self.name, self._crossbar_arrival, out_port, packet
            )
            if voq:
                waiting.append(in_port)

    def _crossbar_arrival(self, out_port: int, packet: Packet) -> None:
        port = self.ports[out_port]
        port.output.push(packet)
        port.transmitter.kick()

    def output_space_freed(self, out_port: int, vl: int) -> None:
        self._serve(out_port, vl)

    def is_empty(self) -> bool:
        for port in self.ports:
            if port.queued_inputs() or not port.output.is_empty():
                return False
        return True
