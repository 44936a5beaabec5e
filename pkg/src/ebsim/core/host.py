"""
Host adapter model.

A host posts messages into queue pairs, one per destination and VL. Each
message waits for one stack-latency draw (doorbell, PCIe fetch and software
stack), then leaves as a train of MTU-sized packets. The receive side reassembles packets, frees the
input buffer at once and reports completed messages to whoever posted them.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from itertools import count
from typing import TYPE_CHECKING, Any, Callable, Deque, Dict, Iterator, List, Optional, Tuple

from ebsim.core.distributions import LatencyDistribution, default_stack_latency
from ebsim.core.engine import Engine, sample
from ebsim.core.errors import ConfigError, ModelInvariantError, RoutingError
from ebsim.core.link import Channel, Flit, LinkParams, Packet, PortCounters, Transmitter

if TYPE_CHECKING:
    from ebsim.core.fabric import Fabric

HOST_PORT = 1


@dataclass(frozen=True)
class HostParams:
    """
    Attributes:
        mtu: Maximum packet payload in bytes
        header_bytes: Per-packet header overhead on the wire
        stack_latency: Sender-side latency drawn once per message
    """

    mtu: int = 4096
    header_bytes: int = 30
    stack_latency: LatencyDistribution = field(default_factory=default_stack_latency)

    def __post_init__(self) -> None:
        if self.mtu < 1:
            raise ConfigError("host.mtu: must be >= 1")
        if self.header_bytes < 0:
            raise ConfigError("host.header_bytes: must be >= 0")

    @property
    def payload_efficiency(self) -> float:
        return self.mtu / (self.mtu + self.header_bytes)

    def num_packets(self, size: int) -> int:
        return -(-size // self.mtu)

    def wire_bytes(self, size: int) -> int:
        """Bytes a message of the given payload size puts on the wire."""
        return size + self.num_packets(size) * self.header_bytes

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mtu": self.mtu,
            "header_bytes": self.header_bytes,
            "stack_latency": self.stack_latency.to_dict(),
        }


class MessageKind(str, Enum):
    DATA = "data"
    REQUEST = "request"
    CONTROL = "control"


@dataclass(eq=False)
class Message:
    """
    An application-level transfer (one fragment, request or control message).

    Attributes:
        message_id: Fabric-wide id, increasing in post order
        src: Source host id
        dest: Destination host id
        size: Payload bytes (>= 1)
        vl: Virtual lane
        kind: Traffic class, only DATA counts towards goodput
        tag: Free-form identity, (event id, fragment id) for event building
        on_complete: Called with the message once its last packet arrived
    """

    message_id: int
    src: int
    dest: int
    size: int
    vl: int = 0
    kind: MessageKind = MessageKind.DATA
    tag: Optional[Tuple[int, int]] = None
    on_complete: Optional[Callable[["Message"], None]] = None
    posted_at: Optional[int] = None
    ready_at: Optional[int] = None
    completed_at: Optional[int] = None
    num_packets: int = 0
    packets_sent: int = 0
    packets_received: int = 0

    @property
    def is_local(self) -> bool:
        return self.src == self.dest

    @property
    def latency(self) -> Optional[int]:
        if self.completed_at is None or self.posted_at is None:
            return None
        return self.completed_at - self.posted_at


class WorkQueue:
    """
    Pending messages of one host: a queue pair per (destination, VL).

    Queue pairs of one VL take turns packet by packet, so a long message to
    one destination does not hold back a message to another. Inside a queue
    pair messages leave in post order.
    """

    def __init__(self, num_vls: int) -> None:
        self.pairs: List[Dict[int, Deque[Message]]] = [{} for _ in range(num_vls)]
        # destinations with queued messages, in service order
        self.active: List[Deque[int]] = [deque() for _ in range(num_vls)]
        self.last_ready: Dict[Tuple[int, int], int] = {}
        self._size = 0

    def append(self, message: Message) -> None:
        pairs = self.pairs[message.vl]
        queue = pairs.get(message.dest)
        if queue is None:
            queue = pairs[message.dest] = deque()
            self.active[message.vl].append(message.dest)
        queue.append(message)
        self._size += 1

    def next_ready(self, vl: int, now: int) -> Optional[Message]:
        """First queue pair in turn whose head message is past its stack latency."""
        pairs = self.pairs[vl]
        for dest in self.active[vl]:
            message = pairs[dest][0]
            if message.ready_at is not None and message.ready_at <= now:
                return message
        return None

    def served(self, message: Message) -> None:
        """Send the message's queue pair to the back of the round after one packet."""
        vl, dest = message.vl, message.dest
        active = self.active[vl]
        active.remove(dest)
        queue = self.pairs[vl][dest]
        if message.packets_sent == message.num_packets:
            queue.popleft()
            self._size -= 1
        if queue:
            active.append(dest)
        else:
            del self.pairs[vl][dest]

    def __len__(self) -> int:
        return self._size


PacketListener = Callable[[Packet, int], None]
CompletionListener = Callable[[Message], None]


class HostAdapter:
    """
    Generator, work queues and sink of one host.

    The adapter is the packet source of its transmitter: packets are cut
    lazily, one at a time, from the queue pair whose turn it is, once the
    head message's stack latency has elapsed.
    """

    cut_through = False

    def __init__(
        self,
        engine: Engine,
        host_id: int,
        name: str,
        link_params: LinkParams,
        params: HostParams,
        num_hosts: int,
        packet_ids: Optional[Iterator[int]] = None,
    ) -> None:
        self.engine = engine
        self.host_id = host_id
        self.name = name
        self.params = params
        self.link_params = link_params
        self.num_hosts = num_hosts
        link_params.check_packet_fits(params.mtu + params.header_bytes)
        self._packet_ids = packet_ids if packet_ids is not None else count()
        self._rng = engine.rng(f"{name}/stack")
        self.counters = PortCounters(name, HOST_PORT, link_params.num_vls)
        self.transmitter = Transmitter(engine, f"{name}:tx", self, self.counters)
        self.work_queue = WorkQueue(link_params.num_vls)
        self._current: List[Optional[Packet]] = [None] * link_params.num_vls
        self._last_completed: Dict[Tuple[int, int], int] = {}
        self.packet_listeners: List[PacketListener] = []
        self.completion_listeners: List[CompletionListener] = []
        self.messages_posted = 0
        self.messages_completed = 0
        self.wire_bytes_posted = 0
        self.payload_received = 0

    def post_message(self, message: Message) -> Message:
        """
        Queue a message for transmission after one stack-latency draw.

        A message to the host itself is a local copy: it completes after the
        stack latency without touching the network.

        Raises:
            RoutingError: If the destination does not exist
            ConfigError: If size or VL are out of range
        """
        if not 0 <= message.dest < self.num_hosts:
            raise RoutingError(f"{self.name}: no route to host {message.dest}")
        if message.size < 1:
            raise ConfigError(f"{self.name}: message size must be >= 1, got {message.size}")
        if not 0 <= message.vl < self.link_params.num_vls:
            raise ConfigError(f"{self.name}: VL{message.vl} does not exist")
        now = self.engine.now
        message.posted_at = now
        self.messages_posted += 1
        stack = sample(self._rng, self.params.stack_latency)
        if message.is_local:
            message.ready_at = now + stack
            self.engine.call_at(message.ready_at, self.name, self._complete, message)
            return message
        message.num_packets = self.params.num_packets(message.size)
        self.wire_bytes_posted += self.params.wire_bytes(message.size)
        # A message never overtakes an earlier one in its queue pair.
        pair = (message.dest, message.vl)
        ready = max(now + stack, self.work_queue.last_ready.get(pair, 0))
        self.work_queue.last_ready[pair] = ready
        message.ready_at = ready
        self.work_queue.append(message)
        if ready > now:
            self.engine.call_at(ready, self.name, self.transmitter.kick)
        else:
            self.transmitter.kick()
        return message

    def peek(self, vl: int) -> Optional[Packet]:
        packet = self._current[vl]
        if packet is not None:
            return packet
        message = self.work_queue.next_ready(vl, self.engine.now)
        if message is None:
            return None
        index = message.packets_sent
        payload = min(self.params.mtu, message.size - index * self.params.mtu)
        packet = Packet(
            packet_id=next(self._packet_ids),
            message=message,
            src=self.host_id,
            dest=message.dest,
            vl=vl,
            index=index,
            count=message.num_packets,
            payload_bytes=payload,
            wire_bytes=payload + self.params.header_bytes,
        )
        self._current[vl] = packet
        return packet

    def pop(self, vl: int) -> Packet:
        packet = self.peek(vl)
        if packet is None:
            raise ModelInvariantError(f"VL{vl} has no ready packet", component=self.name)
        self._current[vl] = None
        message = packet.message
        message.packets_sent += 1
        self.work_queue.served(message)
        return packet

    def accept_flit(self, channel: Channel, flit: Flit, packet: Packet) -> None:
        if packet.dest != self.host_id:
            raise ModelInvariantError(
                f"packet for host {packet.dest} delivered to host {self.host_id}",
                time_ps=self.engine.now,
                component=self.name,
            )
        # The sink consumes packets at line rate, so input space is freed at once.
        channel.return_credits(packet.vl, packet.blocks)
        self.on_packet_received(packet)

    def on_packet_received(self, packet: Packet) -> None:
        """
        Reassemble a message and report it when its last packet arrives.

        Raises:
            ModelInvariantError: On a duplicate or out-of-order packet
        """
        message: Message = packet.message
        if packet.index != message.packets_received:
            raise ModelInvariantError(
                f"message {message.message_id}: got packet {packet.index}, "
                f"expected {message.packets_received}",
                time_ps=self.engine.now,
                component=self.name,
            )
        message.packets_received += 1
        self.payload_received += packet.payload_bytes
        now = self.engine.now
        for listener in self.packet_listeners:
            listener(packet, now)
        if packet.is_last:
            key = (message.src, message.vl)
            if self._last_completed.get(key, -1) > message.message_id:
                raise ModelInvariantError(
                    f"message {message.message_id} from host {message.src} completed out of post order",
                    time_ps=now,
                    component=self.name,
                )
            self._last_completed[key] = message.message_id
            self._complete(message)

    def _complete(self, message: Message) -> None:
        message.completed_at = self.engine.now
        self.messages_completed += 1
        for listener in self.completion_listeners:
            listener(message)
        if message.on_complete is not None:
            message.on_complete(message)

    def is_idle(self) -> bool:
        return not len(self.work_queue) and not self.transmitter.busy


def measure_one_way_latency(fabric: "Fabric", src: int, dest: int, size: int, vl: int = 0) -> int:
    """
    Post one message on a quiet fabric and time it.

    Returns:
        completed_at - posted_at in picoseconds
    """
    message = fabric.post(src, dest, size, vl=vl)
    fabric.engine.run()
    if message.latency is None:
        raise ModelInvariantError(
            f"message {src} -> {dest} never completed", time_ps=fabric.engine.now, component="latency-measurement"
        )
    return message.latency
