"""
Fabric assembly.

Turns a topology and its routing into live hosts, switches and channels on
one engine, keeps the delivery statistics and exposes the conservation
checks (credit audit, drain, egress accounting) used by every experiment.
"""

from dataclasses import dataclass
from itertools import count
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from ebsim.core.engine import PS_PER_S, PS_PER_US, Engine, SimEvent
from ebsim.core.errors import ModelInvariantError, TopologyError
from ebsim.core.host import HostAdapter, HostParams, Message, MessageKind
from ebsim.core.link import Channel, LinkParams, PortCounters, Transmitter
from ebsim.core.routing import Routing
from ebsim.core.switch import Switch, SwitchParams
from ebsim.core.topology import NodeKind, PortRef, Topology
from ebsim.utils.logging import get_logger

logger = get_logger("fabric")

DEFAULT_SAMPLE_INTERVAL = 100 * PS_PER_US


@dataclass(frozen=True)
class PortSnapshot:
    """Counters of one port at the end of a run."""

    node: str
    port: int
    is_host: bool
    bytes_tx: int
    packets_tx: int
    xmit_wait_ticks: int
    max_occupancy_blocks: Tuple[int, ...]


@dataclass(frozen=True)
class CounterSet:
    """Everything a run counted, comparable for equality between runs."""

    time_ps: int
    events_processed: int
    ports: Tuple[PortSnapshot, ...]
    messages_posted: int
    messages_completed: int
    wire_bytes_posted: int
    host_egress_bytes: int
    payload_delivered: int

    def port(self, node: str, port: int) -> PortSnapshot:
        for snapshot in self.ports:
            if snapshot.node == node and snapshot.port == port:
                return snapshot
        raise KeyError(f"{node}:{port}")

    def worst_port(self) -> Optional[PortSnapshot]:
        if not self.ports:
            return None
        return max(self.ports, key=lambda p: (p.xmit_wait_ticks, p.node, p.port))


class DeliveryStats:
    """
    Goodput accounting at message completion.

    A DATA message counts towards its destination once its last packet
    arrives: the whole payload lands in the sampling interval of the
    completion time, and in the mean if it completes inside the measurement
    window [start, end). Requests, control messages and local copies never
    count, so the mean is the completed network fragment bytes over the
    window, per host.
    """

    def __init__(self, num_hosts: int, window_start: int, window_end: int, interval: int) -> None:
        if interval < 1:
            raise ValueError("sampling interval must be >= 1 ps")
        self.num_hosts = num_hosts
        self.window_start = window_start
        self.window_end = window_end
        self.interval = interval
        num_bins = max(1, -(-window_end // interval))
        self.series = np.zeros((num_bins, num_hosts), dtype=np.int64)
        self.window_bytes = np.zeros(num_hosts, dtype=np.int64)
        self.window_messages = 0

    def record(self, message: Message) -> None:
        now = message.completed_at
        if message.kind != MessageKind.DATA or message.is_local or now is None or now >= self.window_end:
            return
        # the whole message lands in the bin of its completion time
        self.series[now // self.interval, message.dest] += message.size
        if now >= self.window_start:
            self.window_bytes[message.dest] += message.size
            self.window_messages += 1

    @property
    def window_seconds(self) -> float:
        return (self.window_end - self.window_start) / PS_PER_S

    def goodput_bps(self) -> np.ndarray:
        """Mean goodput per host over the measurement window, bits per second."""
        if self.window_end <= self.window_start:
            return np.zeros(self.num_hosts)
        return self.window_bytes * 8 / self.window_seconds

    def mean_goodput_bps(self) -> float:
        if self.num_hosts == 0:
            return 0.0
        return float(self.goodput_bps().mean())


Endpoint = Union[HostAdapter, Switch]


class Fabric:
    """A simulated fabric: hosts, switches and the channels between them."""

    def __init__(
        self,
        topology: Topology,
        routing: Routing,
        link_params: Optional[LinkParams] = None,
        switch_params: Optional[SwitchParams] = None,
        host_params: Optional[HostParams] = None,
        seed: int = 0,
        audit: bool = False,
        trace: bool = False,
    ) -> None:
        """
        Build the fabric.

        Args:
            topology: Hosts, switches and cables
            routing: One table per switch
            link_params: Parameters of every link
            switch_params: Parameters of every switch
            host_params: Parameters of every host adapter
            seed: Master seed of the run
            audit: Check credit conservation after every event
            trace: Keep an event trace digest

        Raises:
            TopologyError: If routing and topology do not match
        """
        self.topology = topology
        self.link_params = link_params or LinkParams()
        self.switch_params = switch_params or SwitchParams()
        self.host_params = host_params or HostParams()
        self.engine = Engine(seed=seed, trace=trace)
        if len(routing) != topology.num_switches:
            raise TopologyError(
                f"routing has {len(routing)} tables for {topology.num_switches} switches"
            )
        self._packet_ids = count()
        self._message_ids = count()
        self.hosts = [
            HostAdapter(
                self.engine,
                host,
                name,
                self.link_params,
                self.host_params,
                topology.num_hosts,
                self._packet_ids,
            )
            for host, name in enumerate(topology.host_names)
        ]
        self.switches = [
            Switch(
                self.engine,
                switch,
                name,
                topology.switch_ports[switch],
                self.link_params,
                self.switch_params,
                routing[switch],
            )
            for switch, name in enumerate(topology.switch_names)
        ]
        self.channels: List[Channel] = []
        # one channel per direction of every cable
        for link in topology.links:
            self._connect(link.a, link.b)
            self._connect(link.b, link.a)
        self.stats: Optional[DeliveryStats] = None
        if audit:
            self.engine.add_observer(self._audit_observer)
        logger.debug(
            "fabric ready: %d hosts, %d switches, %d channels",
            len(self.hosts), len(self.switches), len(self.channels),
        )

    def _endpoint(self, ref: PortRef) -> Tuple[Endpoint, Transmitter, PortCounters]:
        if ref.kind == NodeKind.HOST:
            host = self.hosts[ref.node]
            return host, host.transmitter, host.counters
        switch = self.switches[ref.node]
        if ref.port >= len(switch.ports):
            raise TopologyError(f"{switch.name} has no port {ref.port}")
        port = switch.ports[ref.port]
        return switch, port.transmitter, port.counters

    def _connect(self, tx_ref: PortRef, rx_ref: PortRef) -> None:
        sender, transmitter, _ = self._endpoint(tx_ref)
        receiver, _, rx_counters = self._endpoint(rx_ref)
        channel = Channel(
            self.engine,
            f"{sender.name}:{tx_ref.port}->{receiver.name}:{rx_ref.port}",
            self.link_params,
            receiver,
            rx_ref.port,
            rx_counters,
        )
        transmitter.connect(channel)
        if isinstance(receiver, Switch):
            receiver.ports[rx_ref.port].upstream = channel
        self.channels.append(channel)

    def configure_stats(
        self, window_start: int, window_end: int, interval: int = DEFAULT_SAMPLE_INTERVAL
    ) -> DeliveryStats:
        """Start goodput accounting over [window_start, window_end)."""
        self.stats = DeliveryStats(len(self.hosts), window_start, window_end, interval)
        for host in self.hosts:
            host.completion_listeners.append(self.stats.record)
        return self.stats

    def post(
        self,
        src: int,
        dest: int,
        size: int,
        vl: int = 0,
        kind: MessageKind = MessageKind.DATA,
        tag: Optional[Tuple[int, int]] = None,
        on_complete: Optional[Callable[[Message], None]] = None,
    ) -> Message:
        """Create a message and post it on the source host at the current time."""
        message = Message(
            message_id=next(self._message_ids),
            src=src,
            dest=dest,
            size=size,
            vl=vl,
            kind=kind,
            tag=tag,
            on_complete=on_complete,
        )
        return self.hosts[src].post_message(message)

    def run_until(self, end: int) -> CounterSet:
        self.engine.run_until(end)
        return self.counters()

    def audit(self) -> None:
        """
        Raises:
            ModelInvariantError: If any channel breaks credit conservation
        """
        for channel in self.channels:
            channel.audit()

    def _audit_observer(self, event: SimEvent) -> None:
        self.audit()

    def buffers_empty(self) -> bool:
        """True when no packet is queued, buffered or on the wire anywhere."""
        return (
            all(channel.is_idle() for channel in self.channels)
            and all(switch.is_empty() for switch in self.switches)
            and all(host.is_idle() for host in self.hosts)
        )

    def check_egress_accounting(self) -> None:
        """
        Raises:
            ModelInvariantError: If host egress bytes differ from posted wire bytes
        """
        posted = sum(host.wire_bytes_posted for host in self.hosts)
        egress = sum(host.counters.bytes_tx for host in self.hosts)
        if posted != egress:
            raise ModelInvariantError(
                f"host egress {egress} B != posted wire bytes {posted} B", time_ps=self.engine.now
            )

    def _snapshot(self, counters: PortCounters, transmitter: Transmitter, is_host: bool) -> PortSnapshot:
        tick = self.switch_params.xmit_wait_tick
        return PortSnapshot(
            node=counters.node,
            port=counters.port,
            is_host=is_host,
            bytes_tx=counters.bytes_tx,
            packets_tx=counters.packets_tx,
            xmit_wait_ticks=transmitter.xmit_wait_ps() // tick,
            max_occupancy_blocks=tuple(counters.max_occupancy_blocks),
        )

    def counters(self) -> CounterSet:
        ports = [self._snapshot(h.counters, h.transmitter, True) for h in self.hosts]
        for switch in self.switches:
            for port in switch.ports:
                if port.transmitter.channel is not None:
                    ports.append(self._snapshot(port.counters, port.transmitter, False))
        return CounterSet(
            time_ps=self.engine.now,
            events_processed=self.engine.events_processed,
            ports=tuple(ports),
            messages_posted=sum(h.messages_posted for h in self.hosts),
            messages_completed=sum(h.messages_completed for h in self.hosts),
            wire_bytes_posted=sum(h.wire_bytes_posted for h in self.hosts),
            host_egress_bytes=sum(h.counters.bytes_tx for h in self.hosts),
            payload_delivered=sum(h.payload_received for h in self.hosts),
        )

    def port_counters(self) -> Dict[Tuple[str, int], PortSnapshot]:
        return {(p.node, p.port): p for p in self.counters().ports}
