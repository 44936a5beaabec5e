"""
DAQPIPE-style event builder.

Every host is both a Readout Unit (RU, owns one fragment of every event) and a
Builder Unit (BU, assembles whole events). An Event Manager (EM) hands events
to BUs round-robin, at most `credits` incomplete events per BU. A BU gathers
the fragments of an event in barrel-shift order, starting with the RU after
itself and ending with its own fragment (a local copy), keeping at most
`parallel_sends` fragments of the event in flight.

In PULL mode the BU sends a small request to the RU, which answers with the
fragment; in PUSH mode the RU is triggered directly. Scheduling is purely
completion driven: no barriers and no phase clock.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

import numpy as np

from ebsim.core.distributions import FixedSize, FragmentSizeDistribution
from ebsim.core.errors import ConfigError, ModelInvariantError
from ebsim.core.host import Message, MessageKind
from ebsim.core.traffic import Injector
from ebsim.utils.logging import get_logger

if TYPE_CHECKING:
    from ebsim.core.fabric import Fabric

logger = get_logger("daqpipe")


class DaqMode(str, Enum):
    PULL = "PULL"
    PUSH = "PUSH"


@dataclass(frozen=True)
class DaqpipeConfig:
    """
    Attributes:
        credits: Incomplete events a BU may hold (C)
        parallel_sends: Fragments of one event in flight (P)
        fragment_size: Fragment size distribution
        mode: PULL or PUSH
        events_total: Stop assigning after this many events (None: until stopped)
        request_size: PULL request message bytes
        data_vl: VL of fragments
        control_vl: VL of requests and EM control messages
        em_control_messages: Model EM assignments and completions as messages
        control_size: Bytes of one EM control message
        em_host: Host running the EM
    """

    credits: int = 1
    parallel_sends: int = 1
    fragment_size: FragmentSizeDistribution = field(default_factory=lambda: FixedSize(1 << 20))
    mode: DaqMode = DaqMode.PULL
    events_total: Optional[int] = None
    request_size: int = 64
    data_vl: int = 0
    control_vl: int = 1
    em_control_messages: bool = False
    control_size: int = 64
    em_host: int = 0

    def __post_init__(self) -> None:
        if self.credits < 1:
            raise ConfigError("traffic.credits: must be >= 1")
        if self.parallel_sends < 1:
            raise ConfigError("traffic.parallel_sends: must be >= 1")
        if self.events_total is not None and self.events_total < 0:
            raise ConfigError("traffic.events_total: must be >= 0")
        if self.request_size < 1 or self.control_size < 1:
            raise ConfigError("traffic: request and control sizes must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "daqpipe",
            "credits": self.credits,
            "parallel_sends": self.parallel_sends,
            "fragment_size": self.fragment_size.to_dict(),
            "mode": self.mode.value,
            "events_total": self.events_total,
            "request_size": self.request_size,
            "data_vl": self.data_vl,
            "control_vl": self.control_vl,
            "em_control_messages": self.em_control_messages,
            "control_size": self.control_size,
            "em_host": self.em_host,
        }


class FragmentState(str, Enum):
    PENDING = "pending"
    IN_FLIGHT = "in-flight"
    DONE = "done"


@dataclass
class DaqEvent:
    """One event being built: a fragment from every RU into one BU."""

    event_id: int
    bu: int
    sizes: Tuple[int, ...]
    t_assigned: int
    state: List[FragmentState] = field(default_factory=list)
    next_position: int = 0
    outstanding: int = 0
    done: int = 0
    t_complete: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.state:
            self.state = [FragmentState.PENDING] * len(self.sizes)

    @property
    def num_fragments(self) -> int:
        return len(self.sizes)

    @property
    def complete(self) -> bool:
        return self.done == self.num_fragments

    def ru_at(self, position: int) -> int:
        """Barrel-shift order: BU+1, BU+2, ..., BU (own fragment last)."""
        return (self.bu + 1 + position) % self.num_fragments

    @property
    def total_bytes(self) -> int:
        return sum(self.sizes)


@dataclass(frozen=True)
class DaqEventRecord:
    event_id: int
    bu: int
    t_assigned: int
    t_complete: int
    bytes: int


@dataclass
class EventManagerState:
    """Round-robin event assignment under per-BU credits."""

    num_bus: int
    credits: int
    in_flight: List[int] = field(default_factory=list)
    next_bu: int = 0
    next_event: int = 0

    def __post_init__(self) -> None:
        if not self.in_flight:
            self.in_flight = [0] * self.num_bus

    def release(self, bu: int) -> None:
        if self.in_flight[bu] <= 0:
            raise ModelInvariantError(f"EM: BU {bu} released a credit it did not hold")
        self.in_flight[bu] -= 1


def daqpipe_em_assign(em: EventManagerState) -> Optional[Tuple[int, int]]:
    """
    Assign the next event to the next BU with a free credit.

    Returns:
        (event_id, bu), or None when every BU holds `credits` events
    """
    for step in range(em.num_bus):
        bu = (em.next_bu + step) % em.num_bus
        if em.in_flight[bu] < em.credits:
            event_id = em.next_event
            em.next_event += 1
            em.in_flight[bu] += 1
            em.next_bu = (bu + 1) % em.num_bus
            return event_id, bu
    return None


def daqpipe_bu_gather(event: DaqEvent, parallel_sends: int) -> List[int]:
    """
    Open as many fragment transfers as the event window allows.

    Returns:
        RU ids to fetch now, in barrel-shift order; each is marked in flight
    """
    requested = []
    while event.outstanding < parallel_sends and event.next_position < event.num_fragments:
        ru = event.ru_at(event.next_position)
        if event.state[ru] != FragmentState.PENDING:
            raise ModelInvariantError(f"event {event.event_id}: fragment {ru} requested twice")
        event.state[ru] = FragmentState.IN_FLIGHT
        event.next_position += 1
        event.outstanding += 1
        requested.append(ru)
    return requested


def sample_fragment_size(dist: FragmentSizeDistribution, rng: np.random.Generator) -> int:
    size = dist.sample(rng)
    if size < 1:
        raise ModelInvariantError(f"fragment size {size} < 1")
    return size


class DaqpipeInjector(Injector):
    """EM, BU and RU roles of every host."""

    name = "daqpipe"

    def __init__(self, config: DaqpipeConfig) -> None:
        super().__init__()
        self.config = config
        self.num_hosts = 0
        self.em: Optional[EventManagerState] = None
        self.events: Dict[int, DaqEvent] = {}
        self.records: List[DaqEventRecord] = []
        self.max_in_flight_per_bu = 0
        self._rng: Optional[np.random.Generator] = None

    def attach(self, fabric: "Fabric") -> None:
        super().attach(fabric)
        self.num_hosts = fabric.topology.num_hosts
        if self.num_hosts < 1:
            raise ConfigError("daqpipe needs at least one host")
        num_vls = fabric.link_params.num_vls
        for label, vl in (("data_vl", self.config.data_vl), ("control_vl", self.config.control_vl)):
            if not 0 <= vl < num_vls:
                raise ConfigError(f"traffic.{label}: VL{vl} does not exist on {num_vls}-VL links")
        if not 0 <= self.config.em_host < self.num_hosts:
            raise ConfigError(f"traffic.em_host: host {self.config.em_host} does not exist")
        self.em = EventManagerState(self.num_hosts, self.config.credits)
        self._rng = fabric.engine.rng("daqpipe/fragments")

    def start(self) -> None:
        super().start()
        self._assign_events()

    # Event manager

    def _may_assign(self) -> bool:
        if not self.active:
            return False
        total = self.config.events_total
        return total is None or self.em.next_event < total

    def _assign_events(self) -> None:
        while self._may_assign():
            assignment = daqpipe_em_assign(self.em)
            if assignment is None:
                return
            event_id, bu = assignment
            self.max_in_flight_per_bu = max(self.max_in_flight_per_bu, self.em.in_flight[bu])
            if self.config.em_control_messages:
                self._post(
                    self.config.em_host,
                    bu,
                    self.config.control_size,
                    vl=self.config.control_vl,
                    kind=MessageKind.CONTROL,
                    tag=(event_id, -1),
                    on_complete=lambda _m, e=event_id, b=bu: self._begin_event(e, b),
                )
            else:
                self._begin_event(event_id, bu)

    def _em_release(self, bu: int) -> None:
        self.em.release(bu)
        self._assign_events()

    # Builder unit

    def _begin_event(self, event_id: int, bu: int) -> None:
        engine = self.fabric.engine
        sizes = tuple(
            sample_fragment_size(self.config.fragment_size, self._rng) for _ in range(self.num_hosts)
        )
        event = DaqEvent(event_id, bu, sizes, t_assigned=engine.now)
        self.events[event_id] = event
        logger.debug("event %d assigned to BU %d at t=%d ps", event_id, bu, engine.now)
        self._gather(event)

    def _gather(self, event: DaqEvent) -> None:
        for ru in daqpipe_bu_gather(event, self.config.parallel_sends):
            # own fragment and PUSH mode: no request on the wire
            if ru == event.bu or self.config.mode == DaqMode.PUSH:
                self._send_fragment(event, ru)
            else:
                self._post(
                    event.bu,
                    ru,
                    self.config.request_size,
                    vl=self.config.control_vl,
                    kind=MessageKind.REQUEST,
                    tag=(event.event_id, ru),
                    on_complete=lambda _m, ev=event, r=ru: self._send_fragment(ev, r),
                )

    # Readout unit

    def _send_fragment(self, event: DaqEvent, ru: int) -> None:
        self._post(
            ru,
            event.bu,
            event.sizes[ru],
            phase=(event.bu - ru) % self.num_hosts,
            vl=self.config.data_vl,
            kind=MessageKind.DATA,
            tag=(event.event_id, ru),
            on_complete=lambda m, ev=event, r=ru: self._fragment_done(ev, r, m),
        )

    def _fragment_done(self, event: DaqEvent, ru: int, message: Message) -> None:
        if event.state[ru] != FragmentState.IN_FLIGHT:
            raise ModelInvariantError(
                f"event {event.event_id}: fragment {ru} delivered twice",
                time_ps=self.fabric.engine.now,
                component=self.name,
            )
        event.state[ru] = FragmentState.DONE
        event.outstanding -= 1
        event.done += 1
        if event.complete:
            self._event_complete(event)
        else:
            # a free parallel-send slot goes to the next readout unit in barrel order
            self._gather(event)

    def _event_complete(self, event: DaqEvent) -> None:
        now = self.fabric.engine.now
        event.t_complete = now
        del self.events[event.event_id]
        self.records.append(
            DaqEventRecord(event.event_id, event.bu, event.t_assigned, now, event.total_bytes)
        )
        if self.config.em_control_messages:
            self._post(
                event.bu,
                self.config.em_host,
                self.config.control_size,
                vl=self.config.control_vl,
                kind=MessageKind.CONTROL,
                tag=(event.event_id, -2),
                on_complete=lambda _m, b=event.bu: self._em_release(b),
            )
        else:
            self._em_release(event.bu)

    def event_records(self) -> List[DaqEventRecord]:
        return sorted(self.records, key=lambda r: r.event_id)

    @property
    def incomplete_events(self) -> int:
        return len(self.events)
