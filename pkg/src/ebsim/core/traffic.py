"""
Traffic injectors.

Every injector is attached to a fabric, started at time zero and stopped at
the end of the measurement period; after stop() it posts nothing new, while
messages already posted keep draining.

Linear shifting: in phase n node i sends to (n + i) mod N. Phase 0 is the
node itself, so shifters run phases 1..N-1 and skip the self phase.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Sequence, Tuple

from ebsim.core.engine import PS_PER_NS, PS_PER_US
from ebsim.core.errors import ConfigError
from ebsim.core.host import Message, MessageKind
from ebsim.core.link import serialization_time
from ebsim.utils.logging import get_logger

if TYPE_CHECKING:
    from ebsim.core.fabric import Fabric

logger = get_logger("traffic")

SHIFTER_KINDS = ("fixed_size", "time_window")


def shifter_dest(node: int, phase: int, num_nodes: int) -> int:
    """Destination of node in a linear-shift phase: (phase + node) mod num_nodes."""
    if not 0 <= node < num_nodes:
        raise ValueError(f"node {node} out of range [0, {num_nodes})")
    return (phase + node) % num_nodes


@dataclass(frozen=True)
class ShifterConfig:
    """
    Attributes:
        kind: "fixed_size" or "time_window"
        message_size: Bytes per posted message
        chunk_size: Bytes a fixed-size shifter sends before shifting
        window: Time-window length in picoseconds
        grace: Idle tail of every window in picoseconds
        vl: Virtual lane of the traffic
        max_outstanding: Messages a node keeps posted but not completed
    """

    kind: str = "time_window"
    message_size: int = 1 << 20
    chunk_size: int = 1 << 20
    window: int = 1_000 * PS_PER_US
    grace: int = 0
    vl: int = 0
    max_outstanding: int = 2

    def __post_init__(self) -> None:
        if self.kind not in SHIFTER_KINDS:
            raise ConfigError(f"traffic.kind: must be one of {', '.join(SHIFTER_KINDS)}")
        if self.message_size < 1:
            raise ConfigError("traffic.message_size: must be >= 1")
        if self.chunk_size < 1:
            raise ConfigError("traffic.chunk_size: must be >= 1")
        if self.window < 1:
            raise ConfigError("traffic.window_us: must be > 0")
        if not 0 <= self.grace < self.window:
            raise ConfigError("traffic.grace_us: must satisfy 0 <= grace < window")
        if self.max_outstanding < 1:
            raise ConfigError("traffic.max_outstanding: must be >= 1")

    @property
    def duty_cycle(self) -> float:
        return (self.window - self.grace) / self.window

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "kind": self.kind,
            "message_size": self.message_size,
            "vl": self.vl,
            "max_outstanding": self.max_outstanding,
        }
        if self.kind == "fixed_size":
            data["chunk_size"] = self.chunk_size
        else:
            data["window_us"] = self.window / PS_PER_US
            data["grace_us"] = self.grace / PS_PER_US
        return data


@dataclass(frozen=True)
class PostRecord:
    """One message posted by an injector."""

    time_ps: int
    src: int
    dest: int
    size: int
    phase: int


class Injector:
    """Base class: attach, start, stop and the post log."""

    name = "injector"

    def __init__(self) -> None:
        self.fabric: Optional["Fabric"] = None
        self.active = False
        self.posts: List[PostRecord] = []

    def attach(self, fabric: "Fabric") -> None:
        self.fabric = fabric

    def start(self) -> None:
        if self.fabric is None:
            raise RuntimeError(f"{self.name}: attach() before start()")
        self.active = True

    def stop(self) -> None:
        if self.active:
            logger.debug("%s stopped at t=%d ps after %d posts", self.name, self.fabric.engine.now, len(self.posts))
        self.active = False

    def _post(
        self,
        src: int,
        dest: int,
        size: int,
        phase: int = 0,
        vl: int = 0,
        kind: MessageKind = MessageKind.DATA,
        on_complete: Optional[Callable[[Message], None]] = None,
        tag: Optional[Tuple[int, int]] = None,
    ) -> Message:
        assert self.fabric is not None
        self.posts.append(PostRecord(self.fabric.engine.now, src, dest, size, phase))
        return self.fabric.post(src, dest, size, vl=vl, kind=kind, tag=tag, on_complete=on_complete)

    @property
    def bytes_posted(self) -> int:
        return sum(post.size for post in self.posts)

    def event_records(self) -> List[Any]:
        return []


@dataclass
class ShifterNode:
    """Per-node state of a shifter."""

    node: int
    phase: int = 1
    posted_in_phase: int = 0
    outstanding: int = 0
    busy_until: int = 0


@dataclass(frozen=True)
class ShifterPost:
    dest: int
    size: int
    phase: int


def fixed_size_shifter_step(state: ShifterNode, config: ShifterConfig, num_nodes: int) -> ShifterPost:
    """
    Next message of a fixed-size shifter node.

    The node stays in its phase until chunk_size bytes went to the phase's
    destination, then moves to the next phase on its own, skipping the self
    phase. Nodes never synchronize with each other.
    """
    if state.posted_in_phase >= config.chunk_size:
        state.phase += 1
        if state.phase % num_nodes == 0:
            state.phase += 1
        state.posted_in_phase = 0
    state.posted_in_phase += config.message_size
    return ShifterPost(shifter_dest(state.node, state.phase, num_nodes), config.message_size, state.phase)


def time_window_phase(now: int, config: ShifterConfig, num_nodes: int) -> int:
    """
    Global phase at time now.

    Windows cycle through phases 1..N-1 and skip phase 0, the self phase in
    which every node would send to itself, so one cycle is N-1 windows long.
    """
    return 1 + (now // config.window) % (num_nodes - 1)


def time_window_shifter_step(
    state: ShifterNode, config: ShifterConfig, num_nodes: int, now: int, wire_time: int
) -> Optional[ShifterPost]:
    """
    Next message of a time-window shifter node, or None while idling.

    Sending is allowed while now mod window < window - grace. With a grace
    period a message is only posted if the node's backlog plus the message's
    own serialization ends before the cutoff; with grace 0 posting is
    unrestricted. Messages already posted always drain.

    Args:
        state: Node state (busy_until is advanced when a message is returned)
        config: Shifter configuration
        num_nodes: N
        now: Current time
        wire_time: Serialization time of one message with headers
    """
    window_start = now - now % config.window
    cutoff = window_start + config.window - config.grace
    if now >= cutoff:
        return None
    start = max(now, state.busy_until)
    if config.grace > 0 and start + wire_time > cutoff:
        return None
    state.busy_until = start + wire_time
    phase = time_window_phase(now, config, num_nodes)
    return ShifterPost(shifter_dest(state.node, phase, num_nodes), config.message_size, phase)


class _Shifter(Injector):
    def __init__(self, config: ShifterConfig, nodes: Optional[Sequence[int]] = None) -> None:
        super().__init__()
        self.config = config
        self._node_ids = nodes
        self.nodes: List[ShifterNode] = []
        self.num_nodes = 0

    def attach(self, fabric: "Fabric") -> None:
        super().attach(fabric)
        self.num_nodes = fabric.topology.num_hosts
        if self.num_nodes < 2:
            raise ConfigError("a linear shifter needs at least 2 hosts")
        ids = range(self.num_nodes) if self._node_ids is None else self._node_ids
        self.nodes = [ShifterNode(node) for node in ids]

    def _completed(self, state: ShifterNode) -> None:
        state.outstanding -= 1
        if self.active:
            self._fill(state)

    def _fill(self, state: ShifterNode) -> None:
        raise NotImplementedError


class FixedSizeShifter(_Shifter):
    """Shifts destination after a fixed number of bytes, node by node."""

    name = "fixed-size-shifter"

    def start(self) -> None:
        super().start()
        for state in self.nodes:
            self._fill(state)

    def _fill(self, state: ShifterNode) -> None:
        while state.outstanding < self.config.max_outstanding:
            post = fixed_size_shifter_step(state, self.config, self.num_nodes)
            state.outstanding += 1
            self._post(
                state.node,
                post.dest,
                post.size,
                phase=post.phase,
                vl=self.config.vl,
                on_complete=lambda _m, s=state: self._completed(s),
            )


class TimeWindowShifter(_Shifter):
    """Globally synchronous shifter: one phase per window, idle during the grace period."""

    name = "time-window-shifter"

    def attach(self, fabric: "Fabric") -> None:
        super().attach(fabric)
        params = fabric.host_params
        self.wire_time = serialization_time(params.wire_bytes(self.config.message_size), fabric.link_params)

    def start(self) -> None:
        super().start()
        self._window_start()

    def _window_start(self) -> None:
        if not self.active:
            return
        engine = self.fabric.engine
        phase = time_window_phase(engine.now, self.config, self.num_nodes)
        logger.debug("window at t=%d ps: phase %d", engine.now, phase)
        for state in self.nodes:
            self._fill(state)
        engine.call_in(self.config.window, self.name, self._window_start)

    def _fill(self, state: ShifterNode) -> None:
        now = self.fabric.engine.now
        while state.outstanding < self.config.max_outstanding:
            post = time_window_shifter_step(state, self.config, self.num_nodes, now, self.wire_time)
            if post is None:
                return
            state.outstanding += 1
            self._post(
                state.node,
                post.dest,
                post.size,
                phase=post.phase,
                vl=self.config.vl,
                on_complete=lambda _m, s=state: self._completed(s),
            )


@dataclass(frozen=True)
class StreamConfig:
    src: int
    dest: int
    message_size: int = 1 << 20
    vl: int = 0
    max_outstanding: int = 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "stream",
            "src": self.src,
            "dest": self.dest,
            "message_size": self.message_size,
            "vl": self.vl,
            "max_outstanding": self.max_outstanding,
        }


class StreamInjector(Injector):
    """One host keeps a continuous full-speed stream to one destination."""

    name = "stream"

    def __init__(self, config: StreamConfig) -> None:
        super().__init__()
        self.config = config
        self.outstanding = 0

    def start(self) -> None:
        super().start()
        self._fill()

    def _fill(self) -> None:
        while self.active and self.outstanding < self.config.max_outstanding:
            self.outstanding += 1
            self._post(
                self.config.src,
                self.config.dest,
                self.config.message_size,
                vl=self.config.vl,
                on_complete=self._completed,
            )

    def _completed(self, message: Message) -> None:
        self.outstanding -= 1
        self._fill()


@dataclass(frozen=True)
class PingEntry:
    """A message posted at a fixed time."""

    time_ps: int
    src: int
    dest: int
    size: int
    vl: int = 0


class PingInjector(Injector):
    """Posts a fixed list of messages at their scheduled times."""

    name = "ping"

    def __init__(self, entries: Sequence[PingEntry] = ()) -> None:
        super().__init__()
        self.entries = sorted(entries, key=lambda entry: entry.time_ps)
        self.messages: List[Message] = []

    def start(self) -> None:
        super().start()
        engine = self.fabric.engine
        for entry in self.entries:
            engine.call_at(max(entry.time_ps, engine.now), self.name, self._fire, entry)

    def _fire(self, entry: PingEntry) -> None:
        if not self.active:
            return
        self.messages.append(self._post(entry.src, entry.dest, entry.size, vl=entry.vl))

    def latencies(self) -> List[Optional[int]]:
        return [message.latency for message in self.messages]


@dataclass(frozen=True)
class PingConfig:
    entries: Tuple[PingEntry, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "ping",
            "messages": [
                {
                    "time_ns": entry.time_ps / PS_PER_NS,
                    "src": entry.src,
                    "dest": entry.dest,
                    "size": entry.size,
                    "vl": entry.vl,
                }
                for entry in self.entries
            ],
        }
