"""
Discrete-event engine.

Time is an integer number of picoseconds. Pending events are kept in a binary
heap ordered by (fire_at, sequence), where sequence is the insertion counter,
so two runs of the same scenario process events in exactly the same order.
"""

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Tuple

import numpy as np

from ebsim.core.errors import ContractViolation, ModelInvariantError

PS_PER_NS = 1_000
PS_PER_US = 1_000_000
PS_PER_MS = 1_000_000_000
PS_PER_S = 1_000_000_000_000

SEED_MASK = (1 << 64) - 1


def ns(value: float) -> int:
    """Convert nanoseconds to picosecond ticks."""
    return int(round(value * PS_PER_NS))


def us(value: float) -> int:
    """Convert microseconds to picosecond ticks."""
    return int(round(value * PS_PER_US))


def ms(value: float) -> int:
    """Convert milliseconds to picosecond ticks."""
    return int(round(value * PS_PER_MS))


def to_ns(ticks: int) -> float:
    return ticks / PS_PER_NS


def to_us(ticks: int) -> float:
    return ticks / PS_PER_US


@dataclass(frozen=True)
class SimEvent:
    """
    One pending event.

    Attributes:
        fire_at: Absolute firing time in picoseconds
        sequence: Insertion counter, breaks ties between equal fire_at
        target: Identifier of the component the event belongs to
        payload: Callable invoked when the event fires
        args: Positional arguments for the payload
    """

    fire_at: int
    sequence: int
    target: str
    payload: Callable[..., Any] = field(compare=False)
    args: Tuple[Any, ...] = field(default=(), compare=False)


class EventQueue:
    """Pending-event set ordered by (fire_at, sequence)."""

    def __init__(self) -> None:
        self._heap: List[Tuple[int, int, SimEvent]] = []
        self._sequence = 0
        self.last_fired = 0

    def __len__(self) -> int:
        return len(self._heap)

    def next_sequence(self) -> int:
        seq = self._sequence
        self._sequence += 1
        return seq

    def push(self, event: SimEvent) -> None:
        heapq.heappush(self._heap, (event.fire_at, event.sequence, event))

    def peek_time(self) -> Optional[int]:
        if not self._heap:
            return None
        return self._heap[0][0]

    def pop(self) -> SimEvent:
        fire_at, _, event = heapq.heappop(self._heap)
        if fire_at < self.last_fired:
            raise ModelInvariantError(
                f"event order broken: {fire_at} after {self.last_fired}",
                time_ps=fire_at,
                component=event.target,
            )
        self.last_fired = fire_at
        return event


class Engine:
    """
    Single-threaded event loop.

    An engine owns all state of one run, so independent runs can execute in
    separate processes without sharing anything.
    """

    def __init__(self, seed: int = 0, trace: bool = False) -> None:
        """
        Initialize the engine.

        Args:
            seed: Master seed; per-component random streams derive from it
            trace: Keep a running digest of every fired event
        """
        self.seed = seed & SEED_MASK
        self._queue = EventQueue()
        self._now = 0
        self._observers: List[Callable[[SimEvent], None]] = []
        self._digest = hashlib.blake2b(digest_size=16) if trace else None
        self.events_processed = 0

    @property
    def now(self) -> int:
        return self._now

    @property
    def pending(self) -> int:
        return len(self._queue)

    def schedule(self, event: SimEvent) -> None:
        """
        Insert an event.

        Raises:
            ContractViolation: If the event lies in the past
        """
        if event.fire_at < self._now:
            raise ContractViolation(
                f"event scheduled in the past (fire_at={event.fire_at}, now={self._now})",
                time_ps=self._now,
                component=event.target,
            )
        self._queue.push(event)

    def call_at(self, fire_at: int, target: str, payload: Callable[..., Any], *args: Any) -> SimEvent:
        event = SimEvent(fire_at, self._queue.next_sequence(), target, payload, args)
        self.schedule(event)
        return event

    def call_in(self, delay: int, target: str, payload: Callable[..., Any], *args: Any) -> SimEvent:
        return self.call_at(self._now + delay, target, payload, *args)

    def add_observer(self, observer: Callable[[SimEvent], None]) -> None:
        """Register a hook called after every processed event."""
        self._observers.append(observer)

    def run_until(self, end: int) -> int:
        """
        Process every event with fire_at <= end.

        Args:
            end: Inclusive time bound in picoseconds

        Returns:
            Number of events processed by this call
        """
        processed = 0
        queue = self._queue
        while True:
            next_time = queue.peek_time()
            if next_time is None or next_time > end:
                break
            event = queue.pop()
            self._now = event.fire_at
            event.payload(*event.args)
            processed += 1
            if self._digest is not None:
                self._digest.update(f"{event.fire_at}:{event.sequence}:{event.target};".encode())
            # audits see the state right after the event
            for observer in self._observers:
                observer(event)
        # pending work left: time still advances to the bound
        if len(queue) and end > self._now:
            self._now = end
        self.events_processed += processed
        return processed

    def run(self, limit: Optional[int] = None) -> int:
        """Run until the queue is empty (or the optional time limit)."""
        end = limit
        if end is None:
            end = SEED_MASK
        processed = self.run_until(end)
        return processed

    def trace_digest(self) -> str:
        if self._digest is None:
            return ""
        return self._digest.hexdigest()

    def rng(self, component_id: str) -> np.random.Generator:
        return derive_rng(self.seed, component_id)


def component_key(component_id: str) -> int:
    """Stable 64-bit key of a component identifier (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(component_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(master_seed: int, *parts: Any) -> int:
    """Derive a child seed from a master seed and a tuple of labels."""
    label = "/".join(str(part) for part in parts)
    digest = hashlib.sha256(f"{master_seed & SEED_MASK}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(master_seed: int, component_id: str) -> np.random.Generator:
    """
    Random stream of one component.

    Streams are keyed by the component identifier, so adding a component
    leaves the draws of every other component unchanged.
    """
    sequence = np.random.SeedSequence([master_seed & SEED_MASK, component_key(component_id)])
    return np.random.Generator(np.random.PCG64(sequence))


def sample(rng: np.random.Generator, dist: Any) -> int:
    """Draw one latency in picoseconds from a validated distribution."""
    return dist.sample(rng)
