"""
Tests for the traffic injectors: linear shifters, streams and pings.
"""

import pytest

from ebsim.core.distributions import DeterministicLatency
from ebsim.core.errors import ConfigError
from ebsim.core.fabric import Fabric
from ebsim.core.host import HostParams
from ebsim.core.routing import compute_routing
from ebsim.core.topology import direct_topology, parse_topology, star_topology
from ebsim.core.traffic import (
    FixedSizeShifter,
    PingEntry,
    PingInjector,
    ShifterConfig,
    ShifterNode,
    StreamConfig,
    StreamInjector,
    TimeWindowShifter,
    fixed_size_shifter_step,
    shifter_dest,
    time_window_phase,
    time_window_shifter_step,
)

US = 1_000_000


def quiet_fabric(topology):
    return Fabric(
        topology,
        compute_routing(topology),
        host_params=HostParams(stack_latency=DeterministicLatency(800_000)),
        audit=True,
    )


def run_injector(fabric, injector, until):
    injector.attach(fabric)
    injector.start()
    fabric.run_until(until)
    injector.stop()
    posted = len(injector.posts)
    fabric.engine.run()
    return posted


class TestShifterDest:
    """(phase + node) mod N."""

    def test_wraps(self):
        assert shifter_dest(6, 3, 8) == 1
        assert shifter_dest(0, 0, 8) == 0

    def test_node_out_of_range(self):
        with pytest.raises(ValueError):
            shifter_dest(8, 1, 8)


class TestShifterConfig:
    """Validation of shifter parameters."""

    def test_duty_cycle(self):
        config = ShifterConfig(window=1000 * US, grace=100 * US)

        assert config.duty_cycle == pytest.approx(0.9)
        assert config.to_dict()["grace_us"] == 100

    def test_fixed_size_echo(self):
        data = ShifterConfig(kind="fixed_size", chunk_size=4096).to_dict()

        assert data["chunk_size"] == 4096
        assert "window_us" not in data

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "random"},
            {"message_size": 0},
            {"chunk_size": 0},
            {"window": 0},
            {"grace": 1000 * US},
            {"grace": -1},
            {"max_outstanding": 0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ShifterConfig(**kwargs)


class TestFixedSizeStep:
    """Node-local phase advance."""

    def test_shifts_after_chunk_and_skips_self(self):
        config = ShifterConfig(kind="fixed_size", message_size=1 << 20, chunk_size=2 << 20)
        state = ShifterNode(0)

        dests = [fixed_size_shifter_step(state, config, 4).dest for _ in range(8)]

        assert dests == [1, 1, 2, 2, 3, 3, 1, 1]

    def test_nodes_are_independent(self):
        config = ShifterConfig(kind="fixed_size", message_size=100, chunk_size=100)
        fast, slow = ShifterNode(0), ShifterNode(1)

        for _ in range(3):
            fixed_size_shifter_step(fast, config, 4)
        post = fixed_size_shifter_step(slow, config, 4)

        assert fast.phase == 3
        assert post.phase == 1
        assert post.dest == 2


class TestTimeWindowStep:
    """Global phases and the grace cutoff."""

    def test_phase_cycles_without_self(self):
        config = ShifterConfig(window=1000)

        phases = [time_window_phase(t, config, 4) for t in (0, 999, 1000, 2000, 3000)]

        assert phases == [1, 1, 2, 3, 1]

    def test_grace_stops_messages_that_would_overrun(self):
        config = ShifterConfig(window=1000, grace=200)
        state = ShifterNode(2)

        first = time_window_shifter_step(state, config, 4, 0, 300)
        second = time_window_shifter_step(state, config, 4, 0, 300)
        third = time_window_shifter_step(state, config, 4, 0, 300)

        assert (first.dest, second.dest) == (3, 3)
        assert third is None
        assert state.busy_until == 600

    def test_nothing_during_grace(self):
        config = ShifterConfig(window=1000, grace=200)

        assert time_window_shifter_step(ShifterNode(0), config, 4, 850, 10) is None

    def test_zero_grace_is_unrestricted(self):
        config = ShifterConfig(window=1000, grace=0)
        state = ShifterNode(0, busy_until=5000)

        post = time_window_shifter_step(state, config, 4, 999, 300)

        assert post is not None
        assert post.phase == 1
        assert state.busy_until == 5300


class TestTimeWindowShifter:
    """Synchronous shifting on a fabric."""

    def setup_method(self):
        self.fabric = quiet_fabric(star_topology(4))
        self.config = ShifterConfig(message_size=64 << 10, window=100 * US, grace=20 * US)
        self.injector = TimeWindowShifter(self.config)
        self.posted = run_injector(self.fabric, self.injector, 300 * US)

    def test_posts_follow_the_window_phase(self):
        assert self.posted > 0
        for post in self.injector.posts:
            assert post.phase == time_window_phase(post.time_ps, self.config, 4)
            assert post.dest == (post.phase + post.src) % 4
            assert post.dest != post.src

    def test_no_post_inside_grace(self):
        for post in self.injector.posts:
            assert post.time_ps % self.config.window < self.config.window - self.config.grace

    def test_every_phase_visited(self):
        assert {post.phase for post in self.injector.posts} == {1, 2, 3}

    def test_stop_posts_nothing_new(self):
        assert len(self.injector.posts) == self.posted
        assert self.fabric.buffers_empty()

    def test_needs_two_hosts(self):
        fabric = quiet_fabric(parse_topology("HOST a 1 -- SWITCH s 0\n"))

        with pytest.raises(ConfigError, match="at least 2"):
            TimeWindowShifter(self.config).attach(fabric)


class TestFixedSizeShifter:
    """Asynchronous shifting on a fabric."""

    def test_each_node_walks_its_phases(self):
        fabric = quiet_fabric(star_topology(4))
        config = ShifterConfig(kind="fixed_size", message_size=64 << 10, chunk_size=128 << 10)
        injector = FixedSizeShifter(config)

        run_injector(fabric, injector, 200 * US)

        for src in range(4):
            phases = [post.phase for post in injector.posts if post.src == src]
            assert phases == sorted(phases)
            assert all(phases.count(p) == 2 for p in set(phases[:-2]))
        assert all(post.dest != post.src for post in injector.posts)
        assert fabric.buffers_empty()

    def test_start_requires_attach(self):
        with pytest.raises(RuntimeError, match="attach"):
            FixedSizeShifter(ShifterConfig(kind="fixed_size")).start()


class TestStreamInjector:
    """Continuous single-pair traffic."""

    def test_keeps_outstanding_messages(self):
        fabric = quiet_fabric(direct_topology())
        injector = StreamInjector(StreamConfig(src=0, dest=1, message_size=4096, max_outstanding=3))
        injector.attach(fabric)
        injector.start()

        assert len(injector.posts) == 3
        assert injector.outstanding == 3

        fabric.run_until(50 * US)
        injector.stop()
        fabric.engine.run()

        assert injector.outstanding == 0
        assert injector.bytes_posted == 4096 * len(injector.posts)
        assert StreamConfig(0, 1).to_dict()["kind"] == "stream"


class TestPingInjector:
    """Messages at fixed times."""

    def test_posts_at_scheduled_times(self):
        fabric = quiet_fabric(direct_topology())
        injector = PingInjector([PingEntry(5 * US, 1, 0, 8), PingEntry(0, 0, 1, 8)])

        run_injector(fabric, injector, 10 * US)

        assert [m.posted_at for m in injector.messages] == [0, 5 * US]
        assert injector.latencies() == [973_040, 973_040]

    def test_stopped_before_firing(self):
        fabric = quiet_fabric(direct_topology())
        injector = PingInjector([PingEntry(5 * US, 0, 1, 8)])

        run_injector(fabric, injector, 1 * US)

        assert injector.messages == []
