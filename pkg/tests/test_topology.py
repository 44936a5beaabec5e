"""
Tests for topology building, parsing and degradation.
"""

import pytest

from ebsim.core.errors import ConfigError, TopologyError
from ebsim.core.topology import (
    FatTreeSpec,
    NodeKind,
    PortRef,
    ShiftPattern,
    build_fat_tree,
    check_connected,
    degrade,
    direct_topology,
    parse_topology,
    serialize_topology,
    star_topology,
)

SMALL_TREE = """
# two leaves, one spine
HOST a 1 -- SWITCH leafA 0
HOST b 1 -- SWITCH leafA 1
HOST c 1 -- SWITCH leafB 0
SWITCH leafA 2 -- SWITCH spine 0
SWITCH leafB 2 -- SWITCH spine 1   # uplink
"""


class TestFatTreeSpec:
    """Shape parameters and derived port counts."""

    def test_derived_values(self):
        spec = FatTreeSpec(spines=6, leaves=6, hosts_per_leaf=12, parallel_uplinks=2)

        assert spec.num_hosts == 72
        assert spec.leaf_ports == 24
        assert spec.spine_ports == 12
        assert spec.non_blocking

    def test_blocking_tree(self):
        assert not FatTreeSpec(2, 4, 4).non_blocking

    def test_radix_limit(self):
        with pytest.raises(ConfigError, match="radix"):
            FatTreeSpec(4, 4, 4, radix=6)

    def test_zero_values_rejected(self):
        with pytest.raises(ConfigError):
            FatTreeSpec(0, 4, 2)


class TestBuildFatTree:
    """Parametric two-level trees."""

    def test_counts_and_names(self):
        topology = build_fat_tree(FatTreeSpec(2, 4, 2))

        assert topology.num_hosts == 8
        assert topology.num_switches == 6
        assert topology.host_names[0] == "h000"
        assert topology.switch_names == ("leaf00", "leaf01", "leaf02", "leaf03", "spine00", "spine01")
        assert len(topology.links) == 8 + 4 * 2

    def test_host_wiring(self):
        topology = build_fat_tree(FatTreeSpec(2, 4, 2))

        assert topology.host_attachment(5) == PortRef(NodeKind.SWITCH, 2, 1)

    def test_uplink_port_layout(self):
        topology = build_fat_tree(FatTreeSpec(2, 2, 2, parallel_uplinks=2))

        links = dict(topology.switch_links(0))
        # leaf up-port H + s*p + k reaches spine s on port leaf*p + k
        assert links[2] == PortRef(NodeKind.SWITCH, 2, 0)
        assert links[3] == PortRef(NodeKind.SWITCH, 2, 1)
        assert links[4] == PortRef(NodeKind.SWITCH, 3, 0)
        assert topology.switch_ports == (6, 6, 4, 4)

    def test_single_leaf_has_no_spines(self):
        topology = build_fat_tree(FatTreeSpec(3, 1, 4))

        assert topology.switch_names == ("leaf00",)
        assert topology.switch_ports == (4,)

    def test_graph_is_connected(self):
        topology = build_fat_tree(FatTreeSpec(4, 4, 4))

        check_connected(topology)
        graph = topology.graph()
        assert graph.number_of_nodes() == 16 + 8
        assert graph.number_of_edges() == len(topology.links)


class TestSmallTopologies:
    """Direct and star layouts."""

    def test_direct(self):
        topology = direct_topology()

        assert topology.num_switches == 0
        assert topology.host_attachment(0) == PortRef(NodeKind.HOST, 1, 1)

    def test_star(self):
        topology = star_topology(3)

        assert topology.switch_names == ("sw0",)
        assert [topology.host_attachment(h).port for h in range(3)] == [0, 1, 2]


class TestParseTopology:
    """Line-based topology files."""

    def test_parse(self):
        topology = parse_topology(SMALL_TREE)

        assert topology.host_names == ("a", "b", "c")
        assert topology.switch_names == ("leafA", "leafB", "spine")
        assert topology.switch_ports == (3, 3, 2)
        assert topology.host_attachment(2) == PortRef(NodeKind.SWITCH, 1, 0)

    def test_serialize_then_parse_gives_same_topology(self):
        topology = build_fat_tree(FatTreeSpec(2, 2, 2))

        text = serialize_topology(topology)

        assert parse_topology(text) == topology
        assert text.splitlines() == sorted(text.splitlines())

    def test_back_to_back_hosts(self):
        topology = parse_topology("HOST x 1 -- HOST y 1\n")

        assert topology.num_hosts == 2
        assert topology.num_switches == 0

    def test_syntax_error_has_line_number(self):
        with pytest.raises(TopologyError, match="line 3"):
            parse_topology("HOST a 1 -- SWITCH s 0\n\nHOST b 1 - SWITCH s 1\n")

    def test_duplicate_port(self):
        text = "HOST a 1 -- SWITCH s 0\nHOST b 1 -- SWITCH s 0\n"

        with pytest.raises(TopologyError, match="duplicate use"):
            parse_topology(text)

    def test_multi_cabled_host(self):
        text = "HOST a 1 -- SWITCH s 0\nHOST a 2 -- SWITCH s 1\n"

        with pytest.raises(TopologyError, match="already cabled"):
            parse_topology(text)

    def test_disconnected_host(self):
        text = "HOST a 1 -- SWITCH s 0\nHOST b 1 -- SWITCH t 0\n"

        with pytest.raises(TopologyError, match="disconnected"):
            parse_topology(text)

    def test_empty_file(self):
        with pytest.raises(TopologyError, match="no hosts"):
            parse_topology("# nothing\n")


class TestDegrade:
    """Missing hosts and swapped cables."""

    def setup_method(self):
        self.topology = build_fat_tree(FatTreeSpec(2, 4, 2))

    def test_remove_hosts(self):
        degraded = degrade(self.topology, remove_hosts=["h001", 6])

        assert degraded.num_hosts == 6
        assert "h001" not in degraded.host_names
        assert "h006" not in degraded.host_names
        assert degraded.switch_ports == self.topology.switch_ports
        assert self.topology.num_hosts == 8

    def test_swap_cables(self):
        degraded = degrade(self.topology, swap_cable_pairs=[("h000", "h007")])

        h0 = degraded.host_id("h000")
        h7 = degraded.host_id("h007")
        assert degraded.host_attachment(h0) == self.topology.host_attachment(7)
        assert degraded.host_attachment(h7) == self.topology.host_attachment(0)

    def test_unknown_host(self):
        with pytest.raises(TopologyError, match="unknown host"):
            degrade(self.topology, remove_hosts=["nope"])

    def test_swap_with_removed_host(self):
        with pytest.raises(TopologyError, match="cannot swap"):
            degrade(self.topology, remove_hosts=[1], swap_cable_pairs=[(1, 2)])

    def test_id_out_of_range(self):
        with pytest.raises(TopologyError):
            degrade(self.topology, remove_hosts=[99])


class TestShiftPattern:
    """Linear-shift destinations."""

    def test_destination(self):
        pattern = ShiftPattern(8)

        assert pattern.destination(6, 3) == 1
        assert pattern.mapping(0) == list(range(8))

    def test_every_phase_is_a_permutation(self):
        pattern = ShiftPattern(7)

        for phase in range(7):
            assert sorted(pattern.mapping(phase)) == list(range(7))
