"""
Destination-based routing.

A routing is one RoutingTable per switch, mapping destination host id to the
output port. Two algorithms are provided: the fat-tree routing, which ties the
spine a packet climbs to to the destination's leaf port so that a linear
shift is conflict-free, and a generic shortest-path routing used for
everything that is not a clean two-level tree.
"""

import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import networkx as nx

from ebsim.core.errors import RoutingError, TopologyError
from ebsim.core.topology import NodeKind, PortRef, ShiftPattern, Topology
from ebsim.utils.logging import get_logger

logger = get_logger("routing")

_TABLE_LINE_RE = re.compile(r"^SWITCH\s+(\S+)\s+(\S+)\s+(\d+)$")


class RoutingTable:
    """Static destination-host to output-port map of one switch."""

    def __init__(self, switch: int, entries: Optional[Dict[int, int]] = None, name: str = "") -> None:
        self.switch = switch
        self.name = name or f"switch{switch}"
        self.entries: Dict[int, int] = dict(entries or {})

    def lookup(self, dest: int) -> int:
        """
        Raises:
            RoutingError: If there is no entry for dest
        """
        try:
            return self.entries[dest]
        except KeyError:
            raise RoutingError(f"routing hole: {self.name} has no route to host {dest}")

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoutingTable):
            return NotImplemented
        return self.switch == other.switch and self.entries == other.entries

    def items(self) -> Iterator[Tuple[int, int]]:
        return iter(sorted(self.entries.items()))


Routing = List[RoutingTable]


@dataclass(frozen=True)
class TwoLevelLayout:
    """Leaf and spine switch ids of a detected two-level tree, both ascending."""

    leaves: Tuple[int, ...]
    spines: Tuple[int, ...]
    # (leaf, spine) -> leaf-side ports, (spine, leaf) -> spine-side ports; parallel cables sorted
    uplinks: Dict[Tuple[int, int], Tuple[int, ...]]
    downlinks: Dict[Tuple[int, int], Tuple[int, ...]]


def detect_two_level(topology: Topology) -> Optional[TwoLevelLayout]:
    """
    Recognize a leaf/spine tree.

    Leaves are the switches with hosts, spines the others. The tree is
    two-level when every host hangs off a leaf, every inter-switch cable joins
    a leaf to a spine and every leaf reaches every spine.

    Returns:
        The layout, or None if the topology is something else
    """
    if topology.num_switches == 0:
        return None
    leaves = set()
    for host in range(topology.num_hosts):
        attachment = topology.host_attachment(host)
        if attachment.kind != NodeKind.SWITCH:
            return None
        leaves.add(attachment.node)
    spines = set(range(topology.num_switches)) - leaves
    uplinks: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    downlinks: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    for link in topology.links:
        if link.a.kind != NodeKind.SWITCH or link.b.kind != NodeKind.SWITCH:
            continue
        a, b = link.a, link.b
        if a.node in leaves and b.node in spines:
            leaf_end, spine_end = a, b
        elif b.node in leaves and a.node in spines:
            leaf_end, spine_end = b, a
        else:
            return None
        uplinks[(leaf_end.node, spine_end.node)].append(leaf_end.port)
        downlinks[(spine_end.node, leaf_end.node)].append(spine_end.port)
    if len(leaves) > 1:
        for leaf in leaves:
            for spine in spines:
                if (leaf, spine) not in uplinks:
                    return None
    elif spines:
        return None
    return TwoLevelLayout(
        leaves=tuple(sorted(leaves)),
        spines=tuple(sorted(spines)),
        uplinks={key: tuple(sorted(ports)) for key, ports in uplinks.items()},
        downlinks={key: tuple(sorted(ports)) for key, ports in downlinks.items()},
    )


def _empty_routing(topology: Topology) -> Routing:
    return [RoutingTable(s, name=topology.switch_names[s]) for s in range(topology.num_switches)]


def compute_fat_tree_routing(topology: Topology) -> Routing:
    """
    Fat-tree routing.

    For a destination whose own leaf port is q, a leaf climbs to spine q mod S
    over cable copy (q div S) mod p, and the spine descends over the same copy.
    The spine choice depends only on the destination's port, never on the
    source, which makes every linear-shift phase conflict-free when H <= S*p.
    Topologies that are not two-level trees get generic routing instead.

    Args:
        topology: Fabric topology

    Returns:
        One table per switch
    """
    layout = detect_two_level(topology)
    if layout is None:
        logger.info("topology is not a two-level tree; falling back to generic routing")
        return compute_generic_routing(topology)
    routing = _empty_routing(topology)
    num_spines = len(layout.spines)
    for dest in range(topology.num_hosts):
        attachment = topology.host_attachment(dest)
        dest_leaf, q = attachment.node, attachment.port
        routing[dest_leaf].entries[dest] = q
        if not num_spines:
            continue
        spine = layout.spines[q % num_spines]
        for leaf in layout.leaves:
            if leaf == dest_leaf:
                continue
            ports = layout.uplinks[(leaf, spine)]
            routing[leaf].entries[dest] = ports[(q // num_spines) % len(ports)]
        for spine_id in layout.spines:
            ports = layout.downlinks[(spine_id, dest_leaf)]
            routing[spine_id].entries[dest] = ports[(q // num_spines) % len(ports)]
    logger.debug(
        "fat-tree routing: %d leaves, %d spines, %d destinations",
        len(layout.leaves), num_spines, topology.num_hosts,
    )
    return routing


def _switch_graph(topology: Topology) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(range(topology.num_switches))
    for link in topology.links:
        if link.a.kind == NodeKind.SWITCH and link.b.kind == NodeKind.SWITCH:
            graph.add_edge(link.a.node, link.b.node)
    return graph


def compute_generic_routing(topology: Topology) -> Routing:
    """
    Destination-based shortest-path routing.

    Among the equal-cost output ports of a switch toward a destination, the
    port at position (dest mod number-of-candidates) in ascending port order
    is taken.

    Raises:
        RoutingError: If a host cannot be reached from some switch
    """
    routing = _empty_routing(topology)
    graph = _switch_graph(topology)
    neighbours = {s: topology.switch_links(s) for s in range(topology.num_switches)}
    for dest in range(topology.num_hosts):
        attachment = topology.host_attachment(dest)
        if attachment.kind != NodeKind.SWITCH:
            continue
        distance = nx.single_source_shortest_path_length(graph, attachment.node)
        for switch in range(topology.num_switches):
            if switch == attachment.node:
                routing[switch].entries[dest] = attachment.port
                continue
            if switch not in distance:
                raise RoutingError(
                    f"host {topology.host_names[dest]} is unreachable from switch "
                    f"{topology.switch_names[switch]}"
                )
            candidates = [
                port
                for port, peer in neighbours[switch]
                if peer.kind == NodeKind.SWITCH and distance.get(peer.node) == distance[switch] - 1
            ]
            routing[switch].entries[dest] = candidates[dest % len(candidates)]
    return routing


def compute_routing(topology: Topology, algorithm: str = "fat_tree") -> Routing:
    if algorithm == "fat_tree":
        return compute_fat_tree_routing(topology)
    if algorithm == "generic":
        return compute_generic_routing(topology)
    raise ValueError(f"unknown routing algorithm {algorithm!r}")


@dataclass(frozen=True)
class Hop:
    """One switch traversal: the switch and the port the packet leaves through."""

    switch: int
    out_port: int


def trace_route(topology: Topology, routing: Routing, src: int, dest: int) -> List[Hop]:
    """
    Follow the tables from src to dest.

    Returns:
        Switch hops in order (empty for src == dest or back-to-back hosts)

    Raises:
        RoutingError: On holes, loops, unconnected ports or a wrong delivery
    """
    if src == dest:
        return []
    here = topology.host_attachment(src)
    hops: List[Hop] = []
    visited = set()
    while here.kind == NodeKind.SWITCH:
        if here.node in visited:
            path = " -> ".join(topology.switch_names[h.switch] for h in hops)
            raise RoutingError(
                f"routing loop from {topology.host_names[src]} to {topology.host_names[dest]}: {path}"
            )
        visited.add(here.node)
        out_port = routing[here.node].lookup(dest)
        hops.append(Hop(here.node, out_port))
        peer = topology.peers.get(PortRef(NodeKind.SWITCH, here.node, out_port))
        if peer is None:
            raise RoutingError(
                f"{topology.switch_names[here.node]} routes host {dest} to unconnected port {out_port}"
            )
        here = peer
    if here.node != dest:
        raise RoutingError(
            f"route from {topology.host_names[src]} to {topology.host_names[dest]} "
            f"ends at {topology.host_names[here.node]}"
        )
    return hops


def check_routing(topology: Topology, routing: Routing, max_hops: Optional[int] = None) -> int:
    """
    Trace every host pair.

    Returns:
        The longest path in switch hops

    Raises:
        RoutingError: If any path is broken or longer than max_hops
    """
    longest = 0
    for src in range(topology.num_hosts):
        for dest in range(topology.num_hosts):
            hops = len(trace_route(topology, routing, src, dest))
            if max_hops is not None and hops > max_hops:
                raise RoutingError(
                    f"path {topology.host_names[src]} -> {topology.host_names[dest]} "
                    f"takes {hops} switch hops (limit {max_hops})"
                )
            longest = max(longest, hops)
    return longest


@dataclass(frozen=True)
class LinkConflict:
    """A directed inter-switch cable carrying two or more flows of one phase."""

    switch: int
    port: int
    sources: Tuple[int, ...]

    def describe(self, topology: Topology) -> str:
        peer = topology.peers[PortRef(NodeKind.SWITCH, self.switch, self.port)]
        names = ",".join(topology.host_names[s] for s in self.sources)
        return (
            f"{topology.switch_names[self.switch]}:{self.port} -> "
            f"{topology.node_name(peer)}:{peer.port} carries {len(self.sources)} flows ({names})"
        )


def verify_conflict_free(
    topology: Topology, routing: Routing, pattern: ShiftPattern, phase: int
) -> List[LinkConflict]:
    """
    Statically trace every flow i -> (phase + i) mod N of one shift phase.

    Returns:
        Every inter-switch cable direction used by two or more flows; an
        empty list means the phase is conflict-free
    """
    if pattern.num_nodes != topology.num_hosts:
        raise TopologyError(
            f"shift pattern over {pattern.num_nodes} nodes on a {topology.num_hosts}-host topology"
        )
    usage: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    for src in range(pattern.num_nodes):
        dest = pattern.destination(src, phase)
        for hop in trace_route(topology, routing, src, dest):
            peer = topology.peers[PortRef(NodeKind.SWITCH, hop.switch, hop.out_port)]
            if peer.kind == NodeKind.SWITCH:
                usage[(hop.switch, hop.out_port)].append(src)
    return [
        LinkConflict(switch, port, tuple(sources))
        for (switch, port), sources in sorted(usage.items())
        if len(sources) >= 2
    ]


def verify_all_phases(topology: Topology, routing: Routing) -> Dict[int, List[LinkConflict]]:
    """Conflicts of every phase 0..N-1 (phases without conflicts map to an empty list)."""
    pattern = ShiftPattern(topology.num_hosts)
    return {
        phase: verify_conflict_free(topology, routing, pattern, phase)
        for phase in range(topology.num_hosts)
    }


def parse_routing_table(text: str, topology: Topology) -> Routing:
    """
    Parse "SWITCH <switch-name> <dest-host-name> <port>" lines.

    Raises:
        TopologyError: On syntax errors, unknown names or ports without a cable
    """
    routing = _empty_routing(topology)
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _TABLE_LINE_RE.match(line)
        if not match:
            raise TopologyError(f"routing table syntax error: {raw.strip()!r}", line=number)
        switch_name, host_name, port_text = match.groups()
        try:
            switch = topology.switch_id(switch_name)
            dest = topology.host_id(host_name)
        except TopologyError as e:
            raise TopologyError(str(e), line=number)
        port = int(port_text)
        if PortRef(NodeKind.SWITCH, switch, port) not in topology.peers:
            raise TopologyError(f"{switch_name} port {port} has no cable", line=number)
        if dest in routing[switch].entries:
            raise TopologyError(f"duplicate route for {host_name} on {switch_name}", line=number)
        routing[switch].entries[dest] = port
    holes = sum(topology.num_hosts - len(table) for table in routing)
    if holes:
        logger.warning("routing table leaves %d (switch, destination) pairs without a route", holes)
    return routing


def serialize_routing_table(topology: Topology, routing: Sequence[RoutingTable]) -> str:
    lines = [
        f"SWITCH {topology.switch_names[table.switch]} {topology.host_names[dest]} {port}"
        for table in routing
        for dest, port in table.items()
    ]
    return "\n".join(sorted(lines)) + "\n"
