"""
Fabric topologies.

Builds parametric two-level fat-trees, parses and serializes the line-based
topology file format, and applies controlled degradations (missing hosts,
swapped host cables) to model imperfect real clusters.

Topology file grammar (UTF-8, one link per line, '#' starts a comment):

    HOST <name> <port> -- SWITCH <name> <port>
    SWITCH <name> <port> -- SWITCH <name> <port>
    HOST <name> <port> -- HOST <name> <port>      (back-to-back hosts)
"""

import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx

from ebsim.core.errors import ConfigError, TopologyError
from ebsim.utils.logging import get_logger

logger = get_logger("topology")

HOST_PORT = 1

_LINE_RE = re.compile(
    r"^(HOST|SWITCH)\s+(\S+)\s+(\d+)\s+--\s+(HOST|SWITCH)\s+(\S+)\s+(\d+)$"
)


class NodeKind(str, Enum):
    HOST = "HOST"
    SWITCH = "SWITCH"


@dataclass(frozen=True, order=True)
class PortRef:
    """One end of a cable: node kind, dense node id and port number."""

    kind: NodeKind
    node: int
    port: int


@dataclass(frozen=True, order=True)
class Link:
    """A cable. Host ends come first; switch-switch cables are ordered by (node, port)."""

    a: PortRef
    b: PortRef

    @staticmethod
    def canonical(x: PortRef, y: PortRef) -> "Link":
        if x.kind != y.kind:
            return Link(x, y) if x.kind == NodeKind.HOST else Link(y, x)
        return Link(x, y) if x <= y else Link(y, x)


@dataclass(frozen=True)
class Topology:
    """
    Hosts, switches and cables of a fabric.

    Host and switch ids are dense and follow the lexicographic order of their
    names, so two parsers of the same file always agree on ids.
    """

    host_names: Tuple[str, ...]
    switch_names: Tuple[str, ...]
    switch_ports: Tuple[int, ...]
    links: Tuple[Link, ...]

    @property
    def num_hosts(self) -> int:
        return len(self.host_names)

    @property
    def num_switches(self) -> int:
        return len(self.switch_names)

    @cached_property
    def peers(self) -> Dict[PortRef, PortRef]:
        mapping: Dict[PortRef, PortRef] = {}
        for link in self.links:
            mapping[link.a] = link.b
            mapping[link.b] = link.a
        return mapping

    @cached_property
    def host_ports(self) -> Tuple[PortRef, ...]:
        """The single port of every host, indexed by host id."""
        ports: Dict[int, PortRef] = {}
        for ref in self.peers:
            if ref.kind == NodeKind.HOST:
                ports[ref.node] = ref
        return tuple(ports[h] for h in range(self.num_hosts))

    def host_attachment(self, host: int) -> PortRef:
        """Port at the far end of a host's cable."""
        return self.peers[self.host_ports[host]]

    def switch_links(self, switch: int) -> List[Tuple[int, PortRef]]:
        """(local port, peer) pairs of a switch, ordered by local port."""
        result = [
            (ref.port, peer)
            for ref, peer in self.peers.items()
            if ref.kind == NodeKind.SWITCH and ref.node == switch
        ]
        return sorted(result)

    def host_id(self, name: str) -> int:
        try:
            return self.host_names.index(name)
        except ValueError:
            raise TopologyError(f"unknown host {name!r}")

    def switch_id(self, name: str) -> int:
        try:
            return self.switch_names.index(name)
        except ValueError:
            raise TopologyError(f"unknown switch {name!r}")

    def node_name(self, ref: PortRef) -> str:
        if ref.kind == NodeKind.HOST:
            return self.host_names[ref.node]
        return self.switch_names[ref.node]

    def graph(self) -> nx.MultiGraph:
        """Undirected multigraph with nodes ("H", id) and ("S", id)."""
        graph = nx.MultiGraph()
        graph.add_nodes_from(("H", h) for h in range(self.num_hosts))
        graph.add_nodes_from(("S", s) for s in range(self.num_switches))
        for link in self.links:
            graph.add_edge(_node_key(link.a), _node_key(link.b), ports=(link.a.port, link.b.port))
        return graph


def _node_key(ref: PortRef) -> Tuple[str, int]:
    return ("H" if ref.kind == NodeKind.HOST else "S", ref.node)


@dataclass(frozen=True)
class FatTreeSpec:
    """
    Two-level leaf/spine tree.

    Attributes:
        spines: Number of spine switches (S)
        leaves: Number of leaf switches (L)
        hosts_per_leaf: Hosts attached to each leaf (H)
        parallel_uplinks: Cables between every leaf/spine pair (p)
        radix: Optional switch port limit
    """

    spines: int
    leaves: int
    hosts_per_leaf: int
    parallel_uplinks: int = 1
    radix: Optional[int] = None

    def __post_init__(self) -> None:
        for name in ("spines", "leaves", "hosts_per_leaf", "parallel_uplinks"):
            if getattr(self, name) < 1:
                raise ConfigError(f"fat_tree.{name}: must be >= 1")
        if self.radix is not None:
            if self.leaf_ports > self.radix:
                raise ConfigError(
                    f"leaf needs {self.leaf_ports} ports but the switch radix is {self.radix}"
                )
            if self.leaves > 1 and self.spine_ports > self.radix:
                raise ConfigError(
                    f"spine needs {self.spine_ports} ports but the switch radix is {self.radix}"
                )

    @property
    def num_hosts(self) -> int:
        return self.leaves * self.hosts_per_leaf

    @property
    def leaf_ports(self) -> int:
        if self.leaves == 1:
            return self.hosts_per_leaf
        return self.hosts_per_leaf + self.spines * self.parallel_uplinks

    @property
    def spine_ports(self) -> int:
        return self.leaves * self.parallel_uplinks

    @property
    def non_blocking(self) -> bool:
        return self.hosts_per_leaf <= self.spines * self.parallel_uplinks

    def to_dict(self) -> Dict[str, Optional[int]]:
        return {
            "kind": "fat_tree",
            "spines": self.spines,
            "leaves": self.leaves,
            "hosts_per_leaf": self.hosts_per_leaf,
            "parallel_uplinks": self.parallel_uplinks,
            "radix": self.radix,
        }


@dataclass(frozen=True)
class ShiftPattern:
    """Linear-shift permutation over N nodes: in phase n, node i targets (n + i) mod N."""

    num_nodes: int

    def destination(self, node: int, phase: int) -> int:
        return (phase + node) % self.num_nodes

    def mapping(self, phase: int) -> List[int]:
        return [self.destination(i, phase) for i in range(self.num_nodes)]


def _width(count: int, minimum: int) -> int:
    return max(minimum, len(str(max(count - 1, 0))))


def build_fat_tree(spec: FatTreeSpec) -> Topology:
    """
    Build a two-level fat-tree.

    Host id = leaf * H + slot. Leaf down-ports are 0..H-1; the up-port toward
    spine s, copy k, is H + s * p + k. Spine port toward leaf l, copy k, is
    l * p + k. A single leaf is built as a plain star without spines.

    Args:
        spec: Tree shape

    Returns:
        The topology
    """
    if not spec.non_blocking:
        logger.warning(
            "fat-tree with H=%d > S*p=%d is blocking (no full bisection bandwidth)",
            spec.hosts_per_leaf,
            spec.spines * spec.parallel_uplinks,
        )
    host_width = _width(spec.num_hosts, 3)
    switch_width = _width(max(spec.leaves, spec.spines), 2)
    host_names = tuple(f"h{i:0{host_width}d}" for i in range(spec.num_hosts))
    leaf_names = [f"leaf{i:0{switch_width}d}" for i in range(spec.leaves)]
    spine_names = [] if spec.leaves == 1 else [f"spine{i:0{switch_width}d}" for i in range(spec.spines)]
    # "leaf.." sorts before "spine..", so leaves take ids 0..L-1 and spines L..L+S-1.
    switch_names = tuple(leaf_names + spine_names)
    H, p = spec.hosts_per_leaf, spec.parallel_uplinks
    links = []
    for leaf in range(spec.leaves):
        for slot in range(H):
            host = leaf * H + slot
            links.append(
                Link.canonical(
                    PortRef(NodeKind.HOST, host, HOST_PORT), PortRef(NodeKind.SWITCH, leaf, slot)
                )
            )
        for spine in range(len(spine_names)):
            for copy in range(p):
                links.append(
                    Link.canonical(
                        PortRef(NodeKind.SWITCH, leaf, H + spine * p + copy),
                        PortRef(NodeKind.SWITCH, spec.leaves + spine, leaf * p + copy),
                    )
                )
    switch_ports = tuple([spec.leaf_ports] * spec.leaves + [spec.spine_ports] * len(spine_names))
    topology = Topology(host_names, switch_names, switch_ports, tuple(sorted(links)))
    logger.debug(
        "built fat-tree S=%d L=%d H=%d p=%d: %d hosts, %d switches, %d links",
        spec.spines, spec.leaves, H, p, topology.num_hosts, topology.num_switches, len(links),
    )
    return topology


def direct_topology(names: Sequence[str] = ("h0", "h1")) -> Topology:
    """Two hosts connected back-to-back."""
    first, second = sorted(names)
    link = Link.canonical(PortRef(NodeKind.HOST, 0, HOST_PORT), PortRef(NodeKind.HOST, 1, HOST_PORT))
    return Topology((first, second), (), (), (link,))


def star_topology(num_hosts: int, switch_name: str = "sw0") -> Topology:
    """num_hosts hosts on one switch, host i on port i."""
    spec = FatTreeSpec(spines=1, leaves=1, hosts_per_leaf=num_hosts)
    tree = build_fat_tree(spec)
    return Topology(tree.host_names, (switch_name,), tree.switch_ports, tree.links)


def _assemble(
    host_names: Iterable[str],
    switch_names: Iterable[str],
    named_links: Iterable[Tuple[Tuple[NodeKind, str, int], Tuple[NodeKind, str, int]]],
) -> Topology:
    hosts = tuple(sorted(set(host_names)))
    switches = tuple(sorted(set(switch_names)))
    host_index = {name: i for i, name in enumerate(hosts)}
    switch_index = {name: i for i, name in enumerate(switches)}
    ports = [0] * len(switches)
    links = []

    def ref(kind: NodeKind, name: str, port: int) -> PortRef:
        if kind == NodeKind.HOST:
            return PortRef(kind, host_index[name], port)
        ports[switch_index[name]] = max(ports[switch_index[name]], port + 1)
        return PortRef(kind, switch_index[name], port)

    for (ka, na, pa), (kb, nb, pb) in named_links:
        links.append(Link.canonical(ref(ka, na, pa), ref(kb, nb, pb)))
    return Topology(hosts, switches, tuple(ports), tuple(sorted(links)))


def check_connected(topology: Topology) -> None:
    """
    Raises:
        TopologyError: If some host cannot reach the others
    """
    if topology.num_hosts == 0:
        raise TopologyError("topology has no hosts")
    graph = topology.graph()
    reachable = nx.node_connected_component(graph, ("H", 0))
    for host in range(topology.num_hosts):
        if ("H", host) not in reachable:
            raise TopologyError(f"host {topology.host_names[host]} is disconnected from the fabric")


def parse_topology(text: str) -> Topology:
    """
    Parse the line-based topology format.

    Args:
        text: File contents

    Returns:
        Topology with names mapped to dense ids in lexicographic order

    Raises:
        TopologyError: On syntax errors (with line number), duplicate port use,
            hosts with more than one cable or disconnected hosts
    """
    used: Dict[Tuple[NodeKind, str, int], int] = {}
    host_links: Dict[str, int] = {}
    hosts: List[str] = []
    switches: List[str] = []
    named_links = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _LINE_RE.match(line)
        if not match:
            raise TopologyError(f"syntax error: {raw.strip()!r}", line=number)
        ka, na, pa, kb, nb, pb = match.groups()
        ends = [(NodeKind(ka), na, int(pa)), (NodeKind(kb), nb, int(pb))]
        if ends[0] == ends[1]:
            raise TopologyError(f"port {na}:{pa} linked to itself", line=number)
        for kind, name, port in ends:
            if (kind, name, port) in used:
                raise TopologyError(
                    f"duplicate use of {kind.value} {name} port {port} "
                    f"(first used on line {used[(kind, name, port)]})",
                    line=number,
                )
            used[(kind, name, port)] = number
            if kind == NodeKind.HOST:
                if name in host_links:
                    raise TopologyError(
                        f"host {name} already cabled on line {host_links[name]} (multi-rail hosts are not supported)",
                        line=number,
                    )
                host_links[name] = number
                hosts.append(name)
            else:
                switches.append(name)
        named_links.append((ends[0], ends[1]))
    topology = _assemble(hosts, switches, named_links)
    check_connected(topology)
    return topology


def serialize_topology(topology: Topology) -> str:
    """Emit the topology in the file grammar, lines sorted lexicographically."""
    lines = []
    for link in topology.links:
        a = f"{link.a.kind.value} {topology.node_name(link.a)} {link.a.port}"
        b = f"{link.b.kind.value} {topology.node_name(link.b)} {link.b.port}"
        lines.append(f"{a} -- {b}")
    return "\n".join(sorted(lines)) + "\n"


HostRef = Union[int, str]


def _resolve_host(topology: Topology, host: HostRef) -> int:
    if isinstance(host, int):
        if not 0 <= host < topology.num_hosts:
            raise TopologyError(f"host id {host} out of range")
        return host
    return topology.host_id(host)


def degrade(
    topology: Topology,
    remove_hosts: Sequence[HostRef] = (),
    swap_cable_pairs: Sequence[Tuple[HostRef, HostRef]] = (),
) -> Topology:
    """
    Return a degraded copy of a topology.

    Args:
        topology: Source topology (unchanged)
        remove_hosts: Hosts to drop (ids or names); remaining ids are re-densified
        swap_cable_pairs: Host pairs whose cables exchange their switch-side ends

    Raises:
        TopologyError: On unknown hosts or if the result is disconnected
    """
    removed = {_resolve_host(topology, h) for h in remove_hosts}
    swaps = [(_resolve_host(topology, a), _resolve_host(topology, b)) for a, b in swap_cable_pairs]
    attachment = {h: topology.host_attachment(h) for h in range(topology.num_hosts)}
    for a, b in swaps:
        if a == b or a in removed or b in removed:
            raise TopologyError(
                f"cannot swap cables of {topology.host_names[a]} and {topology.host_names[b]}"
            )
        attachment[a], attachment[b] = attachment[b], attachment[a]

    def named(ref: PortRef) -> Tuple[NodeKind, str, int]:
        return (ref.kind, topology.node_name(ref), ref.port)

    named_links = []
    for link in topology.links:
        if link.a.kind == NodeKind.HOST or link.b.kind == NodeKind.HOST:
            continue
        named_links.append((named(link.a), named(link.b)))
    handled = set()
    for host in range(topology.num_hosts):
        if host in removed or host in handled:
            continue
        peer = attachment[host]
        if peer.kind == NodeKind.HOST:
            other = peer.node
            if other in removed:
                continue
            handled.update({host, other})
        named_links.append((named(topology.host_ports[host]), named(peer)))
    hosts = [name for h, name in enumerate(topology.host_names) if h not in removed]
    degraded = _assemble(hosts, topology.switch_names, named_links)
    # Keep the original port counts; a removed host leaves an empty port, not a smaller switch.
    degraded = Topology(degraded.host_names, degraded.switch_names, topology.switch_ports, degraded.links)
    check_connected(degraded)
    logger.info(
        "degraded topology: removed %d host(s), swapped %d cable pair(s) -> %d hosts",
        len(removed), len(swaps), degraded.num_hosts,
    )
    return degraded
