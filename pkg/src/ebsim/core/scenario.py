"""
Scenario loading and validation.

A scenario is one JSON (or YAML) document describing topology, routing,
tuning constants, traffic, run length and outputs. It is validated completely
before any simulation work; errors name the dotted path of the offending key.
Human units in the document (ns, us, ms, Gb/s, bytes) become integer
picoseconds here and nowhere else.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

from ebsim.core.daqpipe import DaqMode, DaqpipeConfig
from ebsim.core.distributions import fragment_size_from_config, latency_from_config
from ebsim.core.engine import PS_PER_MS, PS_PER_NS, PS_PER_US
from ebsim.core.errors import ConfigError
from ebsim.core.host import HostParams
from ebsim.core.link import BLOCK_BYTES, MAX_VLS, LinkParams
from ebsim.core.routing import Routing, compute_routing, parse_routing_table
from ebsim.core.switch import SwitchParams
from ebsim.core.topology import (
    FatTreeSpec,
    Topology,
    build_fat_tree,
    degrade,
    direct_topology,
    parse_topology,
    star_topology,
)
from ebsim.core.traffic import PingConfig, PingEntry, ShifterConfig, StreamConfig
from ebsim.utils.helpers import ConfigSection, to_plain
from ebsim.utils.logging import get_logger

logger = get_logger("scenario")

TOPOLOGY_KINDS = ("fat_tree", "star", "direct", "file")
ROUTING_KINDS = ("fat_tree", "generic", "table")
TRAFFIC_KINDS = ("none", "fixed_size", "time_window", "daqpipe", "stream", "ping")

TrafficConfig = Union[ShifterConfig, DaqpipeConfig, StreamConfig, PingConfig, None]


@dataclass(frozen=True)
class TopologyConfig:
    """
    Attributes:
        kind: fat_tree, star, direct or file
        fat_tree: Tree shape for kind fat_tree
        num_hosts: Host count for kind star
        file: Topology file for kind file
        remove_hosts: Hosts dropped by the degradation step
        swap_cables: Host pairs whose cables are swapped
    """

    kind: str = "fat_tree"
    fat_tree: Optional[FatTreeSpec] = None
    num_hosts: int = 2
    file: Optional[Path] = None
    remove_hosts: Tuple[Union[int, str], ...] = ()
    swap_cables: Tuple[Tuple[Union[int, str], Union[int, str]], ...] = ()

    def build(self) -> Topology:
        if self.kind == "fat_tree":
            topology = build_fat_tree(self.fat_tree or FatTreeSpec(2, 4, 2))
        elif self.kind == "star":
            topology = star_topology(self.num_hosts)
        elif self.kind == "direct":
            topology = direct_topology()
        else:
            topology = parse_topology(_read_text(self.file))
        if self.remove_hosts or self.swap_cables:
            topology = degrade(topology, self.remove_hosts, self.swap_cables)
        return topology

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind}
        if self.kind == "fat_tree":
            spec = self.fat_tree or FatTreeSpec(2, 4, 2)
            data.update({k: v for k, v in spec.to_dict().items() if k != "kind"})
        elif self.kind == "star":
            data["num_hosts"] = self.num_hosts
        elif self.kind == "file":
            data["file"] = str(self.file)
        data["degrade"] = {
            "remove_hosts": list(self.remove_hosts),
            "swap_cables": [list(pair) for pair in self.swap_cables],
        }
        return data


@dataclass(frozen=True)
class RoutingConfig:
    algorithm: str = "fat_tree"
    table: Optional[Path] = None

    def build(self, topology: Topology) -> Routing:
        if self.algorithm == "table":
            return parse_routing_table(_read_text(self.table), topology)
        return compute_routing(topology, self.algorithm)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"algorithm": self.algorithm}
        if self.table is not None:
            data["table"] = str(self.table)
        return data


@dataclass(frozen=True)
class RunConfig:
    """
    Attributes:
        seed: Master seed
        duration: Measured run length in picoseconds
        warmup: Start of the measurement window (None: 10% of duration)
        drain: Extra time after duration in which injectors are stopped
        sample_interval: Goodput time-series bin width
        audit: Check credit conservation after every event
        trace: Keep an event trace digest
    """

    seed: int = 0
    duration: int = 10 * PS_PER_MS
    warmup: Optional[int] = None
    drain: int = 5 * PS_PER_MS
    sample_interval: int = 100 * PS_PER_US
    audit: bool = False
    trace: bool = False

    def __post_init__(self) -> None:
        if self.duration < 1:
            raise ConfigError("run.duration_ms: must be > 0")
        if self.warmup is not None and not 0 <= self.warmup < self.duration:
            raise ConfigError("run.warmup_ms: must satisfy 0 <= warmup < duration")
        if self.drain < 0:
            raise ConfigError("run.drain_ms: must be >= 0")
        if self.sample_interval < 1:
            raise ConfigError("run.sample_interval_us: must be > 0")

    @property
    def effective_warmup(self) -> int:
        if self.warmup is None:
            return self.duration // 10
        return self.warmup

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "duration_ms": self.duration / PS_PER_MS,
            "warmup_ms": self.effective_warmup / PS_PER_MS,
            "drain_ms": self.drain / PS_PER_MS,
            "sample_interval_us": self.sample_interval / PS_PER_US,
            "audit": self.audit,
            "trace": self.trace,
        }


@dataclass(frozen=True)
class BufferExperimentConfig:
    """
    Attributes:
        background: Run the host0 -> host2 background stream
        max_burst_bytes: Largest burst tried before giving up
        lead_time: Background-only time before the burst
        drain_share: Bandwidth share of the congested port granted to the burst
    """

    background: bool = True
    max_burst_bytes: int = 16 << 20
    lead_time: int = 50 * PS_PER_US
    drain_share: float = 0.5

    def __post_init__(self) -> None:
        if self.max_burst_bytes < 1:
            raise ConfigError("buffer_experiment.max_burst_bytes: must be >= 1")
        if not 0.0 <= self.drain_share < 1.0:
            raise ConfigError("buffer_experiment.drain_share: must be within [0, 1)")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "background": self.background,
            "max_burst_bytes": self.max_burst_bytes,
            "lead_time_us": self.lead_time / PS_PER_US,
            "drain_share": self.drain_share,
        }


@dataclass(frozen=True)
class ScenarioConfig:
    """A complete, validated experiment description."""

    name: str = "scenario"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    link: LinkParams = field(default_factory=LinkParams)
    switch: SwitchParams = field(default_factory=SwitchParams)
    host: HostParams = field(default_factory=HostParams)
    traffic: TrafficConfig = None
    run: RunConfig = field(default_factory=RunConfig)
    buffer_experiment: BufferExperimentConfig = field(default_factory=BufferExperimentConfig)
    output_dir: Path = Path("out")

    def with_overrides(
        self,
        seed: Optional[int] = None,
        duration_ms: Optional[float] = None,
        out: Optional[Union[str, Path]] = None,
    ) -> "ScenarioConfig":
        """Apply the CLI overrides --seed, --duration and --out."""
        run = self.run
        if seed is not None:
            run = replace(run, seed=seed)
        if duration_ms is not None:
            duration = int(round(duration_ms * PS_PER_MS))
            warmup = run.warmup
            if warmup is not None and warmup >= duration:
                warmup = None
            run = replace(run, duration=duration, warmup=warmup)
        config = replace(self, run=run)
        if out is not None:
            config = replace(config, output_dir=Path(out))
        return config

    def with_daqpipe(self, credits: int, parallel_sends: int) -> "ScenarioConfig":
        if not isinstance(self.traffic, DaqpipeConfig):
            raise ConfigError("traffic.kind: a credits/parallel-sends sweep needs daqpipe traffic")
        return replace(
            self, traffic=replace(self.traffic, credits=credits, parallel_sends=parallel_sends)
        )

    def to_dict(self) -> Dict[str, Any]:
        """Every parameter with its effective value."""
        return {
            "name": self.name,
            "topology": self.topology.to_dict(),
            "routing": self.routing.to_dict(),
            "link": self.link.to_dict(),
            "switch": self.switch.to_dict(),
            "host": self.host.to_dict(),
            "traffic": self.traffic.to_dict() if self.traffic is not None else {"kind": "none"},
            "run": self.run.to_dict(),
            "buffer_experiment": self.buffer_experiment.to_dict(),
            "output": {"dir": str(self.output_dir)},
        }


def _read_text(path: Optional[Path]) -> str:
    if path is None:
        raise ConfigError("missing file path")
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"File not found: {path}")
    except OSError as e:
        raise ConfigError(f"Cannot read {path}: {e}")


def _resolve(base_dir: Optional[Path], name: Optional[str]) -> Optional[Path]:
    if name is None:
        return None
    path = Path(name)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return path


def _ps(value: Optional[float], unit: int) -> Optional[int]:
    if value is None:
        return None
    return int(round(value * unit))


def _host_ref(value: Any, path: str) -> Union[int, str]:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ConfigError(f"{path}: expected a host id or name, got {value!r}")
    return value


class ScenarioLoader:
    """Loads scenario documents with ruamel.yaml and validates them into a ScenarioConfig."""

    def __init__(self) -> None:
        """Initialize the ruamel.yaml instance (safe loader, YAML 1.2 reads JSON too)."""
        self.yaml = YAML(typ="safe", pure=True)

    def load_file(self, file_path: Union[str, Path]) -> Dict[str, Any]:
        """
        Load a scenario document.

        Args:
            file_path: Path to a .json, .yaml or .yml scenario

        Returns:
            Parsed document as plain dicts and lists

        Raises:
            ConfigError: If the file is missing or not valid JSON/YAML
        """
        try:
            with open(file_path, encoding="utf-8") as file:
                data = self.yaml.load(file)
        except FileNotFoundError:
            raise ConfigError(f"File not found: {file_path}")
        except YAMLError as e:
            raise ConfigError(f"Invalid scenario syntax in {file_path}: {e}")
        if data is None:
            return {}
        return to_plain(data)

    def load(self, file_path: Union[str, Path]) -> ScenarioConfig:
        path = Path(file_path)
        config = self.parse(self.load_file(path), base_dir=path.parent, default_name=path.stem)
        logger.info("loaded scenario %s from %s", config.name, path)
        return config

    def save_echo(self, config: ScenarioConfig, file_path: Union[str, Path]) -> None:
        """
        Write the effective configuration as JSON.

        Raises:
            OSError: With the path on I/O failures
        """
        try:
            with open(file_path, "w", encoding="utf-8") as file:
                json.dump(config.to_dict(), file, indent=2, sort_keys=True)
                file.write("\n")
        except OSError as e:
            raise OSError(f"Error writing to {file_path}: {e}")

    def parse(
        self,
        data: Dict[str, Any],
        base_dir: Optional[Path] = None,
        default_name: str = "scenario",
    ) -> ScenarioConfig:
        """
        Validate a scenario document.

        Raises:
            ConfigError: On the first invalid or unknown key
        """
        root = ConfigSection(data, "")
        name = root.get_str("name", default_name)
        topology = self._topology(root.section("topology"), base_dir)
        routing = self._routing(root.section("routing"), base_dir)
        link = self._link(root.section("link"))
        switch = self._switch(root.section("switch"))
        host = self._host(root.section("host"), base_dir)
        link.check_packet_fits(host.mtu + host.header_bytes)
        traffic = self._traffic(root.section("traffic"), link)
        run = self._run(root.section("run"))
        experiment = self._buffer_experiment(root.section("buffer_experiment"))
        output = root.section("output")
        output_dir = Path(output.get_str("dir", "out"))
        output.finish()
        root.finish()
        return ScenarioConfig(
            name=name,
            topology=topology,
            routing=routing,
            link=link,
            switch=switch,
            host=host,
            traffic=traffic,
            run=run,
            buffer_experiment=experiment,
            output_dir=output_dir,
        )

    def _topology(self, section: ConfigSection, base_dir: Optional[Path]) -> TopologyConfig:
        kind = section.get_str("kind", "fat_tree", choices=TOPOLOGY_KINDS)
        fat_tree = None
        num_hosts = 2
        file = None
        if kind == "fat_tree":
            fat_tree = FatTreeSpec(
                spines=section.get_int("spines", 2, minimum=1),
                leaves=section.get_int("leaves", 4, minimum=1),
                hosts_per_leaf=section.get_int("hosts_per_leaf", 2, minimum=1),
                parallel_uplinks=section.get_int("parallel_uplinks", 1, minimum=1),
                radix=section.get_int("radix", minimum=2),
            )
        elif kind == "star":
            num_hosts = section.get_int("num_hosts", 2, minimum=1)
        elif kind == "file":
            file = _resolve(base_dir, section.get_str("file", required=True))
        degrade_section = section.section("degrade")
        remove = tuple(
            _host_ref(value, f"{degrade_section.path}.remove_hosts")
            for value in degrade_section.get_list("remove_hosts")
        )
        swaps: List[Tuple[Union[int, str], Union[int, str]]] = []
        for index, pair in enumerate(degrade_section.get_list("swap_cables")):
            item_path = f"{degrade_section.path}.swap_cables[{index}]"
            if not isinstance(pair, list) or len(pair) != 2:
                raise ConfigError(f"{item_path}: expected a pair of hosts")
            swaps.append((_host_ref(pair[0], item_path), _host_ref(pair[1], item_path)))
        degrade_section.finish()
        section.finish()
        return TopologyConfig(kind, fat_tree, num_hosts, file, remove, tuple(swaps))

    def _routing(self, section: ConfigSection, base_dir: Optional[Path]) -> RoutingConfig:
        algorithm = section.get_str("algorithm", "fat_tree", choices=ROUTING_KINDS)
        table = _resolve(base_dir, section.get_str("table", required=algorithm == "table"))
        section.finish()
        return RoutingConfig(algorithm, table)

    def _link(self, section: ConfigSection) -> LinkParams:
        rate = section.get_float("data_rate_gbps", 100.0)
        if rate <= 0:
            raise ConfigError("link.data_rate_gbps: must be > 0")
        delay = section.get_float("propagation_delay_ns", 170.0, minimum=0.0)
        num_vls = section.get_int("num_vls", 4, minimum=1, maximum=MAX_VLS)
        buffer_bytes = section.get_int("buffer_bytes_per_vl", 64 * 1024, minimum=BLOCK_BYTES)
        if buffer_bytes % BLOCK_BYTES:
            raise ConfigError(f"link.buffer_bytes_per_vl: must be a multiple of {BLOCK_BYTES}")
        section.finish()
        return LinkParams(
            data_rate_bps=int(round(rate * 1e9)),
            propagation_delay=_ps(delay, PS_PER_NS),
            num_vls=num_vls,
            buffer_blocks_per_vl=buffer_bytes // BLOCK_BYTES,
        )

    def _switch(self, section: ConfigSection) -> SwitchParams:
        crossbar = section.get_float("crossbar_delay_ns", 100.0, minimum=0.0)
        output_bytes = section.get_int("output_buffer_bytes_per_vl", 8192, minimum=BLOCK_BYTES)
        if output_bytes % BLOCK_BYTES:
            raise ConfigError(f"switch.output_buffer_bytes_per_vl: must be a multiple of {BLOCK_BYTES}")
        cut_through = section.get_bool("cut_through", False)
        tick = section.get_float("xmit_wait_tick_ns", 1.0)
        if tick <= 0:
            raise ConfigError("switch.xmit_wait_tick_ns: must be > 0")
        section.finish()
        return SwitchParams(
            crossbar_delay=_ps(crossbar, PS_PER_NS),
            output_buffer_blocks_per_vl=output_bytes // BLOCK_BYTES,
            cut_through=cut_through,
            xmit_wait_tick=max(1, _ps(tick, PS_PER_NS)),
        )

    def _host(self, section: ConfigSection, base_dir: Optional[Path]) -> HostParams:
        mtu = section.get_int("mtu", 4096, minimum=1)
        header = section.get_int("header_bytes", 30, minimum=0)
        latency = latency_from_config(section.raw("stack_latency"), "host.stack_latency", base_dir)
        section.finish()
        return HostParams(mtu=mtu, header_bytes=header, stack_latency=latency)

    def _traffic(self, section: ConfigSection, link: LinkParams) -> TrafficConfig:
        kind = section.get_str("kind", "none", choices=TRAFFIC_KINDS)
        vl_max = link.num_vls - 1
        config: TrafficConfig = None
        if kind in ("fixed_size", "time_window"):
            config = ShifterConfig(
                kind=kind,
                message_size=section.get_int("message_size", 1 << 20, minimum=1),
                chunk_size=section.get_int("chunk_size", 1 << 20, minimum=1),
                window=_ps(section.get_float("window_us", 1000.0), PS_PER_US),
                grace=_ps(section.get_float("grace_us", 0.0, minimum=0.0), PS_PER_US),
                vl=section.get_int("vl", 0, minimum=0, maximum=vl_max),
                max_outstanding=section.get_int("max_outstanding", 2, minimum=1),
            )
        elif kind == "daqpipe":
            config = DaqpipeConfig(
                credits=section.get_int("credits", 1, minimum=1),
                parallel_sends=section.get_int("parallel_sends", 1, minimum=1),
                fragment_size=fragment_size_from_config(
                    section.raw("fragment_size"), "traffic.fragment_size"
                ),
                mode=DaqMode(section.get_str("mode", "PULL", choices=[m.value for m in DaqMode])),
                events_total=section.get_int("events_total", minimum=0),
                request_size=section.get_int("request_size", 64, minimum=1),
                data_vl=section.get_int("data_vl", 0, minimum=0, maximum=vl_max),
                control_vl=section.get_int("control_vl", min(1, vl_max), minimum=0, maximum=vl_max),
                em_control_messages=section.get_bool("em_control_messages", False),
                control_size=section.get_int("control_size", 64, minimum=1),
                em_host=section.get_int("em_host", 0, minimum=0),
            )
        elif kind == "stream":
            config = StreamConfig(
                src=section.get_int("src", 0, minimum=0),
                dest=section.get_int("dest", 1, minimum=0),
                message_size=section.get_int("message_size", 1 << 20, minimum=1),
                vl=section.get_int("vl", 0, minimum=0, maximum=vl_max),
                max_outstanding=section.get_int("max_outstanding", 2, minimum=1),
            )
        elif kind == "ping":
            entries = []
            for index, item in enumerate(section.get_list("messages")):
                entry = ConfigSection(item, f"traffic.messages[{index}]")
                entries.append(
                    PingEntry(
                        time_ps=_ps(entry.get_float("time_ns", 0.0, minimum=0.0), PS_PER_NS),
                        src=entry.get_int("src", required=True, minimum=0),
                        dest=entry.get_int("dest", required=True, minimum=0),
                        size=entry.get_int("size", required=True, minimum=1),
                        vl=entry.get_int("vl", 0, minimum=0, maximum=vl_max),
                    )
                )
                entry.finish()
            config = PingConfig(tuple(entries))
        section.finish()
        return config

    def _run(self, section: ConfigSection) -> RunConfig:
        duration = section.get_float("duration_ms", 10.0)
        warmup = section.get_float("warmup_ms", minimum=0.0)
        run = RunConfig(
            seed=section.get_int("seed", 0, minimum=0),
            duration=_ps(duration, PS_PER_MS),
            warmup=_ps(warmup, PS_PER_MS),
            drain=_ps(section.get_float("drain_ms", 5.0, minimum=0.0), PS_PER_MS),
            sample_interval=_ps(section.get_float("sample_interval_us", 100.0), PS_PER_US),
            audit=section.get_bool("audit", False),
            trace=section.get_bool("trace", False),
        )
        section.finish()
        return run

    def _buffer_experiment(self, section: ConfigSection) -> BufferExperimentConfig:
        experiment = BufferExperimentConfig(
            background=section.get_bool("background", True),
            max_burst_bytes=section.get_int("max_burst_bytes", 16 << 20, minimum=1),
            lead_time=_ps(section.get_float("lead_time_us", 50.0, minimum=0.0), PS_PER_US),
            drain_share=section.get_float("drain_share", 0.5, minimum=0.0),
        )
        section.finish()
        return experiment


def load_scenario(file_path: Union[str, Path]) -> ScenarioConfig:
    return ScenarioLoader().load(file_path)
