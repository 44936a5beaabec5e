"""
Experiment orchestration: single runs, credits/parallel-sends sweeps, the
switch buffer estimation experiment and static routing verification.
"""

import multiprocessing
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ebsim.core.daqpipe import DaqpipeConfig, DaqpipeInjector
from ebsim.core.engine import PS_PER_US, derive_seed
from ebsim.core.errors import ConfigError, EbsimError, ModelInvariantError
from ebsim.core.fabric import Fabric
from ebsim.core.link import BLOCK_BYTES, blocks_for
from ebsim.core.report import BufferEstimate, BurstTrial, RunReport, SweepCell, SweepResult
from ebsim.core.routing import (
    LinkConflict,
    Routing,
    check_routing,
    compute_fat_tree_routing,
    detect_two_level,
    verify_all_phases,
)
from ebsim.core.scenario import ScenarioConfig, TrafficConfig
from ebsim.core.topology import Topology, star_topology
from ebsim.core.traffic import (
    FixedSizeShifter,
    Injector,
    PingConfig,
    PingEntry,
    PingInjector,
    ShifterConfig,
    StreamConfig,
    StreamInjector,
    TimeWindowShifter,
)
from ebsim.utils.logging import get_logger, sim_clock

logger = get_logger("experiments")

STEP = 50 * PS_PER_US


def make_injector(traffic: TrafficConfig, topology: Topology) -> Optional[Injector]:
    """
    Build the injector of a traffic configuration.

    Raises:
        ConfigError: If the traffic names hosts the topology does not have
    """
    num_hosts = topology.num_hosts

    def check_host(label: str, host: int) -> None:
        if not 0 <= host < num_hosts:
            raise ConfigError(f"traffic.{label}: host {host} does not exist ({num_hosts} hosts)")

    if traffic is None:
        return None
    if isinstance(traffic, ShifterConfig):
        if traffic.kind == "fixed_size":
            return FixedSizeShifter(traffic)
        return TimeWindowShifter(traffic)
    if isinstance(traffic, DaqpipeConfig):
        return DaqpipeInjector(traffic)
    if isinstance(traffic, StreamConfig):
        check_host("src", traffic.src)
        check_host("dest", traffic.dest)
        return StreamInjector(traffic)
    if isinstance(traffic, PingConfig):
        for entry in traffic.entries:
            check_host("messages.src", entry.src)
            check_host("messages.dest", entry.dest)
        return PingInjector(traffic.entries)
    raise ConfigError(f"unsupported traffic configuration {type(traffic).__name__}")


def build_fabric(config: ScenarioConfig) -> Tuple[Fabric, Routing]:
    topology = config.topology.build()
    routing = config.routing.build(topology)
    fabric = Fabric(
        topology,
        routing,
        link_params=config.link,
        switch_params=config.switch,
        host_params=config.host,
        seed=config.run.seed,
        audit=config.run.audit,
        trace=config.run.trace,
    )
    return fabric, routing


def run_scenario(config: ScenarioConfig) -> RunReport:
    """
    Run one scenario: measured period, then a drain period with injectors stopped.

    Args:
        config: Validated scenario

    Returns:
        The run report

    Raises:
        ConfigError: Invalid scenario
        TopologyError, RoutingError: Broken topology or routing
        ModelInvariantError: A model invariant was violated
    """
    fabric, _ = build_fabric(config)
    run = config.run
    stats = fabric.configure_stats(run.effective_warmup, run.duration, run.sample_interval)
    injector = make_injector(config.traffic, fabric.topology)
    engine = fabric.engine
    if injector is not None:
        injector.attach(fabric)
        # Scheduled before any traffic event, so it fires first at t == duration.
        engine.call_at(run.duration, "run", injector.stop)
        injector.start()
    logger.info(
        "running %s: %d hosts, %d switches, %.3f ms + %.3f ms drain, seed %d",
        config.name, fabric.topology.num_hosts, fabric.topology.num_switches,
        run.duration / 1e9, run.drain / 1e9, run.seed,
    )
    with sim_clock(lambda: engine.now):
        fabric.run_until(run.duration)
        counters = fabric.run_until(run.duration + run.drain)
    fabric.audit()
    drained = fabric.buffers_empty()
    if drained:
        fabric.check_egress_accounting()
    else:
        logger.warning("%s: buffers not empty after %.3f ms drain", config.name, run.drain / 1e9)
    logger.info("%s finished: %d events processed", config.name, counters.events_processed)
    events = injector.event_records() if injector is not None else []
    return RunReport(
        name=config.name,
        seed=run.seed,
        config=config.to_dict(),
        host_names=fabric.topology.host_names,
        duration=run.duration,
        warmup=run.effective_warmup,
        sample_interval=run.sample_interval,
        goodput_bps=stats.goodput_bps(),
        series=stats.series,
        counters=counters,
        events=events,
        drained=drained,
        line_rate_bps=float(config.link.data_rate_bps),
        payload_efficiency=config.host.payload_efficiency,
        trace_digest=engine.trace_digest(),
    )


def _sweep_worker(args: Dict[str, Any]) -> Dict[str, Any]:
    """Module-level worker so process pools can pickle it."""
    config: ScenarioConfig = args["config"]
    result = {
        "index": args["index"],
        "credits": args["credits"],
        "parallel_sends": args["parallel_sends"],
        "seed": config.run.seed,
    }
    try:
        report = run_scenario(config)
    except EbsimError as e:
        result["error"] = f"{type(e).__name__}: {e}"
        return result
    result.update(
        mean_goodput_bps=report.mean_goodput_bps,
        min_goodput_bps=report.min_goodput_bps,
        max_goodput_bps=report.max_goodput_bps,
        events_completed=len(report.events),
        drained=report.drained,
    )
    return result


def sweep(
    template: ScenarioConfig,
    credits: Sequence[int],
    parallel_sends: Sequence[int],
    workers: int = 1,
) -> SweepResult:
    """
    One run per (credits, parallel_sends) pair.

    Each cell's seed derives from the master seed and the cell's parameters
    only, so the order of cells changes nothing. A failing cell is marked and
    the sweep goes on.

    Args:
        template: Scenario with daqpipe traffic
        credits: Values of C
        parallel_sends: Values of P
        workers: Worker processes (1 runs serially)
    """
    if not credits or not parallel_sends:
        raise ConfigError("sweep: credits and parallel_sends must not be empty")
    master = template.run.seed
    jobs = []
    for c in credits:
        for p in parallel_sends:
            cell_config = template.with_daqpipe(c, p)
            seed = derive_seed(master, "sweep", c, p)
            cell_config = replace(cell_config, run=replace(cell_config.run, seed=seed))
            jobs.append({"index": len(jobs), "credits": c, "parallel_sends": p, "config": cell_config})
    logger.info("sweep %s: %d cells on %d worker(s)", template.name, len(jobs), workers)
    if workers <= 1 or len(jobs) == 1:
        raw = [_sweep_worker(job) for job in jobs]
    else:
        with multiprocessing.Pool(min(workers, len(jobs))) as pool:
            raw = list(pool.imap_unordered(_sweep_worker, jobs))
    raw.sort(key=lambda r: r["index"])
    cells = []
    for r in raw:
        cell = SweepCell(
            credits=r["credits"],
            parallel_sends=r["parallel_sends"],
            seed=r["seed"],
            mean_goodput_bps=r.get("mean_goodput_bps", 0.0),
            min_goodput_bps=r.get("min_goodput_bps", 0.0),
            max_goodput_bps=r.get("max_goodput_bps", 0.0),
            events_completed=r.get("events_completed", 0),
            drained=r.get("drained", False),
            error=r.get("error"),
        )
        if cell.failed:
            logger.warning("sweep cell C=%d P=%d failed: %s", cell.credits, cell.parallel_sends, cell.error)
        cells.append(cell)
    return SweepResult(template.name, master, cells)


def _burst_trial(config: ScenarioConfig, burst_bytes: int) -> BurstTrial:
    """
    host1 sends one burst to host2 while host0 streams to host2.

    XmitWait is read on host1's uplink; the oracle is the peak occupancy of
    the switch input buffer behind that uplink.
    """
    topology = star_topology(3)
    fabric = Fabric(
        topology,
        compute_fat_tree_routing(topology),
        link_params=config.link,
        switch_params=config.switch,
        host_params=config.host,
        seed=config.run.seed,
        audit=config.run.audit,
    )
    experiment = config.buffer_experiment
    if experiment.background:
        stream = StreamInjector(StreamConfig(src=0, dest=2))
        stream.attach(fabric)
        stream.start()
    burst = PingInjector([PingEntry(experiment.lead_time, 1, 2, burst_bytes)])
    burst.attach(fabric)
    burst.start()
    engine = fabric.engine
    # Generous bound: the burst at a tenth of line rate plus a millisecond.
    limit = experiment.lead_time + 10 * burst_bytes * 8 * 10**12 // config.link.data_rate_bps + 10**9
    with sim_clock(lambda: engine.now):
        while engine.now < limit:
            fabric.run_until(engine.now + STEP)
            if burst.messages and burst.messages[0].completed_at is not None:
                break
        else:
            # a burst always drains within the bound
            raise ModelInvariantError(
                f"burst of {burst_bytes} B from host 1 did not complete by {limit} ps",
                time_ps=engine.now,
                component="buffer-experiment",
            )
    counters = fabric.counters()
    uplink = counters.port(topology.host_names[1], 1)
    ingress = topology.host_attachment(1)
    switch_port = fabric.switches[ingress.node].ports[ingress.port]
    peak = max(switch_port.counters.max_occupancy_blocks) * BLOCK_BYTES
    trial = BurstTrial(burst_bytes, uplink.xmit_wait_ticks, peak)
    logger.debug("burst %d B: xmit_wait=%d ticks, peak occupancy=%d B", burst_bytes, trial.xmit_wait_ticks, peak)
    return trial


def buffer_estimation_experiment(config: ScenarioConfig) -> BufferEstimate:
    """
    Estimate the switch input buffer per VL from XmitWait.

    Bursts of increasing size (multiples of the MTU) are sent into a port
    congested by a background stream. The burst is drained at drain_share of
    the line rate while it arrives at full rate, so the largest burst that
    never stalls the sender, S*, leaves S* x (1 - drain_share) in the buffer
    with no room for one more packet. Sizes are counted in credit blocks on
    the wire, the unit the buffer is allocated in. A geometric sweep brackets
    S*, binary search refines it.

    Returns:
        The estimate, with the occupancy oracle and every trial
    """
    experiment = config.buffer_experiment
    mtu = config.host.mtu
    packet_footprint = blocks_for(mtu + config.host.header_bytes) * BLOCK_BYTES
    max_packets = max(1, experiment.max_burst_bytes // mtu)
    configured = config.link.buffer_bytes_per_vl
    trials: List[BurstTrial] = []
    by_packets: Dict[int, BurstTrial] = {}

    def stalls(packets: int) -> bool:
        trial = _burst_trial(config, packets * mtu)
        trials.append(trial)
        by_packets[packets] = trial
        return trial.xmit_wait_ticks > 0

    def result(clean: int, converged: bool, diagnostic: str = "") -> BufferEstimate:
        oracle = by_packets[clean].peak_occupancy_bytes if clean in by_packets else 0
        estimate = 0
        if clean:
            estimate = int(clean * packet_footprint * (1 - experiment.drain_share)) + packet_footprint
        return BufferEstimate(
            estimate_bytes=estimate,
            largest_clean_burst=clean * mtu,
            oracle_peak_bytes=oracle,
            configured_bytes=configured,
            drain_share=experiment.drain_share,
            converged=converged,
            diagnostic=diagnostic,
            trials=trials,
        )

    if stalls(1):
        return result(0, False, "a single-packet burst already stalls the sender")
    clean, stalled = 1, None
    while stalled is None:
        candidate = min(clean * 2, max_packets)
        if candidate == clean:
            return result(
                clean,
                False,
                f"no XmitWait for bursts up to {clean * mtu} B: the port is not congested",
            )
        if stalls(candidate):
            stalled = candidate
        else:
            clean = candidate
    while stalled - clean > 1:
        middle = (clean + stalled) // 2
        if stalls(middle):
            stalled = middle
        else:
            clean = middle
    estimate = result(clean, True)
    logger.info(
        "buffer estimate %d B (S*=%d B, oracle peak %d B, configured %d B)",
        estimate.estimate_bytes, estimate.largest_clean_burst, estimate.oracle_peak_bytes, configured,
    )
    return estimate


@dataclass
class RoutingVerification:
    """Static checks of a routing: path audit and per-phase linear-shift conflicts."""

    topology: Topology
    algorithm: str
    two_level: bool
    longest_path: int
    conflicts: Dict[int, List[LinkConflict]]

    @property
    def conflicting_phases(self) -> List[int]:
        return sorted(phase for phase, found in self.conflicts.items() if found)

    @property
    def conflict_free(self) -> bool:
        return not self.conflicting_phases

    @property
    def total_conflicts(self) -> int:
        return sum(len(found) for found in self.conflicts.values())


def verify_routing(config: ScenarioConfig) -> RoutingVerification:
    """
    Trace every host pair (loop-free, at most 3 switch hops on two-level
    trees) and run the conflict check over all N linear-shift phases.
    """
    topology = config.topology.build()
    routing = config.routing.build(topology)
    two_level = detect_two_level(topology) is not None
    longest = check_routing(topology, routing, max_hops=3 if two_level else None)
    conflicts = verify_all_phases(topology, routing)
    verification = RoutingVerification(topology, config.routing.algorithm, two_level, longest, conflicts)
    logger.info(
        "routing %s on %d hosts: %d conflicting phase(s), longest path %d hops",
        config.routing.algorithm, topology.num_hosts, len(verification.conflicting_phases), longest,
    )
    return verification
