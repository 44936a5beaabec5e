"""
Run reports and output files.

Everything written here is a pure function of the report, with fixed float
formatting and sorted rows, so the same run always yields byte-identical files.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ebsim.core.daqpipe import DaqEventRecord
from ebsim.core.distributions import LatencyDistribution
from ebsim.core.engine import PS_PER_NS, PS_PER_US, derive_rng
from ebsim.core.fabric import CounterSet, PortSnapshot
from ebsim.utils.helpers import format_bytes, format_rate
from ebsim.utils.logging import get_logger

logger = get_logger("report")

LATENCY_SAMPLES = 100_000
LATENCY_BINS = 50


@dataclass
class RunReport:
    """
    Results of one run.

    Attributes:
        name: Scenario name
        seed: Seed actually used
        config: Effective configuration echo
        host_names: Host names by id
        duration: Measured run length (ps)
        warmup: Start of the measurement window (ps)
        sample_interval: Time-series bin width (ps)
        goodput_bps: Mean goodput per host over the window
        series: Delivered payload bytes per (bin, host)
        counters: Final counters
        events: Event-building completion records
        drained: Whether every buffer was empty at the end of the drain phase
        line_rate_bps: Link data rate
        payload_efficiency: MTU / (MTU + header)
        trace_digest: Event trace digest when tracing was on
    """

    name: str
    seed: int
    config: Dict[str, Any]
    host_names: Tuple[str, ...]
    duration: int
    warmup: int
    sample_interval: int
    goodput_bps: np.ndarray
    series: np.ndarray
    counters: CounterSet
    events: List[DaqEventRecord] = field(default_factory=list)
    drained: bool = True
    line_rate_bps: float = 100e9
    payload_efficiency: float = 1.0
    trace_digest: str = ""

    @property
    def num_hosts(self) -> int:
        return len(self.host_names)

    @property
    def mean_goodput_bps(self) -> float:
        if not len(self.goodput_bps):
            return 0.0
        return float(np.mean(self.goodput_bps))

    @property
    def min_goodput_bps(self) -> float:
        return float(np.min(self.goodput_bps)) if len(self.goodput_bps) else 0.0

    @property
    def max_goodput_bps(self) -> float:
        return float(np.max(self.goodput_bps)) if len(self.goodput_bps) else 0.0

    @property
    def payload_line_rate_bps(self) -> float:
        return self.payload_efficiency * self.line_rate_bps

    def worst_port(self) -> Optional[PortSnapshot]:
        return self.counters.worst_port()


@dataclass
class SweepCell:
    credits: int
    parallel_sends: int
    seed: int
    mean_goodput_bps: float = 0.0
    min_goodput_bps: float = 0.0
    max_goodput_bps: float = 0.0
    events_completed: int = 0
    drained: bool = True
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class SweepResult:
    name: str
    seed: int
    cells: List[SweepCell]

    def cell(self, credits: int, parallel_sends: int) -> SweepCell:
        for cell in self.cells:
            if cell.credits == credits and cell.parallel_sends == parallel_sends:
                return cell
        raise KeyError((credits, parallel_sends))

    def best(self) -> Optional[SweepCell]:
        ok = [c for c in self.cells if not c.failed]
        if not ok:
            return None
        return max(ok, key=lambda c: (c.mean_goodput_bps, -c.credits, -c.parallel_sends))


@dataclass(frozen=True)
class BurstTrial:
    burst_bytes: int
    xmit_wait_ticks: int
    peak_occupancy_bytes: int


@dataclass
class BufferEstimate:
    """
    Result of the buffer estimation experiment.

    Attributes:
        estimate_bytes: Wire footprint of S* x (1 - drain_share) plus the packet that no longer fits
        largest_clean_burst: S*, the largest burst without XmitWait
        oracle_peak_bytes: Measured peak occupancy of the ingress buffer for S*
        configured_bytes: Configured buffer per VL
        drain_share: Share of the line rate left to the burst
        converged: False when no stall/no-stall boundary was found
        diagnostic: Why the search did not converge
        trials: Every burst tried, in order
    """

    estimate_bytes: int
    largest_clean_burst: int
    oracle_peak_bytes: int
    configured_bytes: int
    drain_share: float
    converged: bool
    diagnostic: str = ""
    trials: List[BurstTrial] = field(default_factory=list)

    @property
    def oracle_error(self) -> Optional[float]:
        if not self.oracle_peak_bytes:
            return None
        return (self.estimate_bytes - self.oracle_peak_bytes) / self.oracle_peak_bytes


def _gbps(bps: float) -> str:
    return f"{bps / 1e9:.6f}"


def _ensure_dir(out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"Cannot create output directory {path}: {e}")
    return path


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise OSError(f"Error writing to {path}: {e}")
    return path


def _write_text(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OSError(f"Error writing to {path}: {e}")
    return path


def write_report_csv(report: RunReport, out_dir: Path) -> Path:
    """report.csv: goodput time series, one row per (interval, host), plus the mean per host."""
    rows = []
    interval_us = report.sample_interval / PS_PER_US
    seconds = report.sample_interval / 1e12
    for index in range(report.series.shape[0]):
        for host, name in enumerate(report.host_names):
            delivered = int(report.series[index, host])
            rows.append(
                [f"{index * interval_us:.3f}", name, delivered, _gbps(delivered * 8 / seconds)]
            )
    for host, name in enumerate(report.host_names):
        rows.append(["mean", name, "", _gbps(float(report.goodput_bps[host]))])
    return _write_rows(out_dir / "report.csv", ["time_us", "host", "bytes", "goodput_gbps"], rows)


def write_ports_csv(counters: CounterSet, out_dir: Path, num_vls: int) -> Path:
    """ports.csv: one row per (node, port)."""
    header = ["node", "port", "kind", "xmit_wait_ticks", "bytes_tx", "packets_tx"]
    header += [f"max_occupancy_vl{vl}" for vl in range(num_vls)]
    rows = []
    for snapshot in sorted(counters.ports, key=lambda p: (p.node, p.port)):
        rows.append(
            [
                snapshot.node,
                snapshot.port,
                "host" if snapshot.is_host else "switch",
                snapshot.xmit_wait_ticks,
                snapshot.bytes_tx,
                snapshot.packets_tx,
                *snapshot.max_occupancy_blocks,
            ]
        )
    return _write_rows(out_dir / "ports.csv", header, rows)


def write_events_csv(events: Sequence[DaqEventRecord], out_dir: Path) -> Path:
    rows = [
        [e.event_id, e.bu, e.t_assigned / PS_PER_NS, e.t_complete / PS_PER_NS, e.bytes]
        for e in sorted(events, key=lambda e: e.event_id)
    ]
    return _write_rows(
        out_dir / "events.csv", ["event_id", "bu", "t_assigned_ns", "t_complete_ns", "bytes"], rows
    )


def render_summary(report: RunReport) -> str:
    """Human-readable summary: goodput statistics and the worst-congested port."""
    lines = [
        f"scenario: {report.name}",
        f"seed: {report.seed}",
        f"hosts: {report.num_hosts}",
        f"duration: {report.duration / 1e9:.3f} ms (warmup {report.warmup / 1e9:.3f} ms)",
        f"messages: {report.counters.messages_posted} posted, {report.counters.messages_completed} completed",
        f"events completed: {len(report.events)}",
        f"goodput mean: {format_rate(report.mean_goodput_bps)}",
        f"goodput min: {format_rate(report.min_goodput_bps)}",
        f"goodput max: {format_rate(report.max_goodput_bps)}",
        f"payload-efficient line rate: {format_rate(report.payload_line_rate_bps)}",
        f"payload delivered: {format_bytes(report.counters.payload_delivered)}",
    ]
    worst = report.worst_port()
    if worst is None or worst.xmit_wait_ticks == 0:
        lines.append("worst-congested port: none (no XmitWait)")
    else:
        lines.append(f"worst-congested port: {worst.node}:{worst.port} ({worst.xmit_wait_ticks} XmitWait ticks)")
    lines.append(f"buffers drained: {'yes' if report.drained else 'no'}")
    if report.trace_digest:
        lines.append(f"trace digest: {report.trace_digest}")
    return "\n".join(lines) + "\n"


def write_summary(report: RunReport, out_dir: Path) -> Path:
    return _write_text(out_dir / "summary.txt", render_summary(report))


def write_goodput_dat(report: RunReport, out_dir: Path) -> Path:
    """goodput.dat: aggregate goodput per sampling interval (gnuplot table)."""
    seconds = report.sample_interval / 1e12
    lines = ["# time_us mean_goodput_gbps min_goodput_gbps max_goodput_gbps"]
    for index in range(report.series.shape[0]):
        row = report.series[index] * 8 / seconds / 1e9
        lines.append(
            f"{index * report.sample_interval / PS_PER_US:.3f} "
            f"{row.mean():.6f} {row.min():.6f} {row.max():.6f}"
        )
    return _write_text(out_dir / "goodput.dat", "\n".join(lines) + "\n")


def write_latency_hist(
    dist: LatencyDistribution,
    out_dir: Path,
    seed: int = 0,
    samples: int = LATENCY_SAMPLES,
    bins: int = LATENCY_BINS,
) -> Path:
    """latency_hist.dat: histogram of sampled stack latencies (bin start/end in ns, probability)."""
    draws = dist.sample_many(derive_rng(seed, "latency-histogram"), samples) / PS_PER_NS
    low, high = float(draws.min()), float(draws.max())
    if high <= low:
        high = low + 1.0
    counts, edges = np.histogram(draws, bins=bins, range=(low, high))
    lines = ["# bin_start_ns bin_end_ns probability"]
    for index, value in enumerate(counts):
        lines.append(f"{edges[index]:.3f} {edges[index + 1]:.3f} {value / samples:.6f}")
    return _write_text(out_dir / "latency_hist.dat", "\n".join(lines) + "\n")


def write_sweep(result: SweepResult, out_dir: Path) -> List[Path]:
    """sweep.dat (gnuplot) and sweep.csv (with per-cell status)."""
    ordered = sorted(result.cells, key=lambda c: (c.credits, c.parallel_sends))
    lines = ["# credits parallel_sends goodput_gbps"]
    for cell in ordered:
        value = "nan" if cell.failed else _gbps(cell.mean_goodput_bps)
        lines.append(f"{cell.credits} {cell.parallel_sends} {value}")
    dat = _write_text(out_dir / "sweep.dat", "\n".join(lines) + "\n")
    rows = [
        [
            c.credits,
            c.parallel_sends,
            c.seed,
            "" if c.failed else _gbps(c.mean_goodput_bps),
            "" if c.failed else _gbps(c.min_goodput_bps),
            "" if c.failed else _gbps(c.max_goodput_bps),
            c.events_completed,
            "failed" if c.failed else ("ok" if c.drained else "not-drained"),
            c.error or "",
        ]
        for c in ordered
    ]
    table = _write_rows(
        out_dir / "sweep.csv",
        [
            "credits",
            "parallel_sends",
            "seed",
            "goodput_gbps",
            "min_goodput_gbps",
            "max_goodput_gbps",
            "events_completed",
            "status",
            "error",
        ],
        rows,
    )
    return [dat, table]


def render_sweep_summary(result: SweepResult) -> str:
    ok = [c for c in result.cells if not c.failed]
    lines = [f"sweep: {result.name}", f"seed: {result.seed}", f"cells: {len(result.cells)} ({len(result.cells) - len(ok)} failed)"]
    if ok:
        values = [c.mean_goodput_bps for c in ok]
        best = result.best()
        lines.append(f"goodput mean: {format_rate(float(np.mean(values)))}")
        lines.append(f"goodput min: {format_rate(min(values))}")
        lines.append(f"goodput max: {format_rate(max(values))}")
        lines.append(f"best cell: credits={best.credits} parallel_sends={best.parallel_sends}")
    return "\n".join(lines) + "\n"


def render_buffer_estimate(estimate: BufferEstimate) -> str:
    lines = [
        f"estimate: {format_bytes(estimate.estimate_bytes)}",
        f"largest clean burst: {format_bytes(estimate.largest_clean_burst)}",
        f"drain share: {estimate.drain_share:.3f}",
        f"oracle peak occupancy: {format_bytes(estimate.oracle_peak_bytes)}",
        f"configured buffer: {format_bytes(estimate.configured_bytes)}",
        f"converged: {'yes' if estimate.converged else 'no'}",
    ]
    error = estimate.oracle_error
    if error is not None:
        lines.append(f"error vs oracle: {error * 100:+.2f}%")
    if estimate.diagnostic:
        lines.append(f"diagnostic: {estimate.diagnostic}")
    return "\n".join(lines) + "\n"


def write_buffer_estimate(estimate: BufferEstimate, out_dir: Union[str, Path]) -> List[Path]:
    """buffer_trials.csv (one row per burst, in search order) and summary.txt."""
    out = _ensure_dir(out_dir)
    rows = [[t.burst_bytes, t.xmit_wait_ticks, t.peak_occupancy_bytes] for t in estimate.trials]
    return [
        _write_rows(out / "buffer_trials.csv", ["burst_bytes", "xmit_wait_ticks", "peak_occupancy_bytes"], rows),
        _write_text(out / "summary.txt", render_buffer_estimate(estimate)),
    ]


def emit_plot_data(
    data: Union[RunReport, SweepResult],
    out_dir: Union[str, Path],
    stack_latency: Optional[LatencyDistribution] = None,
) -> List[Path]:
    """
    Write the gnuplot tables and the summary for a run report or a sweep.

    Args:
        data: A RunReport or a SweepResult
        out_dir: Output directory (created if missing)
        stack_latency: Also render latency_hist.dat from this distribution

    Returns:
        Paths written

    Raises:
        OSError: With the failing path
    """
    out = _ensure_dir(out_dir)
    if isinstance(data, SweepResult):
        paths = write_sweep(data, out)
        paths.append(_write_text(out / "summary.txt", render_sweep_summary(data)))
        seed = data.seed
    else:
        paths = [write_goodput_dat(data, out), write_summary(data, out)]
        seed = data.seed
    if stack_latency is not None:
        paths.append(write_latency_hist(stack_latency, out, seed=seed))
    return paths


def write_run_outputs(report: RunReport, out_dir: Union[str, Path], num_vls: int) -> List[Path]:
    """report.csv, ports.csv, events.csv and summary.txt of one run."""
    out = _ensure_dir(out_dir)
    paths = [
        write_report_csv(report, out),
        write_ports_csv(report.counters, out, num_vls),
        write_events_csv(report.events, out),
        write_summary(report, out),
    ]
    logger.info("wrote %d output files to %s", len(paths), out)
    return paths
