"""
CLI commands for ebsim.

Every command loads one scenario document, applies the --seed, --duration and
--out overrides, echoes the effective configuration next to its outputs and
prints a rich summary.
"""

import logging
import sys
from pathlib import Path
from typing import Callable, Optional

import click
from rich.console import Console
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from ebsim.core.errors import EbsimError
from ebsim.core.experiments import (
    RoutingVerification,
    buffer_estimation_experiment,
    run_scenario,
    sweep,
    verify_routing,
)
from ebsim.core.report import (
    BufferEstimate,
    RunReport,
    SweepResult,
    emit_plot_data,
    write_buffer_estimate,
    write_run_outputs,
)
from ebsim.core.routing import serialize_routing_table
from ebsim.core.scenario import ScenarioConfig, ScenarioLoader
from ebsim.utils.helpers import format_bytes, format_rate, parse_int_list
from ebsim.utils.logging import setup_logging

ECHO_FILE = "config.echo.json"


def _log_level(verbose: bool, debug: bool) -> str:
    return "DEBUG" if debug else "INFO" if verbose else "WARNING"


def _fail(console: Console, logger: logging.Logger, error: Exception) -> None:
    """Report an error and leave with its exit code (1 for anything unexpected)."""
    logger.error(f"Error: {error}")
    console.print(f"[bold red]Error: {error}[/bold red]")
    if isinstance(error, EbsimError):
        sys.exit(error.exit_code)
    raise click.Abort()


def _load(
    config_file: Path,
    seed: Optional[int],
    duration: Optional[float],
    out: Optional[Path],
) -> ScenarioConfig:
    loader = ScenarioLoader()
    config = loader.load(config_file).with_overrides(seed=seed, duration_ms=duration, out=out)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    loader.save_echo(config, config.output_dir / ECHO_FILE)
    return config


def _scenario_options(func: Callable[..., None]) -> Callable[..., None]:
    """--seed, --out, --duration, -v, --debug and --log-file, shared by every command."""
    func = click.option(
        "--log-file", type=click.Path(dir_okay=False), default=None, help="Also write log records to this file"
    )(func)
    func = click.option("--debug", is_flag=True, help="Debug output")(func)
    func = click.option("-v", "--verbose", is_flag=True, help="Verbose output")(func)
    func = click.option(
        "--duration", type=float, default=None, help="Simulated duration in ms (overrides run.duration_ms)"
    )(func)
    func = click.option(
        "--out",
        "out",
        type=click.Path(file_okay=False, path_type=Path),
        default=None,
        help="Output directory (overrides output.dir)",
    )(func)
    func = click.option("--seed", type=int, default=None, help="Master seed (overrides run.seed)")(func)
    return func


def _show_run_summary(console: Console, report: RunReport) -> None:
    table = Table(title=f"Run {report.name} (seed {report.seed})")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Hosts", str(report.num_hosts))
    table.add_row("Messages completed", f"{report.counters.messages_completed}/{report.counters.messages_posted}")
    table.add_row("Events completed", str(len(report.events)))
    table.add_row("Mean goodput", format_rate(report.mean_goodput_bps))
    table.add_row("Min goodput", format_rate(report.min_goodput_bps))
    table.add_row("Max goodput", format_rate(report.max_goodput_bps))
    table.add_row("Payload-efficient line rate", format_rate(report.payload_line_rate_bps))
    worst = report.worst_port()
    if worst is not None and worst.xmit_wait_ticks:
        table.add_row("Worst-congested port", f"{worst.node}:{worst.port} ({worst.xmit_wait_ticks} ticks)")
    else:
        table.add_row("Worst-congested port", "none")
    table.add_row("Buffers drained", "yes" if report.drained else "[yellow]no[/yellow]")
    console.print(table)


def _show_sweep_matrix(console: Console, result: SweepResult) -> None:
    credits = sorted({c.credits for c in result.cells})
    parallel = sorted({c.parallel_sends for c in result.cells})
    table = Table(title=f"Mean goodput per node (Gb/s), sweep {result.name}")
    table.add_column("C \\ P", style="cyan")
    for p in parallel:
        table.add_column(str(p), style="green", justify="right")
    for c in credits:
        row = []
        for p in parallel:
            cell = result.cell(c, p)
            row.append("[red]failed[/red]" if cell.failed else f"{cell.mean_goodput_bps / 1e9:.2f}")
        table.add_row(str(c), *row)
    console.print(table)


def _show_buffer_estimate(console: Console, estimate: BufferEstimate) -> None:
    table = Table(title="Buffer estimation trials")
    table.add_column("#", style="dim", width=3)
    table.add_column("Burst", style="cyan")
    table.add_column("XmitWait ticks", style="magenta", justify="right")
    table.add_column("Peak ingress occupancy", style="green", justify="right")
    for index, trial in enumerate(estimate.trials, 1):
        table.add_row(
            str(index),
            format_bytes(trial.burst_bytes),
            str(trial.xmit_wait_ticks),
            format_bytes(trial.peak_occupancy_bytes),
        )
    console.print(table)


def _show_routing_verification(console: Console, verification: RoutingVerification) -> None:
    table = Table(title="Conflicting phases")
    table.add_column("Phase", style="cyan", justify="right")
    table.add_column("Conflicts", style="red", justify="right")
    table.add_column("Example", style="yellow", overflow="fold")
    for phase in verification.conflicting_phases:
        found = verification.conflicts[phase]
        table.add_row(str(phase), str(len(found)), found[0].describe(verification.topology))
    console.print(table)


@click.group()
def cli() -> None:
    """ebsim - packet-granular, flit-accounted InfiniBand fabric simulator for event-builder traffic."""
    pass


@click.command()
@click.argument("config_file", type=click.Path(exists=True, path_type=Path))
@_scenario_options
def run(
    config_file: Path,
    seed: Optional[int],
    out: Optional[Path],
    duration: Optional[float],
    verbose: bool,
    debug: bool,
    log_file: Optional[str],
) -> None:
    """
    Run one scenario.

    Writes report.csv, ports.csv, events.csv, goodput.dat, latency_hist.dat,
    summary.txt and config.echo.json to the output directory.
    """
    logger = setup_logging(_log_level(verbose, debug), log_file)
    console = Console()

    try:
        config = _load(config_file, seed, duration, out)
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
            transient=True,
        ) as progress:
            task = progress.add_task(f"Simulating {config.name}...", total=None)
            report = run_scenario(config)
            progress.update(task, description="Writing outputs...")
            write_run_outputs(report, config.output_dir, config.link.num_vls)
            emit_plot_data(report, config.output_dir, stack_latency=config.host.stack_latency)

        _show_run_summary(console, report)
        console.print(
            Panel.fit(
                f"[bold green]Run complete[/bold green]\n\n"
                f"Mean goodput: {format_rate(report.mean_goodput_bps)}\n"
                f"Outputs: {config.output_dir}",
                title="Success",
                border_style="green",
            )
        )
    except Exception as e:
        _fail(console, logger, e)


@click.command(name="sweep")
@click.argument("config_file", type=click.Path(exists=True, path_type=Path))
@click.option("--credits", "credits_text", default="1,2,4,8", show_default=True, help="Comma-separated credits values")
@click.option(
    "--parallel-sends", "parallel_text", default="1,2,4,8", show_default=True, help="Comma-separated parallel-sends values"
)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True, help="Worker processes")
@_scenario_options
def sweep_command(
    config_file: Path,
    credits_text: str,
    parallel_text: str,
    workers: int,
    seed: Optional[int],
    out: Optional[Path],
    duration: Optional[float],
    verbose: bool,
    debug: bool,
    log_file: Optional[str],
) -> None:
    """Run a DAQPIPE scenario for every (credits, parallel sends) pair."""
    logger = setup_logging(_log_level(verbose, debug), log_file)
    console = Console()

    try:
        credits = parse_int_list(credits_text)
        parallel_sends = parse_int_list(parallel_text)
        config = _load(config_file, seed, duration, out)
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
            transient=True,
        ) as progress:
            progress.add_task(
                f"Sweeping {len(credits) * len(parallel_sends)} cells on {workers} worker(s)...", total=None
            )
            result = sweep(config, credits, parallel_sends, workers=workers)
            emit_plot_data(result, config.output_dir)

        _show_sweep_matrix(console, result)
        failed = [c for c in result.cells if c.failed]
        best = result.best()
        lines = [f"[bold green]Sweep complete[/bold green]\n", f"Cells: {len(result.cells)} ({len(failed)} failed)"]
        if best is not None:
            lines.append(
                f"Best: C={best.credits} P={best.parallel_sends} at {format_rate(best.mean_goodput_bps)}"
            )
        lines.append(f"Outputs: {config.output_dir}")
        console.print(Panel.fit("\n".join(lines), title="Success", border_style="yellow" if failed else "green"))
    except Exception as e:
        _fail(console, logger, e)


@click.command(name="estimate-buffer")
@click.argument("config_file", type=click.Path(exists=True, path_type=Path))
@_scenario_options
def estimate_buffer(
    config_file: Path,
    seed: Optional[int],
    out: Optional[Path],
    duration: Optional[float],
    verbose: bool,
    debug: bool,
    log_file: Optional[str],
) -> None:
    """Estimate the switch input buffer per VL from XmitWait under congestion."""
    logger = setup_logging(_log_level(verbose, debug), log_file)
    console = Console()

    try:
        config = _load(config_file, seed, duration, out)
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
            transient=True,
        ) as progress:
            progress.add_task("Searching the largest burst without XmitWait...", total=None)
            estimate = buffer_estimation_experiment(config)
            write_buffer_estimate(estimate, config.output_dir)

        _show_buffer_estimate(console, estimate)
        body = (
            f"Estimate: {format_bytes(estimate.estimate_bytes)}\n"
            f"Largest clean burst: {format_bytes(estimate.largest_clean_burst)}\n"
            f"Oracle peak occupancy: {format_bytes(estimate.oracle_peak_bytes)}\n"
            f"Configured: {format_bytes(estimate.configured_bytes)}"
        )
        if estimate.converged:
            console.print(Panel.fit(f"[bold green]Buffer estimated[/bold green]\n\n{body}", title="Success", border_style="green"))
        else:
            console.print(
                Panel.fit(
                    f"[bold yellow]Search did not converge[/bold yellow]\n\n{body}\n\n{estimate.diagnostic}",
                    title="Diagnostic",
                    border_style="yellow",
                )
            )
    except Exception as e:
        _fail(console, logger, e)


@click.command(name="verify-routing")
@click.argument("config_file", type=click.Path(exists=True, path_type=Path))
@click.option(
    "--write-table",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Also write the routing table in SWITCH line format",
)
@click.option("--strict", is_flag=True, help="Exit with code 5 when any phase has conflicts")
@_scenario_options
def verify_routing_command(
    config_file: Path,
    write_table: Optional[Path],
    strict: bool,
    seed: Optional[int],
    out: Optional[Path],
    duration: Optional[float],
    verbose: bool,
    debug: bool,
    log_file: Optional[str],
) -> None:
    """Check every linear-shift phase for links shared by two flows."""
    logger = setup_logging(_log_level(verbose, debug), log_file)
    console = Console()

    try:
        config = _load(config_file, seed, duration, out)
        verification = verify_routing(config)
        if write_table is not None:
            routing = config.routing.build(verification.topology)
            write_table.write_text(serialize_routing_table(verification.topology, routing), encoding="utf-8")
            console.print(f"[green]Routing table written to {write_table}[/green]")
    except Exception as e:
        _fail(console, logger, e)
        return

    topology = verification.topology
    summary = (
        f"Hosts: {topology.num_hosts}, switches: {topology.num_switches}\n"
        f"Routing: {verification.algorithm}"
        f"{' (two-level fat-tree)' if verification.two_level else ''}\n"
        f"Longest path: {verification.longest_path} switch hop(s)\n"
        f"Phases checked: {topology.num_hosts}"
    )
    if verification.conflict_free:
        console.print(
            Panel.fit(
                f"[bold green]0 conflicting links in all phases[/bold green]\n\n{summary}",
                title="Conflict-free",
                border_style="green",
            )
        )
        return
    _show_routing_verification(console, verification)
    console.print(
        Panel.fit(
            f"[bold yellow]{verification.total_conflicts} conflicting link(s) in "
            f"{len(verification.conflicting_phases)} phase(s)[/bold yellow]\n\n{summary}",
            title="Conflicts found",
            border_style="yellow",
        )
    )
    if strict:
        sys.exit(5)


cli.add_command(run)
cli.add_command(sweep_command)
cli.add_command(estimate_buffer)
cli.add_command(verify_routing_command)
