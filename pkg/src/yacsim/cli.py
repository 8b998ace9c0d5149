import argparse
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from yacsim.config import (
    ScenarioConfig,
    build_grid,
    load_grid,
    parse_behavior_assignments,
    parse_partition,
)
from yacsim.errors import ConfigError
from yacsim.event_dispatcher import NdjsonTraceWriter, RichTraceHandler, create_recording_dispatcher
from yacsim.harness import format_csv, run_sweep, write_csv
from yacsim.ledger import export_block_store
from yacsim.netsim.simulator import SimulationResult, Simulator
from yacsim.scenarios import CANNED, SWEEP_PEERS, SWEEP_VOTE_DELAYS_MS, get_scenario, sweep_base

load_dotenv()

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_INVARIANT_VIOLATION = 2

console = Console()


def setup_logging(datadir: Path, stream_to_stdout: bool = False) -> None:
    """Configure logging to write to yacsim.log in the datadir.

    Args:
        datadir: Path to the data directory where logs will be stored.
        stream_to_stdout: If True, also stream log messages to stdout.
    """
    log_file = datadir / "yacsim.log"
    handlers: list[logging.Handler] = [logging.FileHandler(log_file)]

    if stream_to_stdout:
        stdout_handler = logging.StreamHandler(sys.stdout)
        stdout_handler.setLevel(logging.INFO)
        handlers.append(stdout_handler)

    logging.basicConfig(
        level=logging.INFO,
        format='[%(asctime)s] [PID %(process)d]  %(name)s   %(levelname)s  %(message)s',
        handlers=handlers,
    )
    logging.info(f"Logging initialized, writing to {log_file}")


def _number_list(text: str, cast) -> list:
    try:
        return [cast(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma separated list of numbers, got '{text}'") from None


# argparse dest -> config field, for flags that map one to one
SIMPLE_FLAGS = {
    "byzantine": "n_byzantine",
    "byzantine_behavior": "byzantine_behavior",
    "batch_limit": "batch_limit",
    "batch_timeout_ms": "batch_timeout_ms",
    "tx_rate": "tx_rate",
    "duration_s": "duration_s",
    "latency_us": "latency_us",
    "jitter_us": "jitter_us",
    "link_spread_us": "link_spread_us",
    "drop_rate": "drop_rate",
    "slow_fraction": "slow_fraction",
    "slow_cost_us": "slow_cost_us",
    "seed": "seed",
    "trials": "trials",
}


def flag_overrides(args: argparse.Namespace) -> dict:
    """Config values for the scenario flags given on the command line (peers and vote delay excluded)."""
    values = {field: getattr(args, dest) for dest, field in SIMPLE_FLAGS.items() if getattr(args, dest, None) is not None}
    if args.behavior:
        values["behaviors"] = parse_behavior_assignments(args.behavior)
    if args.partition:
        values["partitions"] = [parse_partition(text).model_dump() for text in args.partition]
    return values


def base_config(args: argparse.Namespace, default=ScenarioConfig) -> ScenarioConfig:
    base = get_scenario(args.scenario) if args.scenario else default()
    overrides = flag_overrides(args)
    return base.with_overrides(**overrides) if overrides else base


def run_config(args: argparse.Namespace) -> ScenarioConfig:
    config = base_config(args)
    updates = {}
    if args.peers is not None:
        peers = _number_list(args.peers, int)
        if len(peers) != 1:
            raise ConfigError("'run' takes a single --peers value")
        updates["n_peers"] = peers[0]
    if args.vote_delay_ms is not None:
        delays = _number_list(args.vote_delay_ms, float)
        if len(delays) != 1:
            raise ConfigError("'run' takes a single --vote-delay-ms value")
        updates["vote_step_delay_ms"] = delays[0]
    return config.with_overrides(**updates) if updates else config


def print_report(result: SimulationResult) -> None:
    """Per-peer summary table plus run-level outcome."""
    config = result.config
    table = Table(title=f"{config.name} (seed {config.seed})")
    columns = ("peer", "behavior", "height", "round", "phase", "top block", "alarms", "equivocators", "commit-forwards in")
    for column in columns:
        table.add_column(column)
    for p in result.peers:
        table.add_row(
            p.name,
            p.behavior,
            str(p.height),
            str(p.round),
            p.phase + (" (crashed)" if p.crashed else ""),
            p.top_block_hash[:8],
            ", ".join(p.alarms) or "-",
            ", ".join(p.equivocators) or "-",
            str(result.sends_to("commit-forward", p.name)),
        )
    console.print(table)
    console.print(
        f"throughput {result.throughput():.3f} proposals/s, stalled peers {result.stalled_peers()}, "
        f"simulated {result.end_time / 1000:.1f} ms" + (" [yellow](time limit reached)[/yellow]" if result.timed_out else "")
    )
    for violation in result.violations:
        console.print(f"[bold red]violation:[/bold red] {violation}")


def default_trace_path(datadir: Path, config: ScenarioConfig) -> Path:
    return datadir / "traces" / f"{config.name}-{config.seed}.ndjson"


def run_scenario(args: argparse.Namespace) -> int:
    """Run one scenario, print the per-peer report and write the NDJSON trace."""
    config = run_config(args)
    trace_path = args.trace or default_trace_path(args.datadir, config)
    trace_path.parent.mkdir(parents=True, exist_ok=True)

    dispatcher, recorder = create_recording_dispatcher()
    writer = NdjsonTraceWriter(trace_path)
    dispatcher.register_global(writer)
    if args.verbose:
        printer = RichTraceHandler(console)
        if args.show:
            for kind in args.show.split(","):
                dispatcher.register(kind.strip(), printer)
        else:
            dispatcher.register_global(printer)

    simulator = Simulator(config, dispatcher)
    try:
        result = simulator.run()
    finally:
        writer.cleanup()
    result.trace = recorder.records

    print_report(result)
    console.print(f"trace written to {trace_path}")
    if args.export_chain:
        peer = next((p for p in result.peers if p.honest), result.peers[0])
        export_block_store(simulator.states[peer.index].store, args.export_chain)
        console.print(f"chain of {peer.name} written to {args.export_chain}")
    return EXIT_INVARIANT_VIOLATION if result.violations else EXIT_OK


def sweep(args: argparse.Namespace) -> int:
    """Run a vote-delay grid and write the CSV."""
    if args.grid:
        grid = load_grid(args.grid)
        overrides = flag_overrides(args)
        if overrides:
            grid = [config.with_overrides(**overrides) for config in grid]
    else:
        peers = _number_list(args.peers, int) if args.peers is not None else SWEEP_PEERS
        delays = _number_list(args.vote_delay_ms, float) if args.vote_delay_ms is not None else SWEEP_VOTE_DELAYS_MS
        grid = build_grid(base_config(args, default=sweep_base), peers, delays)

    def progress(outcome):
        logger.info(f"config {outcome.config_index} trial {outcome.trial} (seed {outcome.seed}) done")

    rows = run_sweep(grid, workers=args.workers, progress=progress)
    if args.out:
        write_csv(rows, args.out)
        console.print(f"{len(rows)} rows written to {args.out}")
    else:
        sys.stdout.write(format_csv(rows))

    violations = [v for row in rows for v in row.violations]
    for violation in violations:
        console.print(f"[bold red]violation:[/bold red] {violation}", highlight=False)
    return EXIT_INVARIANT_VIOLATION if violations else EXIT_OK


def list_scenarios(args: argparse.Namespace) -> int:
    table = Table(title="Canned scenarios")
    table.add_column("name", style="bold")
    table.add_column("description")
    for scenario in CANNED.values():
        table.add_row(scenario.name, scenario.description)
    console.print(table)
    return EXIT_OK


def add_scenario_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--scenario', type=str, default=None,
                        help='Canned scenario name or key=value scenario file; flags override its values')
    parser.add_argument('--peers', type=str, default=None,
                        help='Number of peers (sweep: comma separated list)')
    parser.add_argument('--byzantine', type=int, default=None, help='Number of Byzantine peers')
    parser.add_argument('--byzantine-behavior', type=str, default=None,
                        help='Behavior of the --byzantine peers: silent, equivocator, delayed:K, crash:T_MS, divergent:K')
    parser.add_argument('--behavior', type=str, default=None,
                        help='Per-peer behaviors, e.g. "2=silent,3=delayed:2"')
    parser.add_argument('--vote-delay-ms', type=str, default=None,
                        help='Vote step delay in ms (sweep: comma separated list)')
    parser.add_argument('--batch-limit', type=int, default=None, help='Transactions per proposal')
    parser.add_argument('--batch-timeout-ms', type=float, default=None, help='Partial batch timeout in ms')
    parser.add_argument('--tx-rate', type=float, default=None, help='Client transactions per simulated second')
    parser.add_argument('--duration-s', type=float, default=None, help='Workload duration in simulated seconds')
    parser.add_argument('--latency-us', type=int, default=None, help='Base link latency in microseconds')
    parser.add_argument('--jitter-us', type=int, default=None, help='Per-message uniform jitter bound in microseconds')
    parser.add_argument('--link-spread-us', type=int, default=None,
                        help='Per-link extra latency bound in microseconds, sampled once per link')
    parser.add_argument('--drop-rate', type=float, default=None, help='Message drop probability')
    parser.add_argument('--slow-fraction', type=float, default=None,
                        help='Fraction of peers that pay --slow-cost-us for every message they process')
    parser.add_argument('--slow-cost-us', type=int, default=None, help='Per-message processing cost of slow peers')
    parser.add_argument('--partition', type=str, action='append', default=None,
                        help='Partition "A,B|C,D@START_MS-END_MS" (repeatable)')
    parser.add_argument('--seed', type=int, default=None, help='Random seed (sweep: base seed)')
    parser.add_argument('--trials', type=int, default=None, help='Trials per sweep cell')


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with subcommands."""
    parser = argparse.ArgumentParser(
        description='yacsim - simulate YAC consensus and sweep vote-step delays'
    )
    parser.add_argument(
        '--datadir',
        type=Path,
        default=Path(os.getenv('YACSIM_DATADIR', Path('~/.yacsim').expanduser())),
        help='The directory for logs (default: ~/.yacsim)'
    )

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    run_parser = subparsers.add_parser('run', help='Run one scenario and print a per-peer report')
    add_scenario_flags(run_parser)
    run_parser.add_argument('--trace', type=Path, default=None,
                            help='NDJSON trace file (default: DATADIR/traces/NAME-SEED.ndjson)')
    run_parser.add_argument('--export-chain', type=Path, default=None,
                            help='Write the committed chain of the first honest peer to this file')
    run_parser.add_argument('--verbose', action='store_true', help='Print trace records as they happen')
    run_parser.add_argument('--show', type=str, default=None,
                            help='With --verbose, only print these record kinds, e.g. "commit,alarm,equivocation"')

    sweep_parser = subparsers.add_parser(
        'sweep',
        help='Run a peers x vote-delay grid and write a CSV',
        description='Each cell runs --trials seeds starting at --seed. The reported throughput is the '
                    'lower median over trials (for an even trial count, the value at index trials/2 - 1 '
                    'of the sorted values). A peer is stalled if it ends more than one block behind the '
                    'highest peer; stalled_peers_total sums stalled peers over the trials of a cell. '
                    'Without --grid, --peers and --vote-delay-ms default to 4,16,28,64 and 1,20,100,500 '
                    'over a 50-120 ms WAN-like base.'
    )
    add_scenario_flags(sweep_parser)
    sweep_parser.add_argument('--grid', type=Path, default=None, help='YAML grid file (base, peers, vote_delays_ms)')
    sweep_parser.add_argument('--out', type=Path, default=None, help='CSV output file (default: stdout)')
    sweep_parser.add_argument('--workers', type=int, default=1, help='Worker processes (default: 1)')

    subparsers.add_parser('scenarios', help='List canned scenarios')

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    args.datadir.mkdir(parents=True, exist_ok=True)
    setup_logging(args.datadir, stream_to_stdout=False)
    logger.info(f"CLI started with command: {args.command}")

    commands = {'run': run_scenario, 'sweep': sweep, 'scenarios': list_scenarios}
    if args.command not in commands:
        parser.print_help()
        return EXIT_CONFIG_ERROR
    try:
        return commands[args.command](args)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Configuration error: {e}", exc_info=True)
        console.print(f"[bold red]error:[/bold red] {e}", highlight=False)
        return EXIT_CONFIG_ERROR


if __name__ == '__main__':
    sys.exit(main())
