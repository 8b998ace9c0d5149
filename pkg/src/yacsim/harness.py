"""
Experiment runner: repeats scenarios over seeds, reduces the trials of each grid
cell to a CSV row.

Trials may run in a process pool. Results are always reduced in
``(config index, trial index)`` order, so the CSV does not depend on how the
pool scheduled the work.
"""

from __future__ import annotations

import csv
import io
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from yacsim.config import ScenarioConfig
from yacsim.errors import ConfigError
from yacsim.netsim.simulator import run

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "n_peers",
    "vote_step_delay_ms",
    "trial_count",
    "median_throughput",
    "stalled_peers_total",
    "seed_base",
]


@dataclass(frozen=True)
class TrialOutcome:
    config_index: int
    trial: int
    seed: int
    throughput: float
    stalled_peers: int
    heights: tuple[int, ...]
    timed_out: bool
    violations: tuple[str, ...]


@dataclass(frozen=True)
class SweepRow:
    n_peers: int
    vote_step_delay_ms: float
    trial_count: int
    median_throughput: float
    stalled_peers_total: int
    seed_base: int
    violations: tuple[str, ...] = ()

    def csv_values(self) -> list[str]:
        return [
            str(self.n_peers),
            f"{self.vote_step_delay_ms:g}",
            str(self.trial_count),
            f"{self.median_throughput:.4f}",
            str(self.stalled_peers_total),
            str(self.seed_base),
        ]


def run_trial(config_index: int, trial: int, config: ScenarioConfig) -> TrialOutcome:
    """One seeded run of ``config``. Module level so a process pool can pickle it."""
    seed = config.seed + trial
    result = run(config.with_overrides(seed=seed), record_trace=False)
    return TrialOutcome(
        config_index=config_index,
        trial=trial,
        seed=seed,
        throughput=result.throughput(),
        stalled_peers=result.stalled_peers(),
        heights=tuple(result.final_heights()),
        timed_out=result.timed_out,
        violations=tuple(result.violations),
    )


def reduce_cell(config: ScenarioConfig, outcomes: Sequence[TrialOutcome]) -> SweepRow:
    """Lower median throughput and summed stalled peers over one cell's trials."""
    ordered = sorted(outcomes, key=lambda o: o.trial)
    return SweepRow(
        n_peers=config.n_peers,
        vote_step_delay_ms=config.vote_step_delay_ms,
        trial_count=len(ordered),
        median_throughput=statistics.median_low([o.throughput for o in ordered]),
        stalled_peers_total=sum(o.stalled_peers for o in ordered),
        seed_base=config.seed,
        violations=tuple(v for o in ordered for v in o.violations),
    )


def run_sweep(
    grid: Sequence[ScenarioConfig],
    workers: int = 1,
    progress: Callable[[TrialOutcome], None] | None = None,
) -> list[SweepRow]:
    """Run ``trials`` seeds (``seed``, ``seed + 1``, ...) for every config in ``grid``.

    Args:
        grid: Configs to run, one CSV row each.
        workers: Process pool size; 1 runs everything in this process.
        progress: Optional callback invoked as each trial finishes.

    Returns:
        One row per config, in grid order.
    """
    if not grid:
        raise ConfigError("empty sweep grid")
    jobs = [(i, t, config) for i, config in enumerate(grid) for t in range(config.trials)]
    logger.info(f"Sweep: {len(grid)} configs, {len(jobs)} trials, {workers} worker(s)")

    outcomes: dict[tuple[int, int], TrialOutcome] = {}
    if workers <= 1:
        for job in jobs:
            outcome = run_trial(*job)
            outcomes[(outcome.config_index, outcome.trial)] = outcome
            if progress:
                progress(outcome)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_trial, *job) for job in jobs]
            for future in futures:
                outcome = future.result()
                outcomes[(outcome.config_index, outcome.trial)] = outcome
                if progress:
                    progress(outcome)

    rows = []
    for i, config in enumerate(grid):
        row = reduce_cell(config, [outcomes[(i, t)] for t in range(config.trials)])
        logger.info(
            f"n={row.n_peers} delay={row.vote_step_delay_ms:g}ms: median {row.median_throughput:.3f}/s, "
            f"{row.stalled_peers_total} stalled"
        )
        rows.append(row)
    return rows


def format_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.csv_values())
    return buf.getvalue()


def write_csv(rows: Sequence[SweepRow], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_csv(rows))
    logger.info(f"Wrote {len(rows)} rows to {path}")


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
