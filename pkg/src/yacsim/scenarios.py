"""
Canned scenarios and the default vote-delay sweep grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from yacsim.config import PartitionSpec, ScenarioConfig, ScriptedTransfer, build_grid, load_scenario_file
from yacsim.consensus.permutation import peer_order
from yacsim.errors import ConfigError
from yacsim.ledger import apply_proposal, build_block
from yacsim.model import Proposal
from yacsim.netsim.simulator import build_setup, build_workload

logger = logging.getLogger(__name__)

BOB_NAMES = ("alice", "clara", "deana")


@dataclass(frozen=True)
class CannedScenario:
    name: str
    description: str
    build: Callable[[], ScenarioConfig]


def happy_4() -> ScenarioConfig:
    return ScenarioConfig(
        name="happy-4",
        n_peers=4,
        transfers=[ScriptedTransfer(time_ms=0, src=0, dst=1, amount=5)],
        batch_limit=1,
        latency_us=5_000,
        vote_step_delay_ms=20,
        duration_s=1,
        drain_s=1,
    )


def bob_partition() -> ScenarioConfig:
    """Four peers; Bob computes a different block and is cut off while the others commit.

    Bob is whichever peer comes last in the vote order of the block the other
    three agree on, so he is never the collector. When the partition heals, his
    next vote reaches a peer that already committed and gets the commit
    forwarded back.
    """
    base = ScenarioConfig(
        name="bob-partition",
        n_peers=4,
        n_clients=4,
        transfers=[
            ScriptedTransfer(time_ms=0, src=0, dst=3, amount=10),
            ScriptedTransfer(time_ms=0, src=1, dst=3, amount=20),
            ScriptedTransfer(time_ms=0, src=2, dst=3, amount=30),
        ],
        batch_limit=3,
        batch_timeout_ms=100,
        latency_us=10_000,
        jitter_us=0,
        vote_step_delay_ms=300,
        duration_s=1,
        drain_s=4,
        seed=7,
    )
    setup = build_setup(base)
    txs = tuple(tx for _, tx in build_workload(base, setup))
    # every scripted transfer arrives at t=0 and fills the one batch
    vp, _ = apply_proposal(setup.genesis, Proposal(0, txs, 0), setup.crypto)
    majority_block = build_block(vp, setup.genesis)
    order = peer_order(majority_block.block_hash, setup.peers)
    bob = [key.peer for key in setup.peer_keys].index(order[-1])

    others = iter(BOB_NAMES)
    names = ["bob" if i == bob else next(others) for i in range(base.n_peers)]
    logger.debug(f"bob-partition: peer {bob} plays Bob, collector is {order[0]}")
    return base.with_overrides(
        peer_names=names,
        behaviors={bob: "divergent:0"},
        partitions=[
            PartitionSpec(
                side_a=[bob], side_b=[i for i in range(base.n_peers) if i != bob], start_ms=5, end_ms=250
            ).model_dump()
        ],
    )


def reject_divergence() -> ScenarioConfig:
    """Four peers that each build a different block, so no hash can reach a supermajority."""
    return ScenarioConfig(
        name="reject-divergence",
        n_peers=4,
        n_clients=4,
        transfers=[
            ScriptedTransfer(time_ms=0, src=0, dst=3, amount=10),
            ScriptedTransfer(time_ms=0, src=1, dst=3, amount=20),
            ScriptedTransfer(time_ms=0, src=2, dst=3, amount=30),
        ],
        batch_limit=3,
        behaviors={1: "divergent:0", 2: "divergent:1", 3: "divergent:2"},
        latency_us=10_000,
        vote_step_delay_ms=50,
        duration_s=1,
        drain_s=2,
    )


def silent_byzantine() -> ScenarioConfig:
    return ScenarioConfig(
        name="silent-byzantine",
        n_peers=4,
        n_byzantine=1,
        byzantine_behavior="silent",
        tx_rate=50,
        batch_limit=20,
        latency_us=10_000,
        jitter_us=2_000,
        vote_step_delay_ms=20,
        duration_s=3,
    )


def equivocator_7() -> ScenarioConfig:
    return ScenarioConfig(
        name="equivocator-7",
        n_peers=7,
        n_byzantine=2,
        byzantine_behavior="equivocator",
        tx_rate=50,
        batch_limit=20,
        latency_us=10_000,
        jitter_us=2_000,
        vote_step_delay_ms=20,
        duration_s=3,
    )


def lossy_network() -> ScenarioConfig:
    return ScenarioConfig(
        name="lossy-network",
        n_peers=4,
        tx_rate=50,
        batch_limit=20,
        latency_us=10_000,
        jitter_us=5_000,
        drop_rate=0.1,
        vote_step_delay_ms=20,
        duration_s=3,
        drain_s=10,
    )


CANNED: dict[str, CannedScenario] = {
    s.name: s
    for s in (
        CannedScenario("happy-4", "4 honest peers, one proposal, one commit each", happy_4),
        CannedScenario("bob-partition", "Bob misses the commit broadcast and catches up through a forwarded commit", bob_partition),
        CannedScenario("reject-divergence", "4 peers build 4 different blocks; every peer raises bft-violation", reject_divergence),
        CannedScenario("silent-byzantine", "4 peers, one never sends anything", silent_byzantine),
        CannedScenario("equivocator-7", "7 peers, two vote for a different fabricated hash per target", equivocator_7),
        CannedScenario("lossy-network", "4 honest peers behind a link dropping 10% of messages", lossy_network),
    )
}


def get_scenario(name_or_path: str) -> ScenarioConfig:
    """Resolve a canned scenario name or a ``key=value`` scenario file.

    Raises:
        ConfigError: If neither a canned scenario nor a readable file matches.
    """
    if name_or_path in CANNED:
        return CANNED[name_or_path].build()
    path = Path(name_or_path)
    if path.exists():
        return load_scenario_file(path)
    raise ConfigError(f"unknown scenario '{name_or_path}'. Available: {', '.join(CANNED)}")


# vote-delay sweep ------------------------------------------------------------

SWEEP_PEERS = [4, 16, 28, 64]
SWEEP_VOTE_DELAYS_MS = [1.0, 20.0, 100.0, 500.0]


def sweep_base() -> ScenarioConfig:
    """Fault-free WAN-like base over 50-120 ms links.

    Clients outpace the ordering service, so every proposal after the first is
    a full batch and a given round orders the same transactions whatever the
    vote step. One peer in 32 pays 2 ms for each message it processes; at a
    1 ms step votes reach it faster than that and it falls behind for good.
    """
    return ScenarioConfig(
        name="vote-delay-sweep",
        tx_rate=1000,
        batch_limit=50,
        batch_timeout_ms=50,
        duration_s=10,
        drain_s=1,
        latency_us=50_000,
        link_spread_us=70_000,
        slow_fraction=1 / 32,
        slow_cost_us=2_000,
        trials=10,
    )


def default_sweep_grid(base: ScenarioConfig | None = None) -> list[ScenarioConfig]:
    return build_grid(base or sweep_base(), SWEEP_PEERS, SWEEP_VOTE_DELAYS_MS)
