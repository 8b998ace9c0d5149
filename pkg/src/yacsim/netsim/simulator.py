"""
Discrete-event simulation of an ordering service, YAC peers and clients.

Time is virtual and counted in integer microseconds. Pending events live in a
heap ordered by ``(time, sequence)``; the sequence number is the insertion
order, so equal timestamps are processed in the order they were scheduled.
All randomness comes from generators seeded by the scenario, which makes a
``(scenario, seed)`` pair reproduce the same trace byte for byte.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any

from yacsim.config import ScenarioConfig
from yacsim.consensus.state_machine import (
    Alarm,
    ArmTimer,
    Broadcast,
    Commit,
    Count,
    PeerConsensusState,
    PeerContext,
    Phase,
    Send,
    handle_message,
    on_timer,
)
from yacsim.crypto import CryptoProvider, KeyPair, create_crypto
from yacsim.event_dispatcher import EventDispatcher, TraceRecorder
from yacsim.ledger import WorldState, apply_proposal, genesis_state, replay, sign_transaction
from yacsim.model import PeerId, Proposal, Transaction, Transfer, Vote, describe, signature_count
from yacsim.netsim.byzantine import Behavior, divergent_validator, equivocate
from yacsim.netsim.network import Network, partitions_heal_by
from yacsim.netsim.trace import TraceRecord
from yacsim.ordering import OrderingCounters, OrderingService

logger = logging.getLogger(__name__)

OS = "os"

_SUBMIT = "submit"
_DELIVER = "deliver"
_PROCESS = "process"
_TIMER = "timer"
_OS_NOTICE = "os-notice"
_OS_WAKEUP = "os-wakeup"


# set-up ----------------------------------------------------------------------

@dataclass(frozen=True)
class Setup:
    """Keys, accounts and genesis state derived from a scenario."""

    crypto: CryptoProvider
    peer_keys: tuple[KeyPair, ...]
    client_keys: tuple[KeyPair, ...]
    genesis: WorldState

    @property
    def peers(self) -> tuple[PeerId, ...]:
        return tuple(sorted(key.peer for key in self.peer_keys))


def client_name(index: int) -> str:
    return f"client-{index}"


def build_setup(config: ScenarioConfig) -> Setup:
    crypto = create_crypto(config.crypto)
    peer_keys = tuple(
        crypto.generate_keypair(config.peer_name(i), f"yacsim:{config.seed}:peer:{i}".encode())
        for i in range(config.n_peers)
    )
    client_keys = tuple(
        crypto.generate_keypair(client_name(i), f"yacsim:{config.seed}:client:{i}".encode())
        for i in range(config.n_clients)
    )
    genesis = genesis_state(
        {key.peer.display_name: config.initial_balance for key in client_keys},
        {key.peer.display_name: key.peer.public_key for key in client_keys},
    )
    return Setup(crypto, peer_keys, client_keys, genesis)


def build_workload(config: ScenarioConfig, setup: Setup) -> list[tuple[int, Transaction]]:
    """Client submissions as ``(time_us, tx)``: scripted transfers if given, else Poisson arrivals."""
    nonces = [0] * config.n_clients
    workload: list[tuple[int, Transaction]] = []

    def transfer(time_us: int, src: int, dst: int, amount: int) -> None:
        key = setup.client_keys[src]
        command = Transfer(key.peer.display_name, setup.client_keys[dst].peer.display_name, amount)
        workload.append((time_us, sign_transaction(setup.crypto, key, command, nonces[src])))
        nonces[src] += 1

    if config.transfers:
        for t in config.transfers:
            transfer(int(round(t.time_ms * 1000)), t.src, t.dst, t.amount)
        workload.sort(key=lambda item: item[0])
        return workload

    rng = random.Random(f"workload:{config.seed}")
    elapsed = 0.0
    while config.tx_rate > 0:
        elapsed += rng.expovariate(config.tx_rate)
        if elapsed >= config.duration_s:
            break
        src = rng.randrange(config.n_clients)
        dst = rng.randrange(config.n_clients - 1)
        if dst >= src:
            dst += 1
        transfer(int(elapsed * 1_000_000), src, dst, rng.randint(1, config.max_amount))
    return workload


# results ---------------------------------------------------------------------

@dataclass(frozen=True)
class CommitRecord:
    time: int
    peer: int
    round: int
    block_hash: str


@dataclass
class PeerSummary:
    index: int
    name: str
    behavior: str
    height: int
    round: int
    phase: str
    top_block_hash: str
    crashed: bool
    alarms: list[str] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    # equivocating peer name -> round in which this peer first saw it
    equivocators: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "peer": self.name,
            "behavior": self.behavior,
            "height": self.height,
            "round": self.round,
            "phase": self.phase,
            "crashed": self.crashed,
            "alarms": self.alarms,
            "equivocators": self.equivocators,
        }

    @property
    def honest(self) -> bool:
        return self.behavior == "honest"


@dataclass
class SimulationResult:
    config: ScenarioConfig
    peers: list[PeerSummary]
    commits: list[CommitRecord]
    ordering: OrderingCounters
    sends: dict[str, dict[str, int]]
    accepted_tx_ids: list[str]
    committed_tx_ids: dict[str, list[str]]
    timed_out: bool
    end_time: int
    violations: list[str]
    trace: list[TraceRecord] = field(default_factory=list)

    def final_heights(self) -> list[int]:
        return [p.height for p in self.peers]

    def honest_peers(self) -> list[PeerSummary]:
        return [p for p in self.peers if p.honest]

    def throughput(self) -> float:
        """Distinct rounds committed within the workload window, per simulated second."""
        window = self.config.duration_us
        rounds = {c.round for c in self.commits if c.time <= window}
        return len(rounds) / self.config.duration_s

    def stalled_peers(self) -> int:
        """Peers that finished more than one block behind the network maximum."""
        heights = self.final_heights()
        top = max(heights, default=0)
        return sum(1 for h in heights if h < top - 1)

    def alarms(self) -> int:
        return sum(len(p.alarms) for p in self.peers)

    def sends_to(self, label: str, peer_name: str) -> int:
        return self.sends.get(label, {}).get(peer_name, 0)

    def trace_lines(self) -> list[str]:
        return [record.to_json() for record in self.trace]


# simulator -------------------------------------------------------------------

class Simulator:
    """Runs one scenario to quiescence or to its time limit.

    Args:
        config: The scenario to run.
        dispatcher: Optional trace dispatcher; no trace records are built without one.
    """

    def __init__(self, config: ScenarioConfig, dispatcher: EventDispatcher | None = None):
        self.config = config
        self.dispatcher = dispatcher
        self.setup = build_setup(config)
        self.crypto = self.setup.crypto
        n = config.n_peers
        self.n = n
        self.names = [config.peer_name(i) for i in range(n)]
        self.behaviors: list[Behavior] = config.resolved_behaviors()
        self.network = Network(config.network_model(), n, random.Random(config.seed))

        cpu_rng = random.Random(f"cpu:{config.seed}")
        spread = config.cpu_spread
        self.speed = [1.0 + cpu_rng.uniform(-spread, spread) if spread > 0 else 1.0 for _ in range(n)]
        self.slow = frozenset(cpu_rng.sample(range(n), int(config.slow_fraction * n)))

        self.index_of: dict[PeerId, int] = {key.peer: i for i, key in enumerate(self.setup.peer_keys)}
        self.broadcast_order = [self.index_of[peer] for peer in self.setup.peers]
        self.contexts = [
            PeerContext(key, self.crypto, self._validator_for(self.behaviors[i]))
            for i, key in enumerate(self.setup.peer_keys)
        ]
        self.states = [
            PeerConsensusState.initial(key.peer, self.setup.peers, config.vote_step_delay_us, self.setup.genesis)
            for key in self.setup.peer_keys
        ]
        self.ordering = OrderingService(self.crypto, config.batch_limit, config.batch_timeout_us)

        self.crash_at = [int(b.param * 1000) if b.kind == "crash" else None for b in self.behaviors]
        self.crashed = [False] * n
        self.busy_until = [0] * n
        self.commits: list[CommitRecord] = []
        self.alarms: list[list[str]] = [[] for _ in range(n)]
        self.counters: list[Counter] = [Counter() for _ in range(n)]
        self.equivocators: list[dict[str, int]] = [{} for _ in range(n)]
        self.sends: dict[str, Counter] = defaultdict(Counter)

        self.now = 0
        self._queue: list[tuple[int, int, str, tuple]] = []
        self._seq = itertools.count()
        self._wakeup_at: int | None = None
        # queued events other than timers
        self._pending = 0

    @staticmethod
    def _validator_for(behavior: Behavior):
        if behavior.kind == "divergent":
            return divergent_validator(int(behavior.param))
        return apply_proposal

    # scheduling ---------------------------------------------------------------

    def _push(self, time: int, kind: str, args: tuple) -> None:
        if kind != _TIMER:
            self._pending += 1
        heapq.heappush(self._queue, (time, next(self._seq), kind, args))

    def _trace(self, peer: str, kind: str, detail: dict[str, Any] | None = None) -> None:
        if self.dispatcher is not None:
            self.dispatcher.dispatch(TraceRecord(self.now, peer, kind, detail or {}))

    def run(self) -> SimulationResult:
        config = self.config
        logger.info(
            f"Running scenario '{config.name}': {self.n} peers, seed {config.seed}, "
            f"vote step {config.vote_step_delay_ms}ms"
        )
        self._trace("sim", "start", {
            "scenario": config.name,
            "seed": config.seed,
            "behaviors": [str(b) for b in self.behaviors],
        })
        for time_us, tx in build_workload(config, self.setup):
            self._push(time_us, _SUBMIT, (tx,))

        handlers = {
            _SUBMIT: self._on_submit,
            _DELIVER: self._on_deliver,
            _PROCESS: self._on_process,
            _TIMER: self._on_timer,
            _OS_NOTICE: self._on_os_notice,
            _OS_WAKEUP: self._on_os_wakeup,
        }
        limit = config.time_limit_us
        timed_out = False
        while self._queue:
            if self._quiescent():
                logger.debug(f"Quiescent at {self.now}us")
                break
            if self._queue[0][0] > limit:
                timed_out = True
                self.now = limit
                break
            time, _, kind, args = heapq.heappop(self._queue)
            if kind != _TIMER:
                self._pending -= 1
            self.now = time
            handlers[kind](*args)

        return self._finish(timed_out)

    def _quiescent(self) -> bool:
        """Nothing but timers is queued and no honest peer is still voting."""
        if self._pending:
            return False
        return not any(
            self.behaviors[i].kind == "honest" and self.states[i].phase is Phase.VOTING
            for i in range(self.n)
        )

    # peers --------------------------------------------------------------------

    def _is_down(self, peer: int) -> bool:
        crash_at = self.crash_at[peer]
        if crash_at is None or self.now < crash_at:
            return False
        if not self.crashed[peer]:
            self.crashed[peer] = True
            self._trace(self.names[peer], "crash")
            logger.debug(f"{self.names[peer]} crashed at {self.now}us")
        return True

    def _processing_cost(self, peer: int, message) -> int:
        if isinstance(message, Proposal):
            return 0
        cost = self.config.handle_cost_us + self.config.verify_cost_us * signature_count(message)
        if peer in self.slow:
            cost += self.config.slow_cost_us
        return int(round(cost * self.speed[peer]))

    def _on_deliver(self, src, dst: int, message, label: str) -> None:
        if self._is_down(dst):
            return
        if isinstance(message, Proposal):
            self._handle(dst, message)
            return
        finish = max(self.now, self.busy_until[dst]) + self._processing_cost(dst, message)
        if finish == self.now:
            self._handle(dst, message)
            return
        self.busy_until[dst] = finish
        self._push(finish, _PROCESS, (dst, message))

    def _on_process(self, peer: int, message) -> None:
        if not self._is_down(peer):
            self._handle(peer, message)

    def _handle(self, peer: int, message) -> None:
        state, actions = handle_message(self.states[peer], message, self.contexts[peer])
        self.states[peer] = state
        self._apply(peer, actions)

    def _on_timer(self, peer: int, token: int) -> None:
        if self._is_down(peer):
            return
        state, actions = on_timer(self.states[peer], token, self.contexts[peer])
        self.states[peer] = state
        self._apply(peer, actions)

    def _apply(self, peer: int, actions) -> None:
        for action in actions:
            if isinstance(action, Send):
                dst = self.index_of.get(action.to)
                if dst is None:
                    logger.warning(f"{self.names[peer]} sent {action.label} to unknown peer {action.to}")
                    self._trace(self.names[peer], "unknown-peer", {"to": str(action.to), "label": action.label})
                else:
                    self._transmit(peer, dst, action.message, action.label)
            elif isinstance(action, Broadcast):
                for dst in self.broadcast_order:
                    if dst != peer:
                        self._transmit(peer, dst, action.message, action.label)
            elif isinstance(action, ArmTimer):
                self._push(self.now + action.delay, _TIMER, (peer, action.token))
            elif isinstance(action, Commit):
                self._record_commit(peer, action)
            elif isinstance(action, Alarm):
                self.alarms[peer].append(action.reason)
                self._trace(self.names[peer], "alarm", {"reason": action.reason, "round": self.states[peer].round})
            elif isinstance(action, Count):
                self.counters[peer][action.metric] += 1
                if action.metric == "equivocation" and action.subject is not None:
                    self._record_equivocation(peer, action.subject)

    def _record_equivocation(self, peer: int, subject: PeerId) -> None:
        liar = self.names[self.index_of[subject]] if subject in self.index_of else str(subject)
        round_ = self.states[peer].round
        self.equivocators[peer].setdefault(liar, round_)
        self._trace(self.names[peer], "equivocation", {"by": liar, "round": round_})

    def _record_commit(self, peer: int, action: Commit) -> None:
        block = action.block
        self.commits.append(CommitRecord(self.now, peer, block.height, block.block_hash.hex()))
        self._trace(self.names[peer], "commit", {
            "round": block.height,
            "block": block.block_hash.short(),
            "txs": len(block.transactions),
        })
        if self.behaviors[peer].kind != "silent":
            self._push(self.now + self.network.os_delay(), _OS_NOTICE, (peer, block.height))

    def _transmit(self, src: int, dst: int, message, label: str) -> None:
        behavior = self.behaviors[src]
        to = self.names[dst]
        if behavior.kind == "silent":
            self._trace(self.names[src], "silenced", {"to": to, "label": label})
            return
        if behavior.kind == "equivocator" and isinstance(message, Vote) and message.signer == self.setup.peer_keys[src].peer:
            message = equivocate(message, self.setup.peer_keys[dst].peer, self.contexts[src].key, self.crypto)
        extra = int(behavior.param) * self.config.vote_step_delay_us if behavior.kind == "delayed" else 0

        if self.network.partitioned(src, dst, self.now):
            self._trace(self.names[src], "partitioned", {"to": to, "label": label})
            return
        if self.network.dropped():
            self._trace(self.names[src], "dropped", {"to": to, "label": label})
            return
        self.sends[label][to] += 1
        self._trace(self.names[src], "send", {"to": to, "label": label, "msg": describe(message)})
        self._push(self.now + extra + self.network.peer_delay(src, dst), _DELIVER, (src, dst, message, label))

    # ordering service ---------------------------------------------------------

    def _on_submit(self, tx: Transaction) -> None:
        accepted = self.ordering.submit_transaction(tx)
        self._trace(OS, "submit", {"tx": tx.id.short(), "accepted": accepted})
        self._os_poll()

    def _on_os_notice(self, peer: int, round_: int) -> None:
        proposal = self.ordering.on_commit_notice(self.setup.peer_keys[peer].peer, round_)
        if proposal is not None and not self.crashed[peer]:
            self._send_proposal(peer, proposal)
        self._os_poll()

    def _on_os_wakeup(self) -> None:
        self._wakeup_at = None
        self._os_poll()

    def _os_poll(self) -> None:
        proposal = self.ordering.maybe_emit_proposal(self.now)
        if proposal is not None:
            self._trace(OS, "proposal", {"round": proposal.round, "txs": len(proposal.transactions)})
            for dst in range(self.n):
                self._send_proposal(dst, proposal)
        deadline = self.ordering.next_deadline()
        if deadline is not None and deadline > self.now and deadline != self._wakeup_at:
            self._wakeup_at = deadline
            self._push(deadline, _OS_WAKEUP, ())

    def _send_proposal(self, dst: int, proposal: Proposal) -> None:
        self._push(self.now + self.network.os_delay(), _DELIVER, (OS, dst, proposal, "proposal"))

    # end of run ---------------------------------------------------------------

    def _finish(self, timed_out: bool) -> SimulationResult:
        peers = []
        for i, state in enumerate(self.states):
            top = state.store.top
            peers.append(PeerSummary(
                index=i,
                name=self.names[i],
                behavior=str(self.behaviors[i]),
                height=state.store.height,
                round=state.round,
                phase=state.phase.value,
                top_block_hash=top.block_hash.hex() if top is not None else "",
                crashed=self.crashed[i] or (self.crash_at[i] is not None and self.crash_at[i] <= self.now),
                alarms=list(self.alarms[i]),
                counters=dict(sorted(self.counters[i].items())),
                equivocators=dict(sorted(self.equivocators[i].items())),
            ))
        violations = self._check(peers, timed_out)
        for violation in violations:
            logger.warning(f"Scenario '{self.config.name}' seed {self.config.seed}: {violation}")

        self._trace("sim", "end", {
            "timed_out": timed_out,
            "heights": [p.height for p in peers],
            "violations": violations,
            "peers": [p.to_dict() for p in peers],
        })
        return SimulationResult(
            config=self.config,
            peers=peers,
            commits=list(self.commits),
            ordering=self.ordering.counters,
            sends={label: dict(sorted(c.items())) for label, c in sorted(self.sends.items())},
            accepted_tx_ids=[tx_id.hex() for tx_id in self.ordering.emitted_transaction_ids()]
            + [tx.id.hex() for tx in self.ordering.pending_transactions()],
            committed_tx_ids={
                self.names[i]: [tx.id.hex() for block in s.store.blocks() for tx in block.transactions]
                for i, s in enumerate(self.states)
            },
            timed_out=timed_out,
            end_time=self.now,
            violations=violations,
        )

    def _check(self, peers: list[PeerSummary], timed_out: bool) -> list[str]:
        violations = []
        honest = {p.index for p in peers if p.honest}

        by_round: dict[int, set[str]] = defaultdict(set)
        for c in self.commits:
            if c.peer in honest:
                by_round[c.round].add(c.block_hash)
        for round_, hashes in sorted(by_round.items()):
            if len(hashes) > 1:
                violations.append(f"safety: round {round_} committed as {', '.join(h[:8] for h in sorted(hashes))}")

        if not timed_out and partitions_heal_by(self.network.model.partitions, self.now):
            live = [self.states[i].round for i in sorted(honest)
                    if not peers[i].crashed and self.states[i].phase is not Phase.HALTED]
            if live and max(live) - min(live) > 1:
                violations.append(f"round-lag: honest rounds span {min(live)}..{max(live)}")

        for i in sorted(honest):
            state = self.states[i]
            negative = sorted(a for a, balance in state.world.accounts.items() if balance < 0)
            if negative:
                violations.append(f"ledger: {self.names[i]} has negative balances for {', '.join(negative)}")
            if replay(state.store, self.setup.genesis).accounts != state.world.accounts:
                violations.append(f"ledger: {self.names[i]} state differs from a replay of its chain")

        emitted = self.ordering.emitted_transaction_ids()
        if len(emitted) != len(set(emitted)):
            violations.append("ordering: a transaction was emitted more than once")
        halted = any(self.alarms)
        if not timed_out and not halted and self.ordering.pending_transactions():
            violations.append(f"ordering: {len(self.ordering.pending_transactions())} accepted transactions never emitted")
        return violations


def run(config: ScenarioConfig, record_trace: bool = True, dispatcher: EventDispatcher | None = None) -> SimulationResult:
    """Run ``config`` once.

    Args:
        config: Scenario to run.
        record_trace: Keep every trace record on the result.
        dispatcher: Extra trace handlers, e.g. a live printer or an NDJSON writer.

    Returns:
        The simulation result.
    """
    recorder = None
    if record_trace:
        recorder = TraceRecorder()
        dispatcher = dispatcher or EventDispatcher()
        dispatcher.register_global(recorder)
    result = Simulator(config, dispatcher).run()
    if recorder is not None:
        result.trace = recorder.records
    return result
