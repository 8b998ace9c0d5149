"""
The ordering service: batches stateless-valid client transactions into one
proposal per round.

The service is a single honest process. It holds back proposal ``r + 1`` until
some peer reports a commit for round ``r``, so at most one proposal is
outstanding at a time.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

from yacsim.crypto import CryptoProvider
from yacsim.ledger import stateless_validate
from yacsim.model import Hash, PeerId, Proposal, Transaction

logger = logging.getLogger(__name__)


@dataclass
class OrderingCounters:
    accepted: int = 0
    dropped_invalid: int = 0
    dropped_duplicate: int = 0
    emitted: int = 0


class OrderingService:
    """Mutable ordering state owned by the simulator's single OS process.

    Args:
        crypto: Provider used for stateless validation of incoming transactions.
        batch_limit: Maximum transactions per proposal; reaching it emits at once.
        batch_timeout_us: Emit a partial batch once this long has passed since the last emission.
        start_round: Round number of the first proposal.
    """

    def __init__(self, crypto: CryptoProvider, batch_limit: int, batch_timeout_us: int, start_round: int = 0):
        if batch_limit < 1:
            raise ValueError("batch_limit must be positive")
        if batch_timeout_us < 0:
            raise ValueError("batch_timeout_us must be non-negative")
        self.crypto = crypto
        self.batch_limit = batch_limit
        self.batch_timeout_us = batch_timeout_us
        self.queue: deque[Transaction] = deque()
        self.next_round = start_round
        self.last_emit_time = 0
        self.proposals: dict[int, Proposal] = {}
        self.committed_rounds: set[int] = set()
        self.counters = OrderingCounters()
        self._queued_ids: set[Hash] = set()
        self._emitted_ids: set[Hash] = set()
        self._start_round = start_round

    def submit_transaction(self, tx: Transaction) -> bool:
        """Queue ``tx`` unless it is malformed or already seen. Returns True if queued."""
        if tx.id in self._queued_ids or tx.id in self._emitted_ids:
            self.counters.dropped_duplicate += 1
            return False
        if not stateless_validate(tx, self.crypto):
            self.counters.dropped_invalid += 1
            logger.debug(f"Ordering service dropped malformed {tx}")
            return False
        self.queue.append(tx)
        self._queued_ids.add(tx.id)
        self.counters.accepted += 1
        return True

    def awaiting_commit(self) -> bool:
        """True while the most recent proposal has not been committed by any peer."""
        last = self.next_round - 1
        return last >= self._start_round and last not in self.committed_rounds

    def maybe_emit_proposal(self, now: int) -> Proposal | None:
        if not self.queue or self.awaiting_commit():
            return None
        full = len(self.queue) >= self.batch_limit
        timed_out = now - self.last_emit_time >= self.batch_timeout_us
        if not (full or timed_out):
            return None
        batch = tuple(self.queue.popleft() for _ in range(min(self.batch_limit, len(self.queue))))
        for tx in batch:
            self._queued_ids.discard(tx.id)
            self._emitted_ids.add(tx.id)
        proposal = Proposal(self.next_round, batch, now)
        self.proposals[proposal.round] = proposal
        self.next_round += 1
        self.last_emit_time = now
        self.counters.emitted += 1
        logger.debug(f"Ordering service emitted proposal r{proposal.round} with {len(batch)} txs at {now}us")
        return proposal

    def next_deadline(self) -> int | None:
        """Simulation time at which a timeout-triggered emission becomes due, if any."""
        if not self.queue or self.awaiting_commit():
            return None
        return self.last_emit_time + self.batch_timeout_us

    def on_commit_notice(self, peer: PeerId, round_: int) -> Proposal | None:
        """Record that ``peer`` committed ``round_``.

        Returns the proposal for ``round_ + 1`` when it already exists, so the
        caller can re-deliver it to a peer that may have dropped it.
        """
        if round_ not in self.committed_rounds:
            self.committed_rounds.add(round_)
            logger.debug(f"Ordering service: round {round_} committed (first notice from {peer})")
        return self.proposals.get(round_ + 1)

    def pending_transactions(self) -> tuple[Transaction, ...]:
        return tuple(self.queue)

    def emitted_transaction_ids(self) -> list[Hash]:
        """Ids of every emitted transaction, in proposal order, duplicates included."""
        return [tx.id for r in sorted(self.proposals) for tx in self.proposals[r].transactions]
