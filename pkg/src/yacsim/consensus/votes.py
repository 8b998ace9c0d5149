"""
Vote bookkeeping: thresholds, the per-round vote store, and the checks that make
commit and reject messages self-certifying.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from yacsim.codec import block_is_sealed, vote_payload
from yacsim.crypto import CryptoProvider
from yacsim.errors import ProtocolFault
from yacsim.model import CommitMessage, Hash, PeerId, RejectMessage, Vote

logger = logging.getLogger(__name__)


def supermajority_threshold(n: int) -> int:
    """Smallest vote count strictly greater than two thirds of ``n``.

    Raises:
        ProtocolFault: ``empty-network`` if ``n`` is less than 1.
    """
    if n < 1:
        raise ProtocolFault("empty-network", f"threshold undefined for {n} peers")
    return 2 * n // 3 + 1


def reject_condition(bucket_sizes: Iterable[int], voters: int, n: int) -> bool:
    """True when no hash can still reach the threshold, whatever the missing peers vote."""
    leading = max(bucket_sizes, default=0)
    missing = n - voters
    return leading + missing < supermajority_threshold(n)


@dataclass(frozen=True)
class VoteStore:
    """Votes collected for one round, bucketed by block hash.

    A bucket holds at most one vote per signer. A signer found in two buckets is
    an equivocator; each of its votes still counts once in its own bucket.
    """

    round: int = 0
    buckets: Mapping[Hash, Mapping[PeerId, Vote]] = field(default_factory=dict)
    equivocators: frozenset[PeerId] = frozenset()

    def add(self, vote: Vote) -> tuple["VoteStore", bool]:
        """Return the store with ``vote`` added and whether anything changed."""
        if vote.round != self.round:
            raise ValueError(f"vote for round {vote.round} added to store for round {self.round}")
        bucket = self.buckets.get(vote.block_hash, {})
        if vote.signer in bucket:
            return self, False
        equivocators = self.equivocators
        if any(vote.signer in other for h, other in self.buckets.items() if h != vote.block_hash):
            equivocators = equivocators | {vote.signer}
            logger.debug(f"Round {self.round}: {vote.signer} equivocates")
        buckets = dict(self.buckets)
        buckets[vote.block_hash] = {**bucket, vote.signer: vote}
        return VoteStore(self.round, buckets, equivocators), True

    def voters(self) -> frozenset[PeerId]:
        return frozenset(signer for bucket in self.buckets.values() for signer in bucket)

    def bucket_size(self, block_hash: Hash) -> int:
        return len(self.buckets.get(block_hash, {}))

    def votes_for(self, block_hash: Hash) -> tuple[Vote, ...]:
        bucket = self.buckets.get(block_hash, {})
        return tuple(bucket[signer] for signer in sorted(bucket))

    def all_votes(self) -> tuple[Vote, ...]:
        return tuple(vote for h in sorted(self.buckets) for vote in self.votes_for(h))

    def supermajority_hash(self, n: int) -> Hash | None:
        threshold = supermajority_threshold(n)
        for h in sorted(self.buckets):
            if len(self.buckets[h]) >= threshold:
                return h
        return None


def detect_reject(votes: VoteStore, n: int) -> bool:
    return reject_condition((len(b) for b in votes.buckets.values()), len(votes.voters()), n)


def vote_is_valid(vote: Vote, peers: Sequence[PeerId], crypto: CryptoProvider) -> bool:
    if vote.signer not in peers:
        return False
    payload = vote_payload(vote.round, vote.proposal_hash, vote.block_hash)
    return crypto.verify(vote.signer, payload, vote.signature)


def verify_commit(commit: CommitMessage, peers: Sequence[PeerId], crypto: CryptoProvider) -> bool:
    """Check a commit proof using nothing but the peer list."""
    if not commit.votes or not peers:
        return False
    first = commit.votes[0]
    signers = set()
    for vote in commit.votes:
        if (vote.round, vote.proposal_hash, vote.block_hash) != (commit.round, first.proposal_hash, commit.block_hash):
            return False
        if vote.signer in signers or not vote_is_valid(vote, peers, crypto):
            return False
        signers.add(vote.signer)
    if len(signers) < supermajority_threshold(len(peers)):
        return False
    if commit.block is not None:
        if commit.block.block_hash != commit.block_hash or not block_is_sealed(commit.block):
            return False
    return True


def verify_reject(reject: RejectMessage, peers: Sequence[PeerId], crypto: CryptoProvider) -> bool:
    """A reject is valid when its votes verify and witness the reject condition."""
    if not reject.votes or not peers:
        return False
    store = VoteStore(reject.round)
    for vote in reject.votes:
        if vote.round != reject.round or not vote_is_valid(vote, peers, crypto):
            return False
        store, added = store.add(vote)
        if not added:
            return False
    return detect_reject(store, len(peers))
