"""YAC consensus: vote routing order, vote bookkeeping and the per-peer state machine.

``yacsim.ledger`` depends on :mod:`yacsim.consensus.votes`, so this package does
not import the state machine eagerly.
"""

from yacsim.consensus.permutation import PeerOrder, peer_order
from yacsim.consensus.votes import VoteStore, detect_reject, supermajority_threshold, verify_commit

__all__ = [
    "PeerOrder",
    "VoteStore",
    "detect_reject",
    "peer_order",
    "supermajority_threshold",
    "verify_commit",
]
