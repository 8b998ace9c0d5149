"""
Fault injection for individual peers.

A behavior is written as ``kind`` or ``kind:param``:

- ``honest``
- ``silent``: every outbound message is dropped
- ``equivocator``: each vote target receives a vote for its own fabricated hash
- ``delayed:K``: outbound messages are held back K vote-step periods
- ``crash:T_MS``: the peer stops processing at T_MS milliseconds
- ``divergent:K``: the K-th valid transaction is left out of the peer's block
"""

from __future__ import annotations

from dataclasses import dataclass

from yacsim.codec import vote_payload
from yacsim.crypto import CryptoProvider, KeyPair
from yacsim.errors import ConfigError
from yacsim.ledger import VerifiedProposal, WorldState, apply_proposal
from yacsim.model import PeerId, Proposal, Vote, digest

KINDS = ("honest", "silent", "equivocator", "delayed", "crash", "divergent")
_NEEDS_PARAM = ("delayed", "crash", "divergent")


@dataclass(frozen=True)
class Behavior:
    kind: str = "honest"
    param: float = 0

    @property
    def honest(self) -> bool:
        return self.kind == "honest"

    def __str__(self) -> str:
        if self.kind in _NEEDS_PARAM:
            value = int(self.param) if float(self.param).is_integer() else self.param
            return f"{self.kind}:{value}"
        return self.kind


HONEST = Behavior()


def parse_behavior(text: str) -> Behavior:
    """Parse a behavior string such as ``delayed:3``.

    Raises:
        ConfigError: If the kind is unknown or the parameter is missing or invalid.
    """
    kind, _, raw = text.strip().partition(":")
    kind = kind.strip().lower()
    if kind not in KINDS:
        raise ConfigError(f"unknown behavior '{text}', expected one of {', '.join(KINDS)}")
    if kind not in _NEEDS_PARAM:
        if raw:
            raise ConfigError(f"behavior '{kind}' takes no parameter")
        return Behavior(kind)
    if not raw:
        raise ConfigError(f"behavior '{kind}' needs a parameter, e.g. {kind}:1")
    try:
        param = float(raw) if kind == "crash" else int(raw)
    except ValueError:
        raise ConfigError(f"bad parameter in behavior '{text}'") from None
    if param < 0:
        raise ConfigError(f"behavior parameter must be non-negative: '{text}'")
    return Behavior(kind, param)


def divergent_validator(skip_index: int):
    """Validator that drops the ``skip_index``-th valid transaction from the verified proposal."""

    def validate(state: WorldState, proposal: Proposal, crypto: CryptoProvider) -> tuple[VerifiedProposal, WorldState]:
        vp, preview = apply_proposal(state, proposal, crypto)
        txs = vp.valid_transactions
        if skip_index < len(txs):
            txs = txs[:skip_index] + txs[skip_index + 1:]
        return VerifiedProposal(vp.proposal_hash, txs), preview

    return validate


def equivocate(vote: Vote, target: PeerId, key: KeyPair, crypto: CryptoProvider) -> Vote:
    """Re-sign ``vote`` for a hash fabricated per target, so no two targets see the same vote."""
    fake = digest(b"equivocate" + vote.block_hash.data + target.public_key)
    signature = crypto.sign(key, vote_payload(vote.round, vote.proposal_hash, fake))
    return Vote(vote.round, vote.proposal_hash, fake, signature)
