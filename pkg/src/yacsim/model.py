"""
Protocol value types shared by every yacsim module.

All types are frozen dataclasses. Sets of votes are kept as tuples sorted by
signer key, so two messages holding the same votes compare equal regardless of
the order in which the votes were collected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Union

HASH_SIZE = 32


@dataclass(frozen=True, order=True)
class Hash:
    """Fixed-length 32 byte digest. Equality is byte-wise."""

    data: bytes

    def __post_init__(self):
        if len(self.data) != HASH_SIZE:
            raise ValueError(f"Hash must be {HASH_SIZE} bytes, got {len(self.data)}")

    def hex(self) -> str:
        return self.data.hex()

    def short(self) -> str:
        return self.data[:4].hex()

    def __str__(self) -> str:
        return self.short()


ZERO_HASH = Hash(bytes(HASH_SIZE))


def digest(payload: bytes) -> Hash:
    """Hash a canonical payload into a 32 byte digest."""
    return Hash(hashlib.blake2b(payload, digest_size=HASH_SIZE).digest())


@dataclass(frozen=True, order=True)
class PeerId:
    """Network identity. Ordered and compared by public key only."""

    public_key: bytes
    display_name: str = field(default="", compare=False)

    def __str__(self) -> str:
        return self.display_name or self.public_key[:4].hex()


@dataclass(frozen=True)
class Signature:
    data: bytes
    signer: PeerId


@dataclass(frozen=True)
class Transfer:
    src: str
    dst: str
    amount: int


@dataclass(frozen=True)
class CreateAccount:
    name: str
    public_key: bytes


Command = Union[Transfer, CreateAccount]


@dataclass(frozen=True)
class Transaction:
    """A signed client command. ``id`` is the digest of all other fields."""

    id: Hash
    creator: str
    command: Command
    nonce: int
    client_signature: Signature

    def __str__(self) -> str:
        cmd = self.command
        if isinstance(cmd, Transfer):
            body = f"transfer {cmd.src}->{cmd.dst} {cmd.amount}"
        else:
            body = f"create_account {cmd.name}"
        return f"tx {self.id.short()} ({body})"


@dataclass(frozen=True)
class Proposal:
    round: int
    transactions: tuple[Transaction, ...]
    created_at: int


@dataclass(frozen=True)
class Block:
    proposal_hash: Hash
    transactions: tuple[Transaction, ...]
    height: int
    prev_block_hash: Hash
    block_hash: Hash

    def __str__(self) -> str:
        return f"block #{self.height} {self.block_hash.short()} ({len(self.transactions)} txs)"


@dataclass(frozen=True)
class Vote:
    round: int
    proposal_hash: Hash
    block_hash: Hash
    signature: Signature

    @property
    def signer(self) -> PeerId:
        return self.signature.signer

    def __str__(self) -> str:
        return f"vote r{self.round} {self.block_hash.short()} by {self.signer}"


def _sorted_votes(votes) -> tuple[Vote, ...]:
    return tuple(sorted(votes, key=lambda v: (v.signer.public_key, v.block_hash.data)))


@dataclass(frozen=True)
class CommitMessage:
    """Supermajority proof for one block hash.

    ``block`` optionally carries the block body so that a peer which computed a
    different block can still apply the committed one.
    """

    round: int
    block_hash: Hash
    votes: tuple[Vote, ...]
    block: Block | None = None

    def __post_init__(self):
        object.__setattr__(self, "votes", _sorted_votes(self.votes))

    def with_block(self, block: Block | None) -> "CommitMessage":
        return CommitMessage(self.round, self.block_hash, self.votes, block)

    def __str__(self) -> str:
        body = "+body" if self.block is not None else ""
        return f"commit r{self.round} {self.block_hash.short()} [{len(self.votes)} votes{body}]"


@dataclass(frozen=True)
class RejectMessage:
    """Vote set proving that no block hash can reach a supermajority."""

    round: int
    votes: tuple[Vote, ...]

    def __post_init__(self):
        object.__setattr__(self, "votes", _sorted_votes(self.votes))

    def __str__(self) -> str:
        return f"reject r{self.round} [{len(self.votes)} votes]"


ConsensusMessage = Union[Vote, CommitMessage, RejectMessage]


def describe(value) -> str:
    """Human readable rendering for logs and traces. Not canonical."""
    if isinstance(value, Proposal):
        return f"proposal r{value.round} ({len(value.transactions)} txs, t={value.created_at})"
    return str(value)


def signature_count(message) -> int:
    """Number of signatures a receiver has to check for ``message``."""
    if isinstance(message, Vote):
        return 1
    if isinstance(message, (CommitMessage, RejectMessage)):
        return len(message.votes)
    if isinstance(message, Proposal):
        return len(message.transactions)
    return 0
