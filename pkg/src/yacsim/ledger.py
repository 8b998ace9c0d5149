"""
World state, transaction validation, block construction and the committed
block store.

Everything here is a pure function over frozen values: ``apply_proposal`` works on
a scratch copy of the account map and ``commit_block`` returns a new store and a
new state, so a peer's ledger can live inside its consensus state.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from yacsim.codec import (
    block_is_sealed,
    canonical_serialize,
    deserialize,
    proposal_hash,
    seal_block,
    transaction_id,
    transaction_payload,
)
from yacsim.consensus.votes import verify_commit
from yacsim.crypto import CryptoProvider, KeyPair
from yacsim.errors import ProtocolFault
from yacsim.model import (
    ZERO_HASH,
    Block,
    Command,
    CommitMessage,
    CreateAccount,
    Hash,
    PeerId,
    Proposal,
    Transaction,
    Transfer,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorldState:
    """Account balances plus chain position. Balances never go negative."""

    accounts: Mapping[str, int]
    signatories: Mapping[str, bytes]
    height: int = 0
    top_block_hash: Hash = ZERO_HASH

    def balance(self, account: str) -> int:
        return self.accounts.get(account, 0)


def genesis_state(balances: Mapping[str, int], signatories: Mapping[str, bytes]) -> WorldState:
    if any(amount < 0 for amount in balances.values()):
        raise ValueError("genesis balances must be non-negative")
    return WorldState(dict(balances), dict(signatories))


@dataclass(frozen=True)
class VerifiedProposal:
    proposal_hash: Hash
    valid_transactions: tuple[Transaction, ...]


@dataclass(frozen=True)
class BlockStore:
    """Append-only chain of blocks, each with the commit proof that admitted it.

    Stored proofs do not carry the block body; :meth:`commit_for` re-attaches it.
    """

    entries: tuple[tuple[Block, CommitMessage], ...] = field(default=())

    @property
    def height(self) -> int:
        return len(self.entries)

    @property
    def top(self) -> Block | None:
        return self.entries[-1][0] if self.entries else None

    def blocks(self) -> tuple[Block, ...]:
        return tuple(block for block, _ in self.entries)

    def commit_for(self, round_: int) -> CommitMessage | None:
        """Proof for the block committed at ``round_``, carrying its body."""
        if 0 <= round_ < len(self.entries):
            block, commit = self.entries[round_]
            return commit.with_block(block)
        return None


def sign_transaction(crypto: CryptoProvider, key: KeyPair, command: Command, nonce: int, creator: str | None = None) -> Transaction:
    """Build a client transaction signed by ``key``. ``creator`` defaults to the key's display name."""
    creator = key.peer.display_name if creator is None else creator
    signature = crypto.sign(key, transaction_payload(creator, command, nonce))
    return Transaction(transaction_id(creator, command, nonce, signature), creator, command, nonce, signature)


def stateless_validate(tx: Transaction, crypto: CryptoProvider) -> bool:
    """Well-formedness check that needs no world state."""
    try:
        if not tx.creator:
            return False
        cmd = tx.command
        if isinstance(cmd, Transfer):
            if not cmd.src or not cmd.dst or cmd.amount < 0:
                return False
        elif isinstance(cmd, CreateAccount):
            if not cmd.name or not cmd.public_key:
                return False
        else:
            return False
        if tx.id != transaction_id(tx.creator, cmd, tx.nonce, tx.client_signature):
            return False
        payload = transaction_payload(tx.creator, cmd, tx.nonce)
        return crypto.verify(tx.client_signature.signer, payload, tx.client_signature)
    except (ValueError, OverflowError, TypeError, struct.error) as e:
        logger.debug(f"Malformed transaction {tx.id.short()}: {e}")
        return False


def _apply_stateful(accounts: dict[str, int], signatories: dict[str, bytes], tx: Transaction) -> bool:
    """Apply ``tx`` to scratch maps in place. Returns False (and leaves them) if invalid."""
    if signatories.get(tx.creator) != tx.client_signature.signer.public_key:
        return False
    cmd = tx.command
    if isinstance(cmd, Transfer):
        if cmd.src != tx.creator or cmd.src not in accounts or cmd.dst not in accounts:
            return False
        if accounts[cmd.src] < cmd.amount:
            return False
        accounts[cmd.src] -= cmd.amount
        accounts[cmd.dst] += cmd.amount
        return True
    if isinstance(cmd, CreateAccount):
        if cmd.name in accounts:
            return False
        accounts[cmd.name] = 0
        signatories[cmd.name] = cmd.public_key
        return True
    return False


def apply_proposal(state: WorldState, proposal: Proposal, crypto: CryptoProvider) -> tuple[VerifiedProposal, WorldState]:
    """Filter a proposal down to the transactions valid against ``state``.

    Transactions are applied in proposal order to a scratch copy; later ones see
    the effects of earlier included ones. The returned preview state has the
    included transactions applied; ``state`` itself is untouched.
    """
    if proposal.round != state.height:
        raise ValueError(f"proposal for round {proposal.round} applied at height {state.height}")
    accounts = dict(state.accounts)
    signatories = dict(state.signatories)
    valid = []
    for tx in proposal.transactions:
        if stateless_validate(tx, crypto) and _apply_stateful(accounts, signatories, tx):
            valid.append(tx)
    vp = VerifiedProposal(proposal_hash(proposal), tuple(valid))
    preview = WorldState(accounts, signatories, state.height, state.top_block_hash)
    logger.debug(f"Round {proposal.round}: {len(valid)}/{len(proposal.transactions)} transactions valid")
    return vp, preview


def build_block(vp: VerifiedProposal, state: WorldState) -> Block:
    return seal_block(vp.proposal_hash, vp.valid_transactions, state.height, state.top_block_hash)


def _apply_block(state: WorldState, block: Block, crypto: CryptoProvider | None) -> WorldState:
    accounts = dict(state.accounts)
    signatories = dict(state.signatories)
    for tx in block.transactions:
        if crypto is not None and not stateless_validate(tx, crypto):
            raise ProtocolFault("invalid-block", f"malformed {tx} in {block}")
        if not _apply_stateful(accounts, signatories, tx):
            raise ProtocolFault("invalid-block", f"{tx} not applicable in {block}")
    return WorldState(accounts, signatories, state.height + 1, block.block_hash)


def commit_block(
    store: BlockStore,
    state: WorldState,
    block: Block,
    commit: CommitMessage,
    peers: Sequence[PeerId],
    crypto: CryptoProvider,
) -> tuple[BlockStore, WorldState]:
    """Append ``block`` with its proof and advance the world state.

    Raises:
        ProtocolFault: ``chain-gap`` if the block does not extend the top,
            ``bad-commit`` if the proof is invalid or for another block,
            ``invalid-block`` if a transaction cannot be applied.
    """
    if block.prev_block_hash != state.top_block_hash or block.height != state.height:
        raise ProtocolFault("chain-gap", f"{block} does not extend height {state.height}")
    if commit.block_hash != block.block_hash or not block_is_sealed(block):
        raise ProtocolFault("bad-commit", f"proof for {commit.block_hash.short()} offered for {block}")
    if not verify_commit(commit, peers, crypto):
        raise ProtocolFault("bad-commit", f"{commit} does not verify")
    new_state = _apply_block(state, block, crypto)
    new_store = BlockStore(store.entries + ((block, commit.with_block(None)),))
    return new_store, new_state


def replay(store: BlockStore, genesis: WorldState) -> WorldState:
    """Fold every stored block over ``genesis``."""
    state = genesis
    for block, _ in store.entries:
        if block.prev_block_hash != state.top_block_hash:
            raise ProtocolFault("chain-gap", f"{block} does not extend height {state.height}")
        state = _apply_block(state, block, None)
    return state


def export_block_store(store: BlockStore, path: Path) -> None:
    """Write one ``<hex block> <hex commit>`` line per committed block."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        for block, commit in store.entries:
            f.write(f"{canonical_serialize(block).hex()} {canonical_serialize(commit).hex()}\n")


def import_block_store(path: Path, peers: Iterable[PeerId], crypto: CryptoProvider, genesis: WorldState) -> BlockStore:
    """Read an audit export back, re-verifying every link and proof."""
    peers = tuple(peers)
    store, state = BlockStore(), genesis
    with open(path, "r", encoding="ascii") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                block_hex, commit_hex = line.split(" ")
                block = deserialize(Block, bytes.fromhex(block_hex))
                commit = deserialize(CommitMessage, bytes.fromhex(commit_hex))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: unreadable block store line: {e}") from e
            store, state = commit_block(store, state, block, commit, peers, crypto)
    return store
