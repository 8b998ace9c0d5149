"""
Canonical binary serialization of protocol values.

Layout: one type tag byte, then fields in declaration order. Integers are
little-endian fixed width, byte strings and text are prefixed by a u32 length,
vote collections are written sorted by signer key. Honest peers that build the
same block therefore produce the same bytes and the same block hash.
"""

from __future__ import annotations

import struct
from functools import singledispatch

from yacsim.model import (
    HASH_SIZE,
    Block,
    Command,
    CommitMessage,
    CreateAccount,
    Hash,
    PeerId,
    Proposal,
    RejectMessage,
    Signature,
    Transaction,
    Transfer,
    Vote,
    digest,
)

TAG_TRANSACTION = 0x01
TAG_PROPOSAL = 0x02
TAG_BLOCK = 0x03
TAG_VOTE = 0x04
TAG_COMMIT = 0x05
TAG_REJECT = 0x06
TAG_PEER = 0x07
TAG_SIGNATURE = 0x08

# domain separators for signed and hashed payloads
TAG_TX_BODY = 0x21
TAG_BLOCK_HEADER = 0x22
TAG_VOTE_BODY = 0x23
TAG_PROPOSAL_BODY = 0x24

_CMD_TRANSFER = 1
_CMD_CREATE_ACCOUNT = 2


class Writer:
    def __init__(self, tag: int | None = None):
        self._buf = bytearray()
        if tag is not None:
            self.u8(tag)

    def u8(self, value: int) -> "Writer":
        self._buf += struct.pack("<B", value)
        return self

    def u32(self, value: int) -> "Writer":
        self._buf += struct.pack("<I", value)
        return self

    def u64(self, value: int) -> "Writer":
        self._buf += struct.pack("<Q", value)
        return self

    def i64(self, value: int) -> "Writer":
        self._buf += struct.pack("<q", value)
        return self

    def raw(self, value: bytes) -> "Writer":
        self._buf += value
        return self

    def blob(self, value: bytes) -> "Writer":
        self.u32(len(value))
        self._buf += value
        return self

    def text(self, value: str) -> "Writer":
        return self.blob(value.encode("utf-8"))

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class Reader:
    def __init__(self, data: bytes):
        self._data = memoryview(data)
        self._pos = 0

    def _take(self, size: int) -> bytes:
        if self._pos + size > len(self._data):
            raise ValueError("truncated canonical payload")
        chunk = self._data[self._pos:self._pos + size].tobytes()
        self._pos += size
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        return self.blob().decode("utf-8")

    def expect_tag(self, tag: int) -> None:
        found = self.u8()
        if found != tag:
            raise ValueError(f"expected type tag {tag:#04x}, found {found:#04x}")

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise ValueError(f"{len(self._data) - self._pos} trailing bytes in canonical payload")


# field writers --------------------------------------------------------------

def _put_hash(w: Writer, h: Hash) -> None:
    w.raw(h.data)


def _put_peer(w: Writer, peer: PeerId) -> None:
    w.blob(peer.public_key).text(peer.display_name)


def _put_signature(w: Writer, sig: Signature) -> None:
    w.blob(sig.data)
    _put_peer(w, sig.signer)


def _put_command(w: Writer, cmd: Command) -> None:
    if isinstance(cmd, Transfer):
        w.u8(_CMD_TRANSFER).text(cmd.src).text(cmd.dst).i64(cmd.amount)
    elif isinstance(cmd, CreateAccount):
        w.u8(_CMD_CREATE_ACCOUNT).text(cmd.name).blob(cmd.public_key)
    else:
        raise TypeError(f"unknown command type {type(cmd).__name__}")


def _put_tx_body(w: Writer, creator: str, command: Command, nonce: int) -> None:
    w.text(creator)
    _put_command(w, command)
    w.u64(nonce)


def _put_transaction(w: Writer, tx: Transaction) -> None:
    _put_hash(w, tx.id)
    _put_tx_body(w, tx.creator, tx.command, tx.nonce)
    _put_signature(w, tx.client_signature)


def _put_transactions(w: Writer, txs) -> None:
    w.u32(len(txs))
    for tx in txs:
        _put_transaction(w, tx)


def _put_block_header(w: Writer, proposal_hash: Hash, txs, height: int, prev: Hash) -> None:
    _put_hash(w, proposal_hash)
    _put_transactions(w, txs)
    w.u64(height)
    _put_hash(w, prev)


def _put_block(w: Writer, block: Block) -> None:
    _put_block_header(w, block.proposal_hash, block.transactions, block.height, block.prev_block_hash)
    _put_hash(w, block.block_hash)


def _put_vote(w: Writer, vote: Vote) -> None:
    w.u64(vote.round)
    _put_hash(w, vote.proposal_hash)
    _put_hash(w, vote.block_hash)
    _put_signature(w, vote.signature)


def _put_votes(w: Writer, votes) -> None:
    ordered = sorted(votes, key=lambda v: (v.signer.public_key, v.block_hash.data))
    w.u32(len(ordered))
    for vote in ordered:
        _put_vote(w, vote)


# field readers --------------------------------------------------------------

def _get_hash(r: Reader) -> Hash:
    return Hash(r._take(HASH_SIZE))


def _get_peer(r: Reader) -> PeerId:
    key = r.blob()
    return PeerId(key, r.text())


def _get_signature(r: Reader) -> Signature:
    data = r.blob()
    return Signature(data, _get_peer(r))


def _get_command(r: Reader) -> Command:
    kind = r.u8()
    if kind == _CMD_TRANSFER:
        src = r.text()
        dst = r.text()
        return Transfer(src, dst, r.i64())
    if kind == _CMD_CREATE_ACCOUNT:
        name = r.text()
        return CreateAccount(name, r.blob())
    raise ValueError(f"unknown command kind {kind}")


def _get_transaction(r: Reader) -> Transaction:
    tx_id = _get_hash(r)
    creator = r.text()
    command = _get_command(r)
    nonce = r.u64()
    return Transaction(tx_id, creator, command, nonce, _get_signature(r))


def _get_transactions(r: Reader) -> tuple[Transaction, ...]:
    return tuple(_get_transaction(r) for _ in range(r.u32()))


def _get_block(r: Reader) -> Block:
    proposal_hash = _get_hash(r)
    txs = _get_transactions(r)
    height = r.u64()
    prev = _get_hash(r)
    return Block(proposal_hash, txs, height, prev, _get_hash(r))


def _get_vote(r: Reader) -> Vote:
    round_ = r.u64()
    proposal_hash = _get_hash(r)
    block_hash = _get_hash(r)
    return Vote(round_, proposal_hash, block_hash, _get_signature(r))


def _get_votes(r: Reader) -> tuple[Vote, ...]:
    return tuple(_get_vote(r) for _ in range(r.u32()))


# public API -----------------------------------------------------------------

@singledispatch
def canonical_serialize(value) -> bytes:
    """Serialize a protocol value into its canonical byte form."""
    raise TypeError(f"no canonical form for {type(value).__name__}")


@canonical_serialize.register
def _(value: Transaction) -> bytes:
    w = Writer(TAG_TRANSACTION)
    _put_transaction(w, value)
    return w.getvalue()


@canonical_serialize.register
def _(value: Proposal) -> bytes:
    w = Writer(TAG_PROPOSAL).u64(value.round)
    _put_transactions(w, value.transactions)
    return w.i64(value.created_at).getvalue()


@canonical_serialize.register
def _(value: Block) -> bytes:
    w = Writer(TAG_BLOCK)
    _put_block(w, value)
    return w.getvalue()


@canonical_serialize.register
def _(value: Vote) -> bytes:
    w = Writer(TAG_VOTE)
    _put_vote(w, value)
    return w.getvalue()


@canonical_serialize.register
def _(value: CommitMessage) -> bytes:
    w = Writer(TAG_COMMIT).u64(value.round)
    _put_hash(w, value.block_hash)
    _put_votes(w, value.votes)
    if value.block is None:
        w.u8(0)
    else:
        w.u8(1)
        _put_block(w, value.block)
    return w.getvalue()


@canonical_serialize.register
def _(value: RejectMessage) -> bytes:
    w = Writer(TAG_REJECT).u64(value.round)
    _put_votes(w, value.votes)
    return w.getvalue()


@canonical_serialize.register
def _(value: PeerId) -> bytes:
    w = Writer(TAG_PEER)
    _put_peer(w, value)
    return w.getvalue()


@canonical_serialize.register
def _(value: Signature) -> bytes:
    w = Writer(TAG_SIGNATURE)
    _put_signature(w, value)
    return w.getvalue()


def _read_proposal(r: Reader) -> Proposal:
    round_ = r.u64()
    txs = _get_transactions(r)
    return Proposal(round_, txs, r.i64())


def _read_commit(r: Reader) -> CommitMessage:
    round_ = r.u64()
    block_hash = _get_hash(r)
    votes = _get_votes(r)
    block = _get_block(r) if r.u8() else None
    return CommitMessage(round_, block_hash, votes, block)


def _read_reject(r: Reader) -> RejectMessage:
    round_ = r.u64()
    return RejectMessage(round_, _get_votes(r))


_READERS = {
    Transaction: (TAG_TRANSACTION, _get_transaction),
    Proposal: (TAG_PROPOSAL, _read_proposal),
    Block: (TAG_BLOCK, _get_block),
    Vote: (TAG_VOTE, _get_vote),
    CommitMessage: (TAG_COMMIT, _read_commit),
    RejectMessage: (TAG_REJECT, _read_reject),
    PeerId: (TAG_PEER, _get_peer),
    Signature: (TAG_SIGNATURE, _get_signature),
}


def deserialize(cls, data: bytes):
    """Inverse of :func:`canonical_serialize` for the protocol type ``cls``.

    Raises:
        ValueError: If ``data`` is not a canonical encoding of ``cls``.
    """
    try:
        tag, read = _READERS[cls]
    except KeyError:
        raise TypeError(f"no canonical form for {cls.__name__}") from None
    r = Reader(data)
    r.expect_tag(tag)
    value = read(r)
    r.finish()
    return value


# derived payloads and digests -----------------------------------------------

def transaction_payload(creator: str, command: Command, nonce: int) -> bytes:
    """Bytes a client signs for a transaction."""
    w = Writer(TAG_TX_BODY)
    _put_tx_body(w, creator, command, nonce)
    return w.getvalue()


def transaction_id(creator: str, command: Command, nonce: int, signature: Signature) -> Hash:
    w = Writer(TAG_TRANSACTION)
    _put_tx_body(w, creator, command, nonce)
    _put_signature(w, signature)
    return digest(w.getvalue())


def block_hash_of(proposal_hash: Hash, transactions, height: int, prev_block_hash: Hash) -> Hash:
    w = Writer(TAG_BLOCK_HEADER)
    _put_block_header(w, proposal_hash, transactions, height, prev_block_hash)
    return digest(w.getvalue())


def seal_block(proposal_hash: Hash, transactions, height: int, prev_block_hash: Hash) -> Block:
    """Build a block with its hash computed over the canonical header."""
    txs = tuple(transactions)
    return Block(proposal_hash, txs, height, prev_block_hash, block_hash_of(proposal_hash, txs, height, prev_block_hash))


def block_is_sealed(block: Block) -> bool:
    return block.block_hash == block_hash_of(
        block.proposal_hash, block.transactions, block.height, block.prev_block_hash
    )


def proposal_hash(proposal: Proposal) -> Hash:
    """Identity of a proposal: its round and ordered transactions.

    The emission timestamp is left out, so the same batch ordered for the same
    round hashes the same no matter when the ordering service released it.
    """
    w = Writer(TAG_PROPOSAL_BODY).u64(proposal.round)
    _put_transactions(w, proposal.transactions)
    return digest(w.getvalue())


def vote_payload(round_: int, proposal_hash_: Hash, block_hash: Hash) -> bytes:
    """Bytes a peer signs when voting. Votes bind the round explicitly."""
    return Writer(TAG_VOTE_BODY).u64(round_).raw(proposal_hash_.data).raw(block_hash.data).getvalue()
