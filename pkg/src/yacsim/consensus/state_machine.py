"""
The YAC state machine of a single peer.

Every handler takes the current :class:`PeerConsensusState` plus one input and
returns ``(new_state, actions)``. Handlers never perform I/O and never read a
clock; the simulator interprets the returned actions. Votes a peer addresses to
itself are handled inline instead of being emitted as a send.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence, Union

from yacsim.codec import vote_payload
from yacsim.consensus.permutation import PeerOrder, peer_order
from yacsim.consensus.votes import (
    VoteStore,
    detect_reject,
    verify_commit,
    verify_reject,
    vote_is_valid,
)
from yacsim.crypto import CryptoProvider, KeyPair
from yacsim.errors import ProtocolFault
from yacsim.ledger import (
    BlockStore,
    VerifiedProposal,
    WorldState,
    apply_proposal,
    build_block,
    commit_block,
)
from yacsim.model import Block, CommitMessage, PeerId, Proposal, RejectMessage, Vote

logger = logging.getLogger(__name__)

Validator = Callable[[WorldState, Proposal, CryptoProvider], tuple[VerifiedProposal, WorldState]]
InboundMessage = Union[Proposal, Vote, CommitMessage, RejectMessage]

BFT_VIOLATION = "bft-violation"


class Phase(str, Enum):
    IDLE = "idle"
    VOTING = "voting"
    WAITING_NEXT = "committed-waiting-next"
    HALTED = "halted"


# actions ---------------------------------------------------------------------

@dataclass(frozen=True)
class Send:
    to: PeerId
    message: InboundMessage
    label: str


@dataclass(frozen=True)
class Broadcast:
    """Send to every peer except the sender."""

    message: InboundMessage
    label: str


@dataclass(frozen=True)
class ArmTimer:
    delay: int
    token: int


@dataclass(frozen=True)
class Commit:
    block: Block
    commit: CommitMessage


@dataclass(frozen=True)
class Alarm:
    reason: str


@dataclass(frozen=True)
class Count:
    metric: str
    subject: PeerId | None = None


Action = Union[Send, Broadcast, ArmTimer, Commit, Alarm, Count]


@dataclass(frozen=True)
class PeerContext:
    """What a peer needs besides its state: its signing key and the crypto scheme."""

    key: KeyPair
    crypto: CryptoProvider
    validate: Validator = apply_proposal


@dataclass(frozen=True)
class PeerConsensusState:
    me: PeerId
    peers: tuple[PeerId, ...]
    vote_step_delay: int
    world: WorldState
    store: BlockStore = field(default_factory=BlockStore)
    round: int = 0
    phase: Phase = Phase.IDLE
    my_vote: Vote | None = None
    own_block: Block | None = None
    order: PeerOrder | None = None
    next_target_index: int = 0
    votes: VoteStore = field(default_factory=VoteStore)
    pending_commit: CommitMessage | None = None
    announced: bool = False
    buffered: tuple[InboundMessage, ...] = ()

    @classmethod
    def initial(cls, me: PeerId, peers: Sequence[PeerId], vote_step_delay: int, world: WorldState) -> "PeerConsensusState":
        ordered = tuple(sorted(set(peers)))
        if me not in ordered:
            raise ValueError(f"{me} is not in the peer list")
        if vote_step_delay < 0:
            raise ValueError("vote_step_delay must be non-negative")
        return cls(me, ordered, vote_step_delay, world, round=world.height, votes=VoteStore(world.height))

    @property
    def n(self) -> int:
        return len(self.peers)

    @property
    def last_commit(self) -> CommitMessage | None:
        return self.store.commit_for(self.round - 1)

    @property
    def halted(self) -> bool:
        return self.phase is Phase.HALTED


Outcome = tuple[PeerConsensusState, list[Action]]


def _buffer(state: PeerConsensusState, message: InboundMessage) -> Outcome:
    if message in state.buffered:
        return state, []
    return replace(state, buffered=state.buffered + (message,)), []


def _out_of_round(state: PeerConsensusState, message_round: int, message: InboundMessage) -> Outcome | None:
    """Buffer next-round input, drop anything farther ahead. None means the message is current."""
    if message_round == state.round + 1:
        return _buffer(state, message)
    if message_round > state.round + 1:
        return state, [Count("future-drop")]
    return None


def _route_vote(state: PeerConsensusState, target: PeerId, ctx: PeerContext) -> Outcome:
    if target == state.me:
        return _record_vote(state, state.my_vote, ctx)
    return state, [Send(target, state.my_vote, "vote")]


# proposal -------------------------------------------------------------------

def on_proposal(state: PeerConsensusState, proposal: Proposal, ctx: PeerContext, validate: Validator | None = None) -> Outcome:
    """Validate the round's proposal, vote for the resulting block and start the vote step."""
    if state.halted:
        return state, [Count("halted-drop")]
    if proposal.round < state.round:
        return state, [Count("stale-proposal")]
    deferred = _out_of_round(state, proposal.round, proposal)
    if deferred is not None:
        return deferred
    if state.phase is Phase.VOTING:
        return state, [Count("duplicate-proposal")]

    validate = validate or ctx.validate
    vp, _ = validate(state.world, proposal, ctx.crypto)
    block = build_block(vp, state.world)

    if state.pending_commit is not None and state.pending_commit.block_hash == block.block_hash:
        return _accept_commit(state, block, state.pending_commit, ctx)

    payload = vote_payload(proposal.round, vp.proposal_hash, block.block_hash)
    vote = Vote(proposal.round, vp.proposal_hash, block.block_hash, ctx.crypto.sign(ctx.key, payload))
    order = peer_order(block.block_hash, state.peers)
    state = replace(
        state,
        phase=Phase.VOTING,
        my_vote=vote,
        own_block=block,
        order=order,
        next_target_index=1 % state.n,
    )
    logger.debug(f"{state.me} round {state.round}: voting {block.block_hash.short()}, first target {order[0]}")

    voting_round = state.round
    state, actions = _route_vote(state, order[0], ctx)
    if state.phase is Phase.VOTING and state.round == voting_round:
        actions.append(ArmTimer(state.vote_step_delay, voting_round))
    return state, actions


# vote step timer ------------------------------------------------------------

def on_timer(state: PeerConsensusState, token: int, ctx: PeerContext) -> Outcome:
    """Propagate the vote to the next peer in the order and re-arm."""
    if state.phase is not Phase.VOTING or token != state.round:
        return state, []
    target = state.order[state.next_target_index]
    state = replace(state, next_target_index=(state.next_target_index + 1) % state.n)
    state, actions = _route_vote(state, target, ctx)
    if state.phase is Phase.VOTING and state.round == token:
        actions.append(ArmTimer(state.vote_step_delay, token))
    return state, actions


# votes ----------------------------------------------------------------------

def on_vote(state: PeerConsensusState, vote: Vote, ctx: PeerContext) -> Outcome:
    if state.halted:
        return state, [Count("halted-drop")]
    if vote.signer not in state.peers:
        return state, [Count("unknown-signer")]
    if not vote_is_valid(vote, state.peers, ctx.crypto):
        return state, [Count("bad-vote")]

    if vote.round < state.round:
        commit = state.store.commit_for(vote.round)
        if commit is None or vote.signer == state.me:
            return state, [Count("stale-vote")]
        logger.debug(f"{state.me} forwards commit r{vote.round} to {vote.signer}")
        return state, [Send(vote.signer, commit, "commit-forward")]

    deferred = _out_of_round(state, vote.round, vote)
    if deferred is not None:
        return deferred
    return _record_vote(state, vote, ctx)


def _record_vote(state: PeerConsensusState, vote: Vote, ctx: PeerContext) -> Outcome:
    was_equivocator = vote.signer in state.votes.equivocators
    votes, changed = state.votes.add(vote)
    if not changed:
        return state, []
    state = replace(state, votes=votes)
    actions: list[Action] = []
    if not was_equivocator and vote.signer in votes.equivocators:
        actions.append(Count("equivocation", vote.signer))
    if state.announced:
        return state, actions

    winner = votes.supermajority_hash(state.n)
    if winner is not None:
        body = state.own_block if state.own_block is not None and state.own_block.block_hash == winner else None
        commit = CommitMessage(state.round, winner, votes.votes_for(winner), body)
        logger.debug(f"{state.me} collected supermajority for {winner.short()} in round {state.round}")
        state = replace(state, announced=True)
        actions.append(Broadcast(commit, "commit"))
        state, more = _take_commit(state, commit, ctx)
        return state, actions + more

    if detect_reject(votes, state.n):
        reject = RejectMessage(state.round, votes.all_votes())
        logger.warning(f"{state.me} detected reject condition in round {state.round}")
        state = replace(state, announced=True)
        actions.append(Broadcast(reject, "reject"))
        state, more = _halt(state)
        return state, actions + more
    return state, actions


# commits --------------------------------------------------------------------

def on_commit(state: PeerConsensusState, commit: CommitMessage, ctx: PeerContext) -> Outcome:
    """Apply a verified commit proof, or buffer / park it until it can be applied."""
    if state.halted:
        return state, [Count("halted-drop")]
    if commit.round < state.round:
        return state, []
    if commit.round > state.round + 1:
        return state, [Count("future-drop")]
    if not verify_commit(commit, state.peers, ctx.crypto):
        return state, [Count("bad-commit")]
    if commit.round == state.round + 1:
        return _buffer(state, commit)
    return _take_commit(state, commit, ctx)


def _take_commit(state: PeerConsensusState, commit: CommitMessage, ctx: PeerContext) -> Outcome:
    if commit.block is not None:
        return _accept_commit(state, commit.block, commit, ctx)
    if state.own_block is not None and state.own_block.block_hash == commit.block_hash:
        return _accept_commit(state, state.own_block, commit, ctx)
    if state.pending_commit is None:
        logger.debug(f"{state.me} holds commit r{commit.round} {commit.block_hash.short()} without a body")
        return replace(state, pending_commit=commit), [Count("commit-without-body")]
    return state, []


def _accept_commit(state: PeerConsensusState, block: Block, commit: CommitMessage, ctx: PeerContext) -> Outcome:
    try:
        store, world = commit_block(state.store, state.world, block, commit, state.peers, ctx.crypto)
    except ProtocolFault as e:
        logger.warning(f"{state.me} refused {commit}: {e}")
        return state, [Count(e.code)]

    committed_round = state.round
    replay = state.buffered
    state = replace(
        state,
        store=store,
        world=world,
        round=committed_round + 1,
        phase=Phase.WAITING_NEXT,
        my_vote=None,
        own_block=None,
        order=None,
        next_target_index=0,
        votes=VoteStore(committed_round + 1),
        pending_commit=None,
        announced=False,
        buffered=(),
    )
    logger.debug(f"{state.me} committed {block} in round {committed_round}")
    actions: list[Action] = [Commit(block, commit.with_block(block))]
    for message in replay:
        state, more = handle_message(state, message, ctx)
        actions.extend(more)
    return state, actions


# rejects --------------------------------------------------------------------

def on_reject(state: PeerConsensusState, reject: RejectMessage, ctx: PeerContext) -> Outcome:
    if state.halted:
        return state, []
    if reject.round < state.round:
        return state, []
    if reject.round > state.round + 1:
        return state, [Count("future-drop")]
    if not verify_reject(reject, state.peers, ctx.crypto):
        return state, [Count("bad-reject")]
    if reject.round == state.round + 1:
        return _buffer(state, reject)
    return _halt(state)


def _halt(state: PeerConsensusState) -> Outcome:
    logger.warning(f"{state.me} halts in round {state.round}: {BFT_VIOLATION}")
    return replace(state, phase=Phase.HALTED, buffered=()), [Alarm(BFT_VIOLATION)]


def handle_message(state: PeerConsensusState, message: InboundMessage, ctx: PeerContext) -> Outcome:
    """Dispatch an inbound message to its handler."""
    if isinstance(message, Proposal):
        return on_proposal(state, message, ctx)
    if isinstance(message, Vote):
        return on_vote(state, message, ctx)
    if isinstance(message, CommitMessage):
        return on_commit(state, message, ctx)
    if isinstance(message, RejectMessage):
        return on_reject(state, message, ctx)
    raise TypeError(f"unexpected consensus input {type(message).__name__}")
