from collections import deque

import pytest

from yacsim.codec import vote_payload
from yacsim.consensus.permutation import peer_order
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
    on_commit,
    on_proposal,
    on_reject,
    on_timer,
    on_vote,
)
from yacsim.ledger import apply_proposal, build_block
from yacsim.model import CommitMessage, Proposal, RejectMessage, Vote, digest
from yacsim.netsim.byzantine import divergent_validator

DELAY = 100


@pytest.fixture
def proposal(client_keys, make_transfer):
    return Proposal(0, (make_transfer(client_keys[0], "client-1", 10), make_transfer(client_keys[1], "client-2", 20)), 0)


@pytest.fixture
def block(crypto, genesis, proposal):
    vp, _ = apply_proposal(genesis, proposal, crypto)
    return build_block(vp, genesis)


@pytest.fixture
def order(block, peers):
    return peer_order(block.block_hash, peers)


@pytest.fixture
def keys_by_peer(peer_keys):
    return {key.peer: key for key in peer_keys}


@pytest.fixture
def ctx(crypto, keys_by_peer):
    """Context for a peer, looked up by PeerId."""
    return lambda peer: PeerContext(keys_by_peer[peer], crypto)


@pytest.fixture
def fresh(peers, genesis):
    return lambda peer: PeerConsensusState.initial(peer, peers, DELAY, genesis)


def _vote(crypto, key, block_hash, proposal_hash, round_=0):
    return Vote(round_, proposal_hash, block_hash, crypto.sign(key, vote_payload(round_, proposal_hash, block_hash)))


def _voted(fresh, ctx, peer, proposal):
    state, actions = on_proposal(fresh(peer), proposal, ctx(peer))
    return state, actions


def deliver_all(states, ctx, outbox):
    """Deliver every send and broadcast until nothing is in flight. Timers are ignored."""
    commits = []
    queue = deque(outbox)
    while queue:
        src, action = queue.popleft()
        if isinstance(action, Send):
            targets = [action.to]
        elif isinstance(action, Broadcast):
            targets = [p for p in states if p != src]
        else:
            if isinstance(action, Commit):
                commits.append((src, action))
            continue
        for dst in targets:
            states[dst], out = handle_message(states[dst], action.message, ctx(dst))
            queue.extend((dst, a) for a in out)
    return commits


def test_non_collector_sends_vote_to_first_peer_and_arms_timer(fresh, ctx, order, proposal, block):
    me = order[1]
    state, actions = _voted(fresh, ctx, me, proposal)
    assert state.phase is Phase.VOTING
    assert state.my_vote.block_hash == block.block_hash
    assert state.next_target_index == 1
    assert actions == [Send(order[0], state.my_vote, "vote"), ArmTimer(DELAY, 0)]


def test_self_vote_is_delivered_inline(fresh, ctx, order, proposal, block):
    state, actions = _voted(fresh, ctx, order[0], proposal)
    assert actions == [ArmTimer(DELAY, 0)]
    assert state.votes.bucket_size(block.block_hash) == 1


def test_timer_walks_the_order_and_wraps(fresh, ctx, order, proposal):
    me = order[2]
    state, _ = _voted(fresh, ctx, me, proposal)
    targets = []
    for _ in range(4):
        state, actions = on_timer(state, 0, ctx(me))
        assert actions[-1] == ArmTimer(DELAY, 0)
        targets.append([a.to for a in actions if isinstance(a, Send)])
    # order[2] is this peer itself, handled without a send
    assert targets == [[order[1]], [], [order[3]], [order[0]]]
    assert state.votes.bucket_size(state.my_vote.block_hash) == 1


def test_stale_timer_is_ignored(fresh, ctx, order, proposal):
    state, _ = _voted(fresh, ctx, order[1], proposal)
    assert on_timer(state, 7, ctx(order[1])) == (state, [])
    assert on_timer(fresh(order[1]), 0, ctx(order[1])) == (fresh(order[1]), [])


def test_collector_commits_on_third_vote(crypto, fresh, ctx, order, proposal, block, keys_by_peer):
    collector = order[0]
    state, _ = _voted(fresh, ctx, collector, proposal)
    ph = state.my_vote.proposal_hash
    state, actions = on_vote(state, _vote(crypto, keys_by_peer[order[1]], block.block_hash, ph), ctx(collector))
    assert actions == []
    state, actions = on_vote(state, _vote(crypto, keys_by_peer[order[2]], block.block_hash, ph), ctx(collector))

    broadcast = next(a for a in actions if isinstance(a, Broadcast))
    assert broadcast.label == "commit"
    assert broadcast.message.block == block
    assert {v.signer for v in broadcast.message.votes} == {order[0], order[1], order[2]}
    assert any(isinstance(a, Commit) for a in actions)
    assert state.round == 1
    assert state.phase is Phase.WAITING_NEXT
    assert state.store.top == block


def test_full_round_converges(fresh, ctx, peers, proposal, block):
    states = {}
    outbox = []
    for p in peers:
        states[p], actions = _voted(fresh, ctx, p, proposal)
        outbox.extend((p, a) for a in actions)
    commits = deliver_all(states, ctx, outbox)
    assert {src for src, _ in commits} == set(peers)
    assert all(s.store.top == block and s.round == 1 for s in states.values())


def test_single_peer_network_commits_alone(crypto, genesis, peer_keys, proposal):
    me = peer_keys[0].peer
    state = PeerConsensusState.initial(me, [me], DELAY, genesis)
    state, actions = on_proposal(state, proposal, PeerContext(peer_keys[0], crypto))
    assert state.round == 1
    assert any(isinstance(a, Commit) for a in actions)


def test_handlers_are_deterministic(fresh, ctx, order, proposal):
    assert _voted(fresh, ctx, order[1], proposal) == _voted(fresh, ctx, order[1], proposal)


def test_duplicate_vote_is_idempotent(crypto, fresh, ctx, order, proposal, block, keys_by_peer):
    collector = order[0]
    state, _ = _voted(fresh, ctx, collector, proposal)
    vote = _vote(crypto, keys_by_peer[order[1]], block.block_hash, state.my_vote.proposal_hash)
    state, _ = on_vote(state, vote, ctx(collector))
    again, actions = on_vote(state, vote, ctx(collector))
    assert again is state
    assert actions == []


def test_equivocation_is_counted_once(crypto, fresh, ctx, order, proposal, block, keys_by_peer):
    collector = order[0]
    state, _ = _voted(fresh, ctx, collector, proposal)
    ph = state.my_vote.proposal_hash
    liar = keys_by_peer[order[3]]
    state, _ = on_vote(state, _vote(crypto, liar, digest(b"a"), ph), ctx(collector))
    state, actions = on_vote(state, _vote(crypto, liar, digest(b"b"), ph), ctx(collector))
    assert Count("equivocation", liar.peer) in actions
    assert order[3] in state.votes.equivocators
    state, actions = on_vote(state, _vote(crypto, liar, digest(b"c"), ph), ctx(collector))
    assert not any(isinstance(a, Count) and a.metric == "equivocation" for a in actions)


def test_bad_and_unknown_votes_are_counted(crypto, fresh, ctx, order, proposal, block):
    state, _ = _voted(fresh, ctx, order[0], proposal)
    ph = state.my_vote.proposal_hash
    outsider = crypto.generate_keypair("mallory", b"mallory")
    assert on_vote(state, _vote(crypto, outsider, block.block_hash, ph), ctx(order[0]))[1] == [Count("unknown-signer")]
    good = state.my_vote
    tampered = Vote(0, ph, digest(b"other"), good.signature)
    assert on_vote(state, tampered, ctx(order[0]))[1] == [Count("bad-vote")]


def test_committed_peer_forwards_commit_to_late_voter(crypto, fresh, ctx, peers, order, proposal, block, keys_by_peer):
    states = {}
    outbox = []
    for p in order.ordered_peers[:3]:
        states[p], actions = _voted(fresh, ctx, p, proposal)
        outbox.extend((p, a) for a in actions)
    states[order[3]] = fresh(order[3])
    deliver_all(states, ctx, outbox)
    committed = states[order[1]]
    assert committed.round == 1

    late = keys_by_peer[order[3]]
    stale = _vote(crypto, late, digest(b"something else"), committed.last_commit.votes[0].proposal_hash)
    _, actions = on_vote(committed, stale, ctx(order[1]))
    assert len(actions) == 1
    forward = actions[0]
    assert forward.to == order[3] and forward.label == "commit-forward"
    assert forward.message.block == block


def test_divergent_peer_catches_up_from_forwarded_commit(crypto, fresh, ctx, order, proposal, block, keys_by_peer):
    honest = {}
    outbox = []
    for p in order.ordered_peers[:3]:
        honest[p], actions = _voted(fresh, ctx, p, proposal)
        outbox.extend((p, a) for a in actions)
    deliver_all(honest, ctx, outbox)
    forward = honest[order[0]].store.commit_for(0)

    bob = order[3]
    bob_ctx = PeerContext(keys_by_peer[bob], crypto, divergent_validator(0))
    state, _ = on_proposal(fresh(bob), proposal, bob_ctx)
    assert state.own_block.block_hash != block.block_hash

    state, actions = on_commit(state, forward, bob_ctx)
    assert state.round == 1
    assert state.store.top == block
    assert state.world.top_block_hash == honest[order[0]].world.top_block_hash


def test_commit_without_body_waits_for_proposal(crypto, fresh, ctx, order, proposal, block, keys_by_peer):
    ph = apply_proposal(fresh(order[0]).world, proposal, crypto)[0].proposal_hash
    votes = [_vote(crypto, keys_by_peer[p], block.block_hash, ph) for p in order.ordered_peers[:3]]
    bare = CommitMessage(0, block.block_hash, votes)

    me = order[3]
    state, actions = on_commit(fresh(me), bare, ctx(me))
    assert actions == [Count("commit-without-body")]
    assert state.pending_commit == bare
    state, actions = on_proposal(state, proposal, ctx(me))
    assert state.round == 1
    assert state.store.top == block
    assert any(isinstance(a, Commit) for a in actions)


def test_invalid_commit_is_counted(crypto, fresh, ctx, order, proposal, block, keys_by_peer):
    ph = digest(b"p")
    votes = [_vote(crypto, keys_by_peer[p], block.block_hash, ph) for p in order.ordered_peers[:2]]
    votes.append(_vote(crypto, keys_by_peer[order[2]], digest(b"other"), ph))
    state = fresh(order[3])
    assert on_commit(state, CommitMessage(0, block.block_hash, votes), ctx(order[3])) == (state, [Count("bad-commit")])


def _reject(crypto, keys, round_=0):
    return RejectMessage(round_, [
        _vote(crypto, key, digest(f"h{i}".encode()), digest(b"p"), round_) for i, key in enumerate(keys)
    ])


def test_collector_detects_reject(crypto, fresh, ctx, peer_keys):
    me = peer_keys[0].peer
    state = fresh(me)
    actions = []
    for i, key in enumerate(peer_keys[1:]):
        state, actions = on_vote(state, _vote(crypto, key, digest(f"h{i}".encode()), digest(b"p")), ctx(me))
    assert state.phase is Phase.HALTED
    assert Alarm("bft-violation") in actions
    assert any(isinstance(a, Broadcast) and a.label == "reject" for a in actions)


def test_reject_halts_once(crypto, fresh, ctx, peer_keys):
    me = peer_keys[0].peer
    reject = _reject(crypto, peer_keys)
    state, actions = on_reject(fresh(me), reject, ctx(me))
    assert actions == [Alarm("bft-violation")]
    assert state.halted
    assert on_reject(state, reject, ctx(me)) == (state, [])
    assert on_vote(state, reject.votes[0], ctx(me))[1] == [Count("halted-drop")]


def test_reject_without_proof_is_counted(crypto, fresh, ctx, peer_keys):
    me = peer_keys[0].peer
    agreeing = RejectMessage(0, [_vote(crypto, key, digest(b"same"), digest(b"p")) for key in peer_keys[:3]])
    state = fresh(me)
    assert on_reject(state, agreeing, ctx(me)) == (state, [Count("bad-reject")])


def test_future_rounds(crypto, fresh, ctx, peer_keys, client_keys, make_transfer):
    me = peer_keys[0].peer
    state = fresh(me)
    later = Proposal(2, (make_transfer(client_keys[0], "client-1", 1),), 0)
    assert on_proposal(state, later, ctx(me)) == (state, [Count("future-drop")])

    next_round = Proposal(1, (), 0)
    buffered, actions = on_proposal(state, next_round, ctx(me))
    assert actions == [] and buffered.buffered == (next_round,)
    again, _ = on_proposal(buffered, next_round, ctx(me))
    assert again.buffered == (next_round,)


def test_buffered_proposal_is_replayed_after_commit(crypto, fresh, ctx, order, proposal, block, keys_by_peer):
    me = order[0]
    state, _ = _voted(fresh, ctx, me, proposal)
    state, _ = on_proposal(state, Proposal(1, (), 5), ctx(me))
    ph = state.my_vote.proposal_hash
    for p in order.ordered_peers[1:3]:
        state, actions = on_vote(state, _vote(crypto, keys_by_peer[p], block.block_hash, ph), ctx(me))
    assert state.round == 1
    assert state.phase is Phase.VOTING
    assert state.buffered == ()


def test_duplicate_proposal_while_voting(fresh, ctx, order, proposal):
    state, _ = _voted(fresh, ctx, order[1], proposal)
    assert on_proposal(state, proposal, ctx(order[1])) == (state, [Count("duplicate-proposal")])
