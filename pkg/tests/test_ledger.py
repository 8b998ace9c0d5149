import pytest

from yacsim.codec import seal_block, vote_payload
from yacsim.errors import ProtocolFault
from yacsim.ledger import (
    BlockStore,
    apply_proposal,
    build_block,
    commit_block,
    export_block_store,
    import_block_store,
    replay,
    sign_transaction,
    stateless_validate,
)
from yacsim.model import CommitMessage, CreateAccount, Proposal, Transaction, Transfer, Vote
from yacsim.ordering import OrderingService


def _commit_for(crypto, keys, block, round_=0):
    votes = [
        Vote(round_, block.proposal_hash, block.block_hash,
             crypto.sign(k, vote_payload(round_, block.proposal_hash, block.block_hash)))
        for k in keys
    ]
    return CommitMessage(round_, block.block_hash, votes)


def _one_block(crypto, genesis, txs):
    vp, _ = apply_proposal(genesis, Proposal(genesis.height, tuple(txs), 0), crypto)
    return build_block(vp, genesis)


def test_overspend_is_filtered_in_proposal_order(crypto, genesis, client_keys, make_transfer):
    first = make_transfer(client_keys[0], "client-1", 70, nonce=0)
    second = make_transfer(client_keys[0], "client-2", 50, nonce=1)
    vp, preview = apply_proposal(genesis, Proposal(0, (first, second), 0), crypto)
    assert vp.valid_transactions == (first,)
    assert preview.balance("client-0") == 30
    assert preview.balance("client-1") == 170
    # the input state is untouched
    assert genesis.balance("client-0") == 100


def test_invalid_transactions_are_excluded(crypto, genesis, client_keys, make_transfer):
    good = make_transfer(client_keys[0], "client-1", 10)
    forged = Transaction(good.id, good.creator, Transfer("client-0", "client-1", 90), good.nonce, good.client_signature)
    unknown_dst = make_transfer(client_keys[1], "nobody", 1)
    # signed by client-2 but spending client-3's money
    stolen = sign_transaction(crypto, client_keys[2], Transfer("client-3", "client-2", 5), 0)
    assert not stateless_validate(forged, crypto)
    vp, _ = apply_proposal(genesis, Proposal(0, (good, forged, unknown_dst, stolen), 0), crypto)
    assert vp.valid_transactions == (good,)


@pytest.mark.parametrize("amount,nonce", [(2**63, 0), (2**70, 0), (5, 2**64), (5, -1)])
def test_out_of_range_integers_are_rejected(crypto, client_keys, make_transfer, amount, nonce):
    good = make_transfer(client_keys[0], "client-1", 5)
    huge = Transaction(good.id, good.creator, Transfer("client-0", "client-1", amount), nonce, good.client_signature)
    assert not stateless_validate(huge, crypto)
    ordering = OrderingService(crypto, batch_limit=2, batch_timeout_us=0)
    assert not ordering.submit_transaction(huge)
    assert ordering.submit_transaction(good)
    assert ordering.counters.dropped_invalid == 1


def test_create_account(crypto, genesis, client_keys, peer_keys):
    tx = sign_transaction(crypto, client_keys[0], CreateAccount("dave", peer_keys[0].peer.public_key), 0)
    again = sign_transaction(crypto, client_keys[1], CreateAccount("dave", peer_keys[1].peer.public_key), 0)
    vp, preview = apply_proposal(genesis, Proposal(0, (tx, again), 0), crypto)
    assert vp.valid_transactions == (tx,)
    assert preview.balance("dave") == 0
    assert preview.signatories["dave"] == peer_keys[0].peer.public_key


def test_apply_proposal_checks_round(crypto, genesis):
    with pytest.raises(ValueError):
        apply_proposal(genesis, Proposal(1, (), 0), crypto)


def test_commit_block_advances_chain(crypto, genesis, peers, peer_keys, client_keys, make_transfer):
    block = _one_block(crypto, genesis, [make_transfer(client_keys[0], "client-1", 10)])
    store, state = commit_block(BlockStore(), genesis, block, _commit_for(crypto, peer_keys[:3], block), peers, crypto)
    assert store.height == 1
    assert state.height == 1
    assert state.top_block_hash == block.block_hash
    assert state.balance("client-1") == 110
    assert store.entries[0][1].block is None
    assert store.commit_for(0).block == block
    assert store.commit_for(1) is None


def test_commit_block_faults(crypto, genesis, peers, peer_keys, client_keys, make_transfer):
    block = _one_block(crypto, genesis, [make_transfer(client_keys[0], "client-1", 10)])
    good = _commit_for(crypto, peer_keys[:3], block)
    store, state = commit_block(BlockStore(), genesis, block, good, peers, crypto)

    with pytest.raises(ProtocolFault) as exc:
        commit_block(store, state, block, good, peers, crypto)
    assert exc.value.code == "chain-gap"

    with pytest.raises(ProtocolFault) as exc:
        commit_block(BlockStore(), genesis, block, _commit_for(crypto, peer_keys[:2], block), peers, crypto)
    assert exc.value.code == "bad-commit"

    other = _one_block(crypto, genesis, [])
    with pytest.raises(ProtocolFault) as exc:
        commit_block(BlockStore(), genesis, other, good, peers, crypto)
    assert exc.value.code == "bad-commit"


def test_commit_block_rejects_unappliable_block(crypto, genesis, peers, peer_keys, client_keys, make_transfer):
    # valid at genesis, but the overspend makes the second copy unappliable
    rich = _one_block(crypto, genesis, [make_transfer(client_keys[0], "client-1", 80)])
    bad = seal_block(rich.proposal_hash, rich.transactions * 2, 0, genesis.top_block_hash)
    with pytest.raises(ProtocolFault) as exc:
        commit_block(BlockStore(), genesis, bad, _commit_for(crypto, peer_keys[:3], bad), peers, crypto)
    assert exc.value.code == "invalid-block"


def _chain(crypto, genesis, peers, peer_keys, client_keys, make_transfer, length=3):
    store, state = BlockStore(), genesis
    for r in range(length):
        block = _one_block(crypto, state, [make_transfer(client_keys[r % 4], f"client-{(r + 1) % 4}", 5, nonce=r)])
        store, state = commit_block(store, state, block, _commit_for(crypto, peer_keys[:3], block, r), peers, crypto)
    return store, state


def test_replay_reproduces_state(crypto, genesis, peers, peer_keys, client_keys, make_transfer):
    store, state = _chain(crypto, genesis, peers, peer_keys, client_keys, make_transfer)
    replayed = replay(store, genesis)
    assert replayed.accounts == state.accounts
    assert replayed.top_block_hash == state.top_block_hash
    assert replayed.height == 3


def test_export_import(tmp_path, crypto, genesis, peers, peer_keys, client_keys, make_transfer):
    store, _ = _chain(crypto, genesis, peers, peer_keys, client_keys, make_transfer)
    path = tmp_path / "chain.txt"
    export_block_store(store, path)
    assert len(path.read_text().splitlines()) == 3
    assert import_block_store(path, peers, crypto, genesis) == store


def test_import_rejects_corrupt_line(tmp_path, crypto, genesis, peers):
    path = tmp_path / "chain.txt"
    path.write_text("zz 00\n")
    with pytest.raises(ValueError):
        import_block_store(path, peers, crypto, genesis)
