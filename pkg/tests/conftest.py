import pytest

from yacsim.crypto import SimulatedCrypto
from yacsim.ledger import genesis_state, sign_transaction
from yacsim.model import Transfer


@pytest.fixture
def crypto():
    return SimulatedCrypto()


@pytest.fixture
def peer_keys(crypto):
    return [crypto.generate_keypair(f"peer-{i}", f"test:peer:{i}".encode()) for i in range(4)]


@pytest.fixture
def peers(peer_keys):
    return tuple(sorted(key.peer for key in peer_keys))


@pytest.fixture
def client_keys(crypto):
    return [crypto.generate_keypair(f"client-{i}", f"test:client:{i}".encode()) for i in range(4)]


@pytest.fixture
def genesis(client_keys):
    return genesis_state(
        {key.peer.display_name: 100 for key in client_keys},
        {key.peer.display_name: key.peer.public_key for key in client_keys},
    )


@pytest.fixture
def make_transfer(crypto):
    """Signed transfer from ``key``'s account to ``dst``."""

    def make(key, dst: str, amount: int, nonce: int = 0):
        return sign_transaction(crypto, key, Transfer(key.peer.display_name, dst, amount), nonce)

    return make
