import itertools
from collections import Counter

import pytest
from scipy.stats import chi2

from yacsim.consensus.permutation import SplitMix64, peer_order, seed_from_hash
from yacsim.errors import ProtocolFault
from yacsim.model import PeerId, digest


def _peers(n):
    return [PeerId(bytes([i]) * 32, f"p{i}") for i in range(n)]


def test_splitmix_reference_values():
    rng = SplitMix64(0)
    assert rng.next() == 0xE220A8397B1DCDAF
    assert rng.next() == 0x6E789E6AA1B965F4


def test_seed_is_little_endian_prefix():
    h = digest(b"x")
    assert seed_from_hash(h) == int.from_bytes(h.data[:8], "little")


def test_singleton_and_empty():
    (only,) = _peers(1)
    assert list(peer_order(digest(b"a"), [only])) == [only]
    with pytest.raises(ProtocolFault) as exc:
        peer_order(digest(b"a"), [])
    assert exc.value.code == "empty-network"


def test_order_is_a_pure_bijection():
    peers = _peers(7)
    for i in range(10_000):
        h = digest(i.to_bytes(4, "little"))
        order = peer_order(h, peers)
        assert sorted(order) == sorted(peers)
        assert order == peer_order(h, list(reversed(peers)))
        assert order.index_of(order[3]) == 3


def test_order_is_uniform_over_permutations():
    peers = _peers(4)
    perms = list(itertools.permutations(sorted(peers)))
    counts = Counter(
        tuple(peer_order(digest(i.to_bytes(8, "little")), peers)) for i in range(10_000)
    )
    expected = 10_000 / len(perms)
    stat = sum((counts[p] - expected) ** 2 / expected for p in perms)
    assert stat < chi2.ppf(0.999, len(perms) - 1)
