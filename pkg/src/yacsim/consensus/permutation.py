"""
Hash-seeded peer order used to route votes.

The order is a Fisher-Yates shuffle of the canonically sorted peer list, driven
by SplitMix64 seeded with the first 8 bytes (little-endian) of the block hash.
Every honest peer that computed the same block therefore routes its vote along
the same order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

from yacsim.errors import ProtocolFault
from yacsim.model import Hash, PeerId

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Small 64-bit generator; identical output on every platform."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


@dataclass(frozen=True)
class PeerOrder:
    ordered_peers: tuple[PeerId, ...]

    def __len__(self) -> int:
        return len(self.ordered_peers)

    def __getitem__(self, index: int) -> PeerId:
        return self.ordered_peers[index]

    def __iter__(self) -> Iterator[PeerId]:
        return iter(self.ordered_peers)

    def index_of(self, peer: PeerId) -> int:
        return self.ordered_peers.index(peer)


def seed_from_hash(block_hash: Hash) -> int:
    return int.from_bytes(block_hash.data[:8], "little")


def peer_order(block_hash: Hash, peers: Sequence[PeerId]) -> PeerOrder:
    """Deterministic permutation of ``peers`` for ``block_hash``.

    Raises:
        ProtocolFault: ``empty-network`` if ``peers`` is empty.
    """
    if not peers:
        raise ProtocolFault("empty-network", "cannot order an empty peer list")
    ordered = sorted(peers)
    rng = SplitMix64(seed_from_hash(block_hash))
    for i in range(len(ordered) - 1, 0, -1):
        j = rng.next() % (i + 1)
        ordered[i], ordered[j] = ordered[j], ordered[i]
    return PeerOrder(tuple(ordered))
