"""
Latency, loss and partition model between simulated endpoints.

Peers are addressed by index. Each unordered peer pair gets a fixed base latency
drawn once at start-up; every message then adds uniform jitter on top.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class Partition:
    """Bidirectional cut between two peer groups during ``[start_us, end_us)``."""

    side_a: frozenset[int]
    side_b: frozenset[int]
    start_us: int
    end_us: int

    def separates(self, a: int, b: int, now: int) -> bool:
        if not (self.start_us <= now < self.end_us):
            return False
        return (a in self.side_a and b in self.side_b) or (a in self.side_b and b in self.side_a)


@dataclass(frozen=True)
class NetworkModel:
    base_latency_us: int = 1000
    jitter_us: int = 0
    link_spread_us: int = 0
    drop_rate: float = 0.0
    partitions: tuple[Partition, ...] = ()
    os_latency_us: int | None = None


class Network:
    """Seeded network sampling for one simulation run."""

    def __init__(self, model: NetworkModel, n_peers: int, rng: random.Random):
        self.model = model
        self.rng = rng
        self._links: dict[tuple[int, int], int] = {}
        for a in range(n_peers):
            for b in range(a + 1, n_peers):
                spread = rng.randint(0, model.link_spread_us) if model.link_spread_us > 0 else 0
                self._links[(a, b)] = model.base_latency_us + spread

    def link_latency(self, a: int, b: int) -> int:
        if a == b:
            return 0
        return self._links[(a, b) if a < b else (b, a)]

    def _jitter(self) -> int:
        return self.rng.randint(0, self.model.jitter_us) if self.model.jitter_us > 0 else 0

    def peer_delay(self, a: int, b: int) -> int:
        return self.link_latency(a, b) + self._jitter()

    def os_delay(self) -> int:
        base = self.model.os_latency_us if self.model.os_latency_us is not None else self.model.base_latency_us
        return base + self._jitter()

    def partitioned(self, a: int, b: int, now: int) -> bool:
        return any(p.separates(a, b, now) for p in self.model.partitions)

    def dropped(self) -> bool:
        return self.model.drop_rate > 0 and self.rng.random() < self.model.drop_rate


def partitions_heal_by(partitions: Sequence[Partition], time_us: int) -> bool:
    return all(p.end_us <= time_us for p in partitions)
