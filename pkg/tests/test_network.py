import random

import pytest

from yacsim.errors import ConfigError
from yacsim.netsim.byzantine import Behavior, parse_behavior
from yacsim.netsim.network import Network, NetworkModel, Partition, partitions_heal_by


def test_drop_rate_is_binomial():
    network = Network(NetworkModel(drop_rate=0.5), 4, random.Random(3))
    dropped = sum(network.dropped() for _ in range(10_000))
    # within 5 sigma of n*p
    assert abs(dropped - 5000) <= 5 * 50


def test_no_drops_without_drop_rate():
    network = Network(NetworkModel(), 4, random.Random(3))
    assert not any(network.dropped() for _ in range(1000))


def test_link_latency_is_symmetric_and_fixed():
    network = Network(NetworkModel(base_latency_us=1000, link_spread_us=500), 5, random.Random(1))
    for a in range(5):
        for b in range(5):
            assert network.link_latency(a, b) == network.link_latency(b, a)
            if a != b:
                assert 1000 <= network.link_latency(a, b) <= 1500
    assert network.link_latency(2, 2) == 0


def test_jitter_bounds():
    network = Network(NetworkModel(base_latency_us=100, jitter_us=50), 2, random.Random(1))
    samples = [network.peer_delay(0, 1) for _ in range(500)]
    assert min(samples) >= 100 and max(samples) <= 150
    assert len(set(samples)) > 1


def test_partition_window():
    cut = Partition(frozenset({0}), frozenset({1, 2}), 1000, 2000)
    network = Network(NetworkModel(partitions=(cut,)), 3, random.Random(1))
    assert not network.partitioned(0, 1, 999)
    assert network.partitioned(0, 1, 1000)
    assert network.partitioned(2, 0, 1999)
    assert not network.partitioned(1, 2, 1500)
    assert not network.partitioned(0, 1, 2000)
    assert partitions_heal_by([cut], 2000)
    assert not partitions_heal_by([cut], 1999)


def test_parse_behavior():
    assert parse_behavior("silent") == Behavior("silent")
    assert parse_behavior("delayed:2") == Behavior("delayed", 2)
    assert parse_behavior("crash:12.5") == Behavior("crash", 12.5)
    assert str(parse_behavior("divergent:1")) == "divergent:1"
    assert parse_behavior("honest").honest
    for bad in ("sleepy", "silent:1", "delayed", "delayed:x", "crash:-1"):
        with pytest.raises(ConfigError):
            parse_behavior(bad)
