import json
from unittest.mock import patch

import pytest

from yacsim.config import ScenarioConfig, ScriptedTransfer, parse_partition
from yacsim.consensus.state_machine import Count
from yacsim.event_dispatcher import EventDispatcher
from yacsim.model import Vote
from yacsim.netsim import simulator as simulator_module
from yacsim.netsim.simulator import Simulator, build_setup, build_workload, run
from yacsim.scenarios import silent_byzantine


def one_transfer(**overrides):
    values = dict(
        name="one-transfer",
        n_peers=4,
        transfers=[ScriptedTransfer(time_ms=0, src=0, dst=1, amount=5)],
        batch_limit=1,
        latency_us=5_000,
        vote_step_delay_ms=10,
        duration_s=1,
        drain_s=1,
    )
    values.update(overrides)
    return ScenarioConfig(**values)


def assert_healthy(result):
    assert result.violations == []
    assert not result.timed_out
    honest = result.honest_peers()
    assert len({p.height for p in honest}) == 1
    assert len({p.top_block_hash for p in honest}) == 1
    for p in honest:
        assert set(result.accepted_tx_ids) <= set(result.committed_tx_ids[p.name])


def test_happy_path():
    result = run(one_transfer())
    assert_healthy(result)
    assert result.final_heights() == [1, 1, 1, 1]
    assert len(result.commits) == 4
    assert result.alarms() == 0
    assert result.throughput() == 1.0
    assert result.ordering.emitted == 1


def test_zero_latency_network():
    result = run(one_transfer(latency_us=0))
    assert_healthy(result)
    assert result.final_heights() == [1, 1, 1, 1]


def test_same_seed_same_trace():
    first = run(silent_byzantine())
    second = run(silent_byzantine())
    assert first.trace_lines() == second.trace_lines()
    assert first.final_heights() == second.final_heights()
    other = run(silent_byzantine().with_overrides(seed=2))
    assert other.trace_lines() != first.trace_lines()


def test_trace_is_ndjson():
    lines = run(one_transfer()).trace_lines()
    records = [json.loads(line) for line in lines]
    assert records[0]["kind"] == "start"
    assert records[-1]["kind"] == "end"
    assert [r["time"] for r in records] == sorted(r["time"] for r in records)
    assert sum(1 for r in records if r["kind"] == "commit") == 4


def test_dispatcher_receives_commits_by_kind():
    seen = []
    dispatcher = EventDispatcher().register("commit", seen.append)
    Simulator(one_transfer(), dispatcher).run()
    assert len(seen) == 4
    assert {r.peer for r in seen} == {f"peer-{i}" for i in range(4)}


def test_partitioned_peer_catches_up():
    config = one_transfer(partitions=[parse_partition("0|1,2,3@0-300")])
    result = run(config)
    assert_healthy(result)
    assert result.final_heights() == [1, 1, 1, 1]
    assert any(r.kind == "partitioned" and r.peer == "peer-0" for r in result.trace)


def test_equivocator_sends_conflicting_votes():
    config = one_transfer(behaviors={3: "equivocator"}, latency_us=20_000, vote_step_delay_ms=1)
    result = run(config)
    assert_healthy(result)
    votes = {
        (r.detail["to"], r.detail["msg"])
        for r in result.trace
        if r.kind == "send" and r.peer == "peer-3" and r.detail["label"] == "vote"
    }
    assert len({to for to, _ in votes}) >= 2
    # every target got its own fabricated hash
    assert len({msg for _, msg in votes}) == len({to for to, _ in votes})


def test_crashed_peer_is_left_behind():
    result = run(one_transfer(behaviors={3: "crash:0"}))
    assert_healthy(result)
    assert result.peers[3].crashed
    assert result.peers[3].height == 0
    assert [p.height for p in result.honest_peers()] == [1, 1, 1]


def test_delayed_peer():
    result = run(one_transfer(behaviors={1: "delayed:2"}))
    assert_healthy(result)
    assert result.final_heights() == [1, 1, 1, 1]


def test_silent_peer_still_commits_from_broadcasts():
    result = run(silent_byzantine())
    assert_healthy(result)
    assert result.peers[3].behavior == "silent"
    assert any(r.kind == "silenced" for r in result.trace)
    assert result.peers[3].height == result.peers[0].height


def test_workload_is_seeded():
    config = silent_byzantine()
    setup = build_setup(config)
    first = build_workload(config, setup)
    assert first == build_workload(config, setup)
    assert all(t < config.duration_us for t, _ in first)
    assert [t for t, _ in first] == sorted(t for t, _ in first)


def test_ed25519_run():
    pytest.importorskip("Crypto")
    result = run(one_transfer(crypto="ed25519"), record_trace=False)
    assert_healthy(result)
    assert result.trace == []


def test_equivocation_evidence_reaches_end_summary():
    config = one_transfer()
    liar = build_setup(config).peer_keys[3].peer
    real_handle = simulator_module.handle_message

    def handle(state, message, ctx):
        state, actions = real_handle(state, message, ctx)
        if isinstance(message, Vote) and state.me != liar:
            actions = [*actions, Count("equivocation", liar)]
        return state, actions

    with patch.object(simulator_module, "handle_message", side_effect=handle):
        result = run(config)
    assert_healthy(result)
    accusers = [p for p in result.peers if p.equivocators]
    assert accusers and all(set(p.equivocators) == {"peer-3"} for p in accusers)
    assert any(r.kind == "equivocation" and r.detail["by"] == "peer-3" for r in result.trace)
    end = result.trace[-1]
    assert end.kind == "end"
    assert [p["equivocators"] for p in end.detail["peers"]] == [p.equivocators for p in result.peers]
    assert [p["height"] for p in end.detail["peers"]] == [1, 1, 1, 1]


def test_cut_off_silent_peer_does_not_hold_the_run_open():
    config = one_transfer(behaviors={3: "silent"}, partitions=[parse_partition("3|0,1,2@0-300")], drain_s=5)
    result = run(config)
    assert_healthy(result)
    assert result.final_heights() == [1, 1, 1, 0]
    assert result.peers[3].phase == "voting"
    assert result.end_time < config.time_limit_us


def slow_peer_config(**overrides):
    values = dict(
        name="slow-peer",
        n_peers=4,
        tx_rate=200,
        batch_limit=5,
        batch_timeout_ms=5,
        duration_s=1,
        drain_s=0,
        latency_us=5_000,
        vote_step_delay_ms=1,
        slow_fraction=0.25,
        slow_cost_us=20_000,
    )
    values.update(overrides)
    return ScenarioConfig(**values)


def test_overloaded_slow_peer_stalls_without_gating_the_rest():
    simulator = Simulator(slow_peer_config())
    result = simulator.run()
    assert len(simulator.slow) == 1
    slow = next(iter(simulator.slow))
    assert result.violations == []
    fast = [p.height for p in result.peers if p.index != slow]
    assert len(set(fast)) <= 2 and min(fast) > 20
    assert result.peers[slow].height < max(fast) - 1
    assert result.stalled_peers() == 1


def test_slow_peers_are_seeded():
    assert Simulator(slow_peer_config(n_peers=8)).slow == Simulator(slow_peer_config(n_peers=8)).slow
    assert len(Simulator(slow_peer_config(n_peers=8)).slow) == 2
    assert Simulator(slow_peer_config(slow_fraction=0)).slow == frozenset()
