import pytest

from yacsim.errors import ConfigError
from yacsim.netsim.simulator import run
from yacsim.scenarios import CANNED, default_sweep_grid, get_scenario, sweep_base


def honest_agree(result):
    honest = result.honest_peers()
    return len({p.top_block_hash for p in honest}) == 1 and len({p.height for p in honest}) == 1


def test_bob_catches_up_through_one_forwarded_commit():
    result = run(get_scenario("bob-partition"))
    assert result.violations == []
    assert not result.timed_out
    assert result.final_heights() == [1, 1, 1, 1]
    assert len({p.top_block_hash for p in result.peers}) == 1
    assert result.sends_to("commit-forward", "bob") == 1
    forwards = [r for r in result.trace if r.kind == "send" and r.detail["label"] == "commit-forward"]
    assert [r.detail["to"] for r in forwards] == ["bob"]
    assert any(r.kind == "partitioned" for r in result.trace)
    bob = next(p for p in result.peers if p.name == "bob")
    assert bob.behavior == "divergent:0"
    assert bob.alarms == []


def test_bob_partition_names():
    config = get_scenario("bob-partition")
    assert sorted(config.peer_names) == ["alice", "bob", "clara", "deana"]
    assert len(config.partitions) == 1


def test_divergent_peers_all_raise_alarm():
    result = run(get_scenario("reject-divergence"))
    assert result.violations == []
    assert [p.alarms for p in result.peers] == [["bft-violation"]] * 4
    assert all(p.phase == "halted" for p in result.peers)
    assert result.final_heights() == [0, 0, 0, 0]
    assert result.sends.get("reject")


def test_happy_4():
    result = run(get_scenario("happy-4"))
    assert result.violations == []
    assert len(result.commits) == 4
    assert {c.round for c in result.commits} == {0}
    assert result.alarms() == 0


@pytest.mark.parametrize("name", ["silent-byzantine", "equivocator-7", "lossy-network"])
def test_faulty_scenarios_stay_safe_and_live(name):
    result = run(get_scenario(name), record_trace=False)
    assert result.violations == []
    assert not result.timed_out
    assert honest_agree(result)
    assert result.final_heights()[0] > 0
    for p in result.honest_peers():
        assert set(result.accepted_tx_ids) <= set(result.committed_tx_ids[p.name])


def test_lossy_network_drops_messages():
    result = run(get_scenario("lossy-network"))
    assert any(r.kind == "dropped" for r in result.trace)


def test_unknown_scenario_lists_available():
    with pytest.raises(ConfigError) as exc:
        get_scenario("no-such-scenario")
    assert "happy-4" in str(exc.value)


def test_scenario_file(tmp_path):
    path = tmp_path / "mine.scenario"
    path.write_text("peers=7\nbyzantine=2  # two faulty\nbyzantine-behavior=delayed:1\nvote-delay-ms=25\n")
    config = get_scenario(str(path))
    assert config.name == "mine"
    assert config.n_peers == 7
    assert [str(b) for b in config.resolved_behaviors()][-2:] == ["delayed:1", "delayed:1"]
    assert config.vote_step_delay_us == 25_000


def test_every_canned_scenario_builds():
    for name, scenario in CANNED.items():
        assert scenario.build().name == name


def test_default_sweep_grid():
    grid = default_sweep_grid()
    assert len(grid) == 16
    assert [(c.n_peers, c.vote_step_delay_ms) for c in grid[:4]] == [(4, 1), (4, 20), (4, 100), (4, 500)]
    assert all(c.trials == 10 for c in grid)


def test_sweep_rounds_commit_the_same_blocks_at_every_vote_step():
    base = sweep_base().with_overrides(n_peers=4, duration_s=1, trials=1)
    chains = []
    for delay in (1, 100):
        result = run(base.with_overrides(vote_step_delay_ms=delay), record_trace=False)
        assert result.violations == []
        chains.append({c.round: c.block_hash for c in result.commits})
    fast, slow = chains
    common = set(fast) & set(slow)
    assert len(common) >= 3
    assert all(fast[r] == slow[r] for r in common)
    assert max(fast) >= max(slow)


def test_sweep_base_has_slow_peers_only_at_scale():
    base = sweep_base()
    assert [int(base.slow_fraction * n) for n in (4, 16, 28, 64)] == [0, 0, 0, 2]
    assert base.jitter_us == 0 and base.cpu_spread == 0
