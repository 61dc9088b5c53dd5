from __future__ import annotations

import random

import pytest

from helpers import random_chain
from stakedag.dag import SOperaChain, create_event, make_event
from stakedag.netsim import (
    ByzantineSpec,
    ConfigError,
    SimConfig,
    StakeBook,
    StakeChange,
    run_simulation,
    select_peers,
    sync_events,
    sync_stakes,
)
from stakedag.netsim.node import log_header, parse_log_header

# -- configuration ------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n": 2, "k": 3},
        {"k": 1},
        {"stakes": [1, 1]},
        {"stakes": [1, 1, 1, 1, 0.5]},
        {"stakes": [0, 0, 0, 0, 0]},
        {"byzantine": {7: ByzantineSpec("forker")}},
        {"peer_strategy": "random-walk"},
        {"delay_ticks": (0, 3)},
        {"delay_ticks": (4, 2)},
        {"max_ticks": 0},
        {"layering": "dfs"},
        {"layering": "cg"},
        {"stake_changes": [StakeChange(0, 3, effective_frame=7)]},
        {"stake_changes": [StakeChange(9, 3, effective_frame=20)]},
        {"settle_layers": -1},
    ],
)
def test_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        SimConfig(**kwargs)


def test_byzantine_spec_rejects():
    with pytest.raises(ConfigError):
        ByzantineSpec("liar")
    with pytest.raises(ConfigError):
        ByzantineSpec("forker", w_c=1)
    with pytest.raises(ConfigError):
        ByzantineSpec("forker", fork_prob=2.0)


def test_config_derived_values_and_digest():
    cfg = SimConfig(n=5, stakes=[2, 2, 2, 2, 1], byzantine={4: ByzantineSpec("forker")})
    assert cfg.honest == [0, 1, 2, 3] and cfg.total_power == 9 and cfg.faulty_power == 1
    assert cfg.bft_bounded
    assert not SimConfig(n=4, stakes=[1, 1, 1, 2], byzantine={3: ByzantineSpec("forker")}).bft_bounded
    assert cfg.digest() == SimConfig(n=5, stakes=[2, 2, 2, 2, 1], byzantine={4: ByzantineSpec("forker")}).digest()
    assert cfg.digest() != SimConfig(n=5, stakes=[2, 2, 2, 2, 1], seed=1).digest()


def test_log_header_round_trip():
    cfg = SimConfig(n=4, stakes=[1, 2, 3, 4], layering="cg", cg_width=4, settle_layers=7)
    parsed = parse_log_header(log_header(cfg))
    assert parsed == {"n": 4, "k": 3, "settle_layers": 7, "layering": "cg", "cg_width": 4, "stakes": [1, 2, 3, 4]}
    with pytest.raises(ValueError):
        parse_log_header("E\tnot a header")


# -- peer selection ------------------------------------------------------------------------


def test_stake_proportional_monte_carlo():
    rng = random.Random(42)
    stakes = (1, 2, 1, 2, 1)
    hits = {j: 0 for j in range(1, 5)}
    draws = 10_000
    for _ in range(draws):
        (j,) = select_peers(0, 5, "stake-proportional", 1, rng, stakes, {})
        hits[j] += 1
    # peers 1..4 carry weights 2, 1, 2, 1 out of 6
    assert hits[1] / draws == pytest.approx(2 / 6, abs=0.03)
    assert hits[2] / draws == pytest.approx(1 / 6, abs=0.03)


@pytest.mark.parametrize("strategy", ["uniform-random", "stake-proportional", "least-used", "most-used", "balanced"])
def test_peers_are_distinct_and_counted(strategy):
    rng = random.Random(1)
    counters: dict[int, int] = {}
    for _ in range(50):
        peers = select_peers(2, 6, strategy, 3, rng, [1, 2, 3, 1, 2, 3], counters)
        assert len(set(peers)) == 3 and 2 not in peers
    assert sum(counters.values()) == 150


@pytest.mark.parametrize("strategy", ["uniform-random", "stake-proportional", "least-used", "most-used", "balanced"])
def test_two_nodes_always_pick_the_other(strategy):
    rng = random.Random(0)
    assert all(select_peers(0, 2, strategy, 1, rng, [1, 5], {}) == [1] for _ in range(10))


def test_least_used_fresh_start_takes_lowest_id():
    assert select_peers(3, 5, "least-used", 2, random.Random(0), [3, 1, 2, 1, 1], {}) == [0, 1]


def test_least_and_most_used_ordering():
    stakes = [1, 1, 1, 1]
    counters = {1: 5, 2: 0, 3: 2}
    assert select_peers(0, 4, "least-used", 1, random.Random(0), stakes, dict(counters)) == [2]
    assert select_peers(0, 4, "most-used", 1, random.Random(0), stakes, dict(counters)) == [1]


def test_balanced_tracks_stake_share():
    stakes = [1, 3, 1]
    counters: dict[int, int] = {}
    rng = random.Random(0)
    for _ in range(400):
        select_peers(0, 3, "balanced", 1, rng, stakes, counters)
    assert counters[1] / 400 == pytest.approx(0.75, abs=0.01)


def test_excluded_peers_skipped_unless_too_few():
    rng = random.Random(0)
    for _ in range(20):
        assert 3 not in select_peers(0, 5, "uniform-random", 2, rng, [1] * 5, {}, exclude={3})
    assert len(select_peers(0, 3, "uniform-random", 2, rng, [1] * 3, {}, exclude={1})) == 2
    with pytest.raises(ValueError):
        select_peers(0, 3, "uniform-random", 3, rng, [1] * 3, {})
    with pytest.raises(ValueError):
        select_peers(0, 3, "nope", 1, rng, [1] * 3, {})


# -- sync ------------------------------------------------------------------------------------


def _copy_prefix(chain: SOperaChain, count: int) -> SOperaChain:
    other = SOperaChain(k=chain.k)
    for h in chain.order[:count]:
        other.insert(chain.events[h])
    return other


def test_sync_events_sends_exactly_the_missing_events():
    full = random_chain(5, n=5, events=120)
    part = _copy_prefix(full, 60)
    sent = sync_events(part.known_map(), full, dict(part.top))
    assert {e.hash for e in sent} == set(full.events) - set(part.events)
    assert [(e.lamport, e.hash) for e in sent] == sorted((e.lamport, e.hash) for e in sent)
    for e in sent:
        part.insert(e)
    assert set(part.events) == set(full.events)
    assert sync_events(part.known_map(), full, dict(part.top)) == []


def test_sync_events_three_ahead_on_one_creator():
    chain = random_chain(6, n=4, events=40)
    behind = _copy_prefix(chain, len(chain))
    for _ in range(3):
        create_event(chain, 2, [chain.top[0], chain.top[1]])
    sent = sync_events(behind.known_map(), chain, dict(behind.top))
    assert [e.creator for e in sent] == [2, 2, 2]
    assert [e.lamport for e in sent] == sorted(e.lamport for e in sent)
    assert sync_events(chain.known_map(), chain, dict(chain.top)) == []


def test_sync_events_exposes_a_hidden_fork():
    responder = SOperaChain(k=2, fork_policy="retain")
    a = create_event(responder, 0)
    b = create_event(responder, 1)
    x = make_event(0, 1, a.hash, [b.hash], 1, ["x"])
    y = make_event(0, 1, a.hash, [b.hash], 1, ["y"])
    requester = SOperaChain(k=2, fork_policy="retain")
    for ev in (a, b, x):
        requester.insert(ev)
        if ev is not x:
            responder.insert(ev)
    responder.insert(y)
    sent = sync_events(requester.known_map(), responder, dict(requester.top))
    assert y.hash in {e.hash for e in sent}
    requester.insert(y)
    assert requester.fork_proofs


def test_stake_book_checkpoints():
    book = StakeBook([1, 2, 1, 2, 1])
    assert book.total(0) == 7 and book.weight(1, 5) == 2
    assert book.apply({(1, 20): 5}) == [(1, 20)]
    assert book.apply({(1, 20): 5}) == []
    assert book.weight(1, 19) == 2 and book.weight(1, 20) == 5 and book.weight(1, 45) == 5
    book.apply({(1, 40): 0})
    assert book.weight(1, 40) == 0 and book.total(40) == 5 and book.total(25) == 10
    assert dict(book.powers(25)) == {0: 1, 1: 5, 2: 1, 3: 2, 4: 1}
    assert sync_stakes({(1, 20): 5}, book) == {(1, 40): 0}


# -- whole runs -------------------------------------------------------------------------------


def _small(seed=3, **kw):
    base = dict(n=5, stakes=[1, 2, 1, 2, 1], seed=seed, max_ticks=300, quiesce_ticks=500)
    base.update(kw)
    return SimConfig(**base)


def test_honest_run_passes_and_is_deterministic():
    a = run_simulation(_small())
    b = run_simulation(_small())
    assert a.passed, {k: v for k, v in a.details.items() if v}
    assert a.to_json() == b.to_json()
    assert a.logs == b.logs
    assert len(set(map(tuple, a.finality.values()))) == 1
    assert all(f > 2 for f in a.frames.values())


def test_seed_changes_the_run():
    assert run_simulation(_small(seed=1)).to_json() != run_simulation(_small(seed=2)).to_json()


def test_forker_run_records_proof_and_keeps_forks_out():
    cfg = _small(seed=4, stakes=[2, 2, 2, 2, 1], byzantine={4: ByzantineSpec("forker", w_c=3, fork_prob=0.6)})
    rep = run_simulation(cfg)
    assert rep.forks_created > 0
    assert rep.passed, {k: v for k, v in rep.details.items() if v}
    assert "4" not in rep.finality
    assert any(rep.fork_proofs.values())


def test_withholder_does_not_stop_honest_progress():
    rep = run_simulation(_small(seed=5, byzantine={0: ByzantineSpec("withholder")}))
    assert rep.passed, {k: v for k, v in rep.details.items() if v}


def test_stake_change_takes_effect_and_logs():
    cfg = _small(
        seed=6,
        max_ticks=400,
        stake_sync_period_frames=5,
        stake_changes=[StakeChange(node=1, stake=4, effective_frame=5, announce_tick=10)],
    )
    rep = run_simulation(cfg)
    assert rep.passed, {k: v for k, v in rep.details.items() if v}
    for node in rep.log_nodes.values():
        assert node.stake_book.weight(1, 5) == 4
    assert any(line.startswith("S\t1\t5\t4") for line in rep.logs["0"])


def test_cg_layering_run():
    rep = run_simulation(_small(seed=7, layering="cg", cg_width=5))
    assert rep.passed, {k: v for k, v in rep.details.items() if v}


def test_node_compute_skips_unchanged_chain_and_counters_balance():
    rep = run_simulation(_small(seed=8))
    node = rep.log_nodes["0"]
    before = len(node.log)
    node.compute(final=False)
    assert len(node.log) == before
    node.compute(final=True)
    assert node.log[-1] == f"C\t{len(node.chain)}\t1"
    for n in rep.log_nodes.values():
        assert sum(n.counters.values()) == n.iterations * (n.config.k - 1)


def test_report_json_round_trip():
    rep = run_simulation(_small(seed=9, max_ticks=150))
    again = type(rep).from_json(rep.to_json())
    assert again.to_json() == rep.to_json()
