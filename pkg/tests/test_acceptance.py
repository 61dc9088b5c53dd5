"""Acceptance criteria 1 to 9, each printing one pass/fail line."""

from __future__ import annotations

import math
import random
import time

import pytest

from helpers import build_ladder, random_chain, shuffled_insertion
from stakedag.consensus import is_supermajority
from stakedag.harness import replay_log, write_run
from stakedag.layering import DiffGraph, LayerAssignment, batch_lpl, online_cg, online_lpl
from stakedag.netsim import ByzantineSpec, SimConfig, run_simulation
from stakedag.staking import (
    Account,
    StakeParams,
    block_reward,
    build_validators,
    daily_rewards,
    network_importances,
    slot_constants,
    slot_for_stake,
    total_transacting_power,
)

HONEST_RUNS = 100
HONEST_LIMIT_S = 120.0
FORKER_RUNS = 50
LAYERING_RUNS = 100
LAYERING_LIMIT_S = 30.0
LEDGER_INPUTS = 1000


@pytest.fixture
def verdict(capsys):
    """Print ``criterion N: PASS|FAIL  detail`` straight to the terminal."""

    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")

    return emit


def _problems(report) -> list[str]:
    return [f"{name}: {report.details.get(name, [])[:2]}" for name, ok in report.verdicts.items() if not ok]


# -- honest benchmark, shared by criteria 4, 5 and 9 --------------------------------------


def honest_config(seed: int) -> SimConfig:
    rng = random.Random(seed)
    n = 4 + seed % 7
    return SimConfig(
        n=n,
        stakes=[rng.randint(1, 3) for _ in range(n)],
        seed=seed,
        max_ticks=2000,
        delay_ticks=(1, 5),
    )


@pytest.fixture(scope="module")
def honest_runs():
    verdicts = []
    start = time.perf_counter()
    for seed in range(HONEST_RUNS):
        report = run_simulation(honest_config(seed))
        report.log_nodes = {}
        verdicts.append((seed, report.verdicts, report.details, sum(map(len, report.finality.values()))))
    return verdicts, time.perf_counter() - start


def forker_config(seed: int) -> SimConfig:
    rng = random.Random(1000 + seed)
    n = 4 + seed % 4
    stakes = [rng.randint(2, 3) for _ in range(n)]
    forker = seed % n
    stakes[forker] = 1
    return SimConfig(
        n=n,
        stakes=stakes,
        seed=1000 + seed,
        max_ticks=1000,
        byzantine={forker: ByzantineSpec("forker", w_c=2 + seed % 2, fork_prob=0.5)},
    )


# -- criteria --------------------------------------------------------------------------------


def test_criterion_1_ladder_scores(verdict):
    start = time.perf_counter()
    _, engine, h = build_ladder()
    elapsed = time.perf_counter() - start
    scores = [engine.scores[h[k]] for k in ("r_b", "c", "d", "d_prime")]
    ok = scores == [2, 3, 4, 5] and elapsed < 1.0
    verdict(1, ok, f"scores {scores}, {elapsed * 1000:.1f} ms")
    assert ok


def test_criterion_2_staking_constants(verdict):
    params = StakeParams()
    sigma_g, sigma_b = slot_constants(params)
    slot = slot_for_stake(120 * sigma_b, params)
    rewards = [block_reward(d, params) for d in range(1, 1461)]
    after = [block_reward(d, params) for d in (1461, 1462, 3000)]
    checks = {
        "sigma_g": sigma_g == 0.635,
        "sigma_b": sigma_b == 6350.0,
        "stake": 120 * sigma_b == 762_000,
        "bytes": math.isclose(slot.bytes_per_sec, 120.0),
        "gas": abs(slot.gas_per_sec - 1_200_000) <= 0.005 * 1_200_000,
        "reward": all(abs(r - 682_425.46) <= 0.01 for r in rewards),
        "after": all(r == 0.0 for r in after),
    }
    bad = [k for k, v in checks.items() if not v]
    verdict(
        2,
        not bad,
        f"sigma_g {sigma_g}, sigma_b {sigma_b}, gas {slot.gas_per_sec:,.0f}/s, reward {rewards[0]:,.2f}"
        + (f", failed {bad}" if bad else ""),
    )
    assert not bad


def _online(chain, seed, assign):
    rng = random.Random(seed)
    order = shuffled_insertion(chain, seed)
    state = LayerAssignment()
    i = 0
    while i < len(order):
        size = rng.randint(1, 20)
        state = assign(state, chain, DiffGraph.from_hashes(chain, order[i : i + size]))
        i += size
    return state


def test_criterion_3_layering_equivalence(verdict):
    start = time.perf_counter()
    bad = []
    for seed in range(LAYERING_RUNS):
        n = 4 + seed % 5
        events = 200 + (seed * 37) % 301
        chain = random_chain(seed, n=n, events=events)
        batch = batch_lpl(chain).phi
        lpl = _online(chain, seed, online_lpl).phi
        cg = _online(chain, seed + 7, lambda s, c, d, n=n: online_cg(s, c, n, d)).phi
        if lpl != batch or cg != lpl:
            bad.append(seed)
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < LAYERING_LIMIT_S
    verdict(3, ok, f"{LAYERING_RUNS} chains, mismatched seeds {bad}, {elapsed:.1f} s (limit {LAYERING_LIMIT_S:.0f} s)")
    assert ok


def _independent_score(node, h: str) -> tuple[int, int]:
    """Recount a root's score from the raw ancestry and the engine's root labels."""
    eng = node.engine
    base = eng.bases[h]
    seen = node.chain.ancestry(h)
    creators = {
        node.chain.events[r].creator
        for r in seen
        if eng.is_root(r) and eng.frame[r] == base and r not in node.chain.fork_members
    }
    powers = node.stake_book.powers(base)
    return sum(powers.get(c, 0) for c in creators), node.stake_book.total(base)


def test_criterion_4_root_threshold_soundness(verdict, honest_runs):
    runs, _ = honest_runs
    flagged = [seed for seed, v, _, _ in runs if not v["root-soundness"]]
    checked = 0
    for seed in range(12):
        cfg = honest_config(500 + seed) if seed % 2 == 0 else forker_config(500 + seed)
        cfg.max_ticks = 600
        report = run_simulation(cfg)
        if not report.verdicts["root-soundness"]:
            flagged.append(cfg.seed)
        rng = random.Random(seed)
        for node in report.log_nodes.values():
            if not node.honest:
                continue
            eng = node.engine
            for h, score, total in eng.promotions:
                if not is_supermajority(score, total) or _independent_score(node, h) != (score, total):
                    flagged.append((cfg.seed, h[:8]))
                checked += 1
            sample = rng.sample(eng.non_roots, max(1, len(eng.non_roots) // 10))
            for h, score, total in sample:
                if is_supermajority(score, total) and h not in eng.excluded_roots:
                    flagged.append((cfg.seed, h[:8]))
                checked += 1
    ok = not flagged
    verdict(4, ok, f"{len(runs) + 12} runs, {checked} roots and sampled non-roots recounted, violations {flagged[:5]}")
    assert ok


def test_criterion_5_consistency(verdict, honest_runs):
    runs, elapsed = honest_runs
    failing = {seed: [k for k, ok in v.items() if not ok] for seed, v, _, _ in runs if not all(v.values())}
    empty = [seed for seed, _, _, finalized in runs if finalized == 0]
    ok = not failing and not empty and elapsed < HONEST_LIMIT_S
    verdict(
        5,
        ok,
        f"{len(runs)} honest runs, failing {failing or 'none'}, {elapsed:.1f} s (limit {HONEST_LIMIT_S:.0f} s)",
    )
    assert not failing and not empty
    assert elapsed < HONEST_LIMIT_S


def test_criterion_6_fork_bft(verdict):
    failing = {}
    forks = 0
    for seed in range(FORKER_RUNS):
        cfg = forker_config(seed)
        assert cfg.bft_bounded
        report = run_simulation(cfg)
        report.log_nodes = {}
        forks += report.forks_created
        probs = _problems(report)
        if report.forks_created == 0:
            probs.append("no forks created")
        if not any(report.fork_proofs.values()):
            probs.append("no fork proof recorded")
        if probs:
            failing[seed] = probs
    ok = not failing
    verdict(6, ok, f"{FORKER_RUNS} forker runs, {forks} forks created, failing {failing or 'none'}")
    assert ok


def test_criterion_7_determinism_and_replay(verdict, tmp_path):
    configs = [honest_config(3), forker_config(4)]
    configs[0].max_ticks = configs[1].max_ticks = 800
    mismatched = []
    for idx, cfg in enumerate(configs):
        dirs = []
        for attempt in range(2):
            out = tmp_path / f"{idx}-{attempt}"
            write_run(run_simulation(cfg), out)
            dirs.append(out)
        for f in sorted(dirs[0].iterdir()):
            if (dirs[1] / f.name).read_bytes() != f.read_bytes():
                mismatched.append(f"{idx}/{f.name}")
        for final in sorted(dirs[0].glob("*.final")):
            log = final.with_suffix(".log")
            replayed = "".join(x + "\n" for x in replay_log(log.read_text().splitlines()).finality)
            if replayed != final.read_text():
                mismatched.append(f"{idx}/{final.name} replay")
    ok = not mismatched
    verdict(7, ok, f"{len(configs)} scenarios run twice and replayed, mismatches {mismatched or 'none'}")
    assert ok


def _random_ledger(rng: random.Random, params: StakeParams):
    lo = params.min_stake
    accounts = []
    validators = []
    for i in range(rng.randint(1, 8)):
        stake = rng.uniform(lo, params.max_stake)
        accounts.append(Account(f"v{i}", t=stake * rng.uniform(1, 3), t_s=stake, g=rng.choice([0, rng.uniform(0, 1e6)])))
        validators.append((f"v{i}", stake))
    for j in range(rng.randint(0, 10)):
        t_d = {}
        for vid, stake in rng.sample(validators, rng.randint(1, len(validators))):
            t_d[vid] = rng.uniform(1, stake)
        total = sum(t_d.values())
        accounts.append(
            Account(f"d{j}", t=total * rng.uniform(1, 2), t_d=t_d, t_x=0, g=rng.choice([0, rng.uniform(0, 1e6)]))
        )
    for j in range(rng.randint(0, 4)):
        t = rng.uniform(1, 1e7)
        accounts.append(Account(f"x{j}", t=t, t_x=rng.uniform(1, t), g=rng.uniform(0, 1e6)))
    scores = {vid: (rng.random(), rng.random(), rng.random()) for vid, _ in validators}
    return accounts, scores


def test_criterion_8_reward_conservation(verdict):
    params = StakeParams()
    rng = random.Random(2024)
    worst = {"payouts": 0.0, "g_hat": 0.0, "h_hat": 0.0}
    skipped = 0
    for _ in range(LEDGER_INPUTS):
        accounts, scores = _random_ledger(rng, params)
        day = rng.randint(1, 2000)
        fees = rng.choice([0.0, rng.uniform(0, 1e7)])
        recs = build_validators(accounts, params, scores)
        if sum(r.p_v for r in recs) <= 0:
            skipped += 1
            continue
        ledger = daily_rewards(day, fees, recs, accounts, params)
        if ledger.R > 0:
            worst["payouts"] = max(worst["payouts"], abs(sum(ledger.payouts.values()) - ledger.R) / ledger.R)
        P = total_transacting_power(accounts)
        if any(a.g for a in accounts):
            worst["g_hat"] = max(worst["g_hat"], abs(sum(network_importances(accounts).values()) - P) / P)
        W = sum(r.w_v for r in recs)
        if any(r.h_v for r in recs):
            worst["h_hat"] = max(worst["h_hat"], abs(sum(r.h_hat for r in recs) - W) / W)
    ok = worst["payouts"] <= 1e-6 and worst["g_hat"] <= 1e-9 and worst["h_hat"] <= 1e-9
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(8, ok, f"{LEDGER_INPUTS} ledgers ({skipped} with zero power), worst relative error: {detail}")
    assert ok


def test_criterion_9_confirmation_pipeline(verdict, honest_runs):
    runs, _ = honest_runs
    failing = {seed: d.get("confirmations", [])[:2] for seed, v, d, _ in runs if not v["confirmations"]}
    report = run_simulation(honest_config(11))
    finalized = bad = 0
    for node in report.log_nodes.values():
        for stages in node.tx_stages.values():
            if 5 in stages:
                finalized += 1
                bad += stages != [1, 2, 3, 4, 5]
            elif stages != list(range(1, len(stages) + 1)):
                bad += 1
    ok = not failing and bad == 0 and finalized > 0
    verdict(9, ok, f"{len(runs)} runs checked, {finalized} finalized transactions inspected, bad sequences {bad}")
    assert ok
