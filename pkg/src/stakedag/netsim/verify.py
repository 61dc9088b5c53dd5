"""Cross-node property checks over a running or finished simulation."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from ..consensus import STAGE_FINAL, is_supermajority
from .node import Node

__all__ = ["PrefixMonitor", "Verdicts", "snapshot", "compare_pair", "check_soundness", "check_forks", "check_confirmations"]


def _prefix_compatible(a: Sequence[str], b: Sequence[str]) -> int | None:
    """First index where ``a`` and ``b`` disagree, or None if one prefixes the other."""
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return None


@dataclass
class PrefixMonitor:
    """Checks every tick that honest final orders extend one common sequence."""

    ordered: list[str] = field(default_factory=list)
    main: list[str] = field(default_factory=list)
    seen_ordered: dict[int, int] = field(default_factory=dict)
    seen_main: dict[int, int] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    @staticmethod
    def _extend(glob: list[str], local: Sequence[str], start: int) -> int | None:
        for i in range(start, len(local)):
            if i < len(glob):
                if glob[i] != local[i]:
                    return i
            else:
                glob.append(local[i])
        return None

    def observe(self, tick: int, nodes: Sequence[Node]) -> None:
        for node in nodes:
            fin = node.engine.finality
            bad = self._extend(self.ordered, fin.ordered, self.seen_ordered.get(node.id, 0))
            if bad is not None:
                self.violations.append(f"tick {tick}: node {node.id} order diverges at {bad}")
            self.seen_ordered[node.id] = len(fin.ordered)
            bad = self._extend(self.main, fin.main_chain, self.seen_main.get(node.id, 0))
            if bad is not None:
                self.violations.append(f"tick {tick}: node {node.id} main chain diverges at {bad}")
            self.seen_main[node.id] = len(fin.main_chain)


@dataclass
class Verdicts:
    results: dict[str, bool] = field(default_factory=dict)
    details: dict[str, list[str]] = field(default_factory=dict)

    def record(self, name: str, problems: list[str]) -> None:
        self.results[name] = self.results.get(name, True) and not problems
        if problems:
            self.details.setdefault(name, []).extend(problems[:5])

    @property
    def all_pass(self) -> bool:
        return all(self.results.values())


def snapshot(node: Node) -> dict[str, tuple]:
    """Per-event annotations of everything the node's engine has processed."""
    eng = node.engine
    events = node.chain.events
    phi = eng.layers.phi
    return {
        h: (events[h], phi[h], (f, eng.is_root(h)), (eng.flagtables[h], eng.scores[h]), eng.decided.get(h))
        for h, f in eng.frame.items()
    }


_CHECKS = ("subgraph", "layers", "roots-frames", "flagtables")


def compare_pair(
    a: Node,
    b: Node,
    rng: random.Random,
    samples: int = 2,
    snaps: tuple[dict[str, tuple], dict[str, tuple]] | None = None,
    probes: Sequence[str] | None = None,
    ancestry_cache: dict[tuple[int, str], set[str]] | None = None,
) -> dict[str, list[str]]:
    """Annotation agreement on events both nodes have processed.

    Ancestry is compared on ``probes`` when given, otherwise on ``samples``
    random common events.  ``ancestry_cache`` lets a caller comparing many
    pairs compute each node's ancestry of a probe once.
    """
    problems: dict[str, list[str]] = {name: [] for name in (*_CHECKS, "clothos", "atropos")}
    sa, sb = snaps if snaps is not None else (snapshot(a), snapshot(b))
    common = [h for h in sa if h in sb]
    for h in common:
        x, y = sa[h], sb[h]
        if x == y:
            continue
        for idx, name in enumerate(_CHECKS):
            if x[idx] != y[idx]:
                problems[name].append(h)
        if x[4] is not None and y[4] is not None and x[4] != y[4]:
            problems["clothos"].append(h)
    if probes is None:
        probes = rng.sample(sorted(common), min(samples, len(common))) if common else []
    cache = {} if ancestry_cache is None else ancestry_cache
    for h in probes:
        if h not in sa or h not in sb:
            continue
        sets = []
        for node in (a, b):
            key = (node.id, h)
            if key not in cache:
                cache[key] = node.chain.ancestry(h)
            sets.append(cache[key])
        if sets[0] != sets[1]:
            problems["subgraph"].append(f"ancestry {h}")
    fa, fb = a.engine.finality, b.engine.finality
    bad = _prefix_compatible(fa.ordered, fb.ordered)
    if bad is not None:
        problems["atropos"].append(f"order diverges at {bad}")
    bad = _prefix_compatible(fa.main_chain, fb.main_chain)
    if bad is not None:
        problems["atropos"].append(f"main chain diverges at {bad}")
    return problems


def check_soundness(node: Node, rng: random.Random, fraction: float = 0.1) -> list[str]:
    eng = node.engine
    problems = [
        f"root {h} score {s}/{t}" for h, s, t in eng.promotions if not is_supermajority(s, t)
    ]
    if eng.non_roots:
        count = max(1, int(len(eng.non_roots) * fraction))
        for h, s, t in rng.sample(eng.non_roots, count):
            if is_supermajority(s, t) and h not in eng.excluded_roots:
                problems.append(f"non-root {h} score {s}/{t}")
    return problems


def check_forks(honest: Sequence[Node]) -> dict[str, list[str]]:
    proofs = {p.normalized() for n in honest for p in n.chain.fork_proofs}
    members = {h for p in proofs for h in p.members}
    literal = []
    for h in sorted(members):
        holders = [n.id for n in honest if n.engine.is_root(h)]
        if len(holders) >= 2:
            literal.append(f"{h} is a root on nodes {holders}")
    pairwise = []
    for p in sorted(proofs, key=lambda p: (p.event_a, p.event_b)):
        a_root = any(n.engine.is_root(p.event_a) for n in honest)
        b_root = any(n.engine.is_root(p.event_b) for n in honest)
        if a_root and b_root:
            pairwise.append(f"both {p.event_a} and {p.event_b} are roots")
    finalized = [
        f"{h} finalized on node {n.id}" for n in honest for h in sorted(members) if h in n.engine.finality.position
    ]
    return {"fork-root-literal": literal, "fork-root-pairwise": pairwise, "fork-finalized": finalized}


def check_confirmations(node: Node) -> list[str]:
    problems = []
    for tx, stages in node.tx_stages.items():
        if STAGE_FINAL in stages:
            if stages != [1, 2, 3, 4, 5]:
                problems.append(f"{tx}: {stages}")
        elif stages != list(range(1, len(stages) + 1)):
            problems.append(f"{tx}: {stages}")
    return problems
