"""Shared builders for the test suite."""

from __future__ import annotations

import random

from stakedag.consensus import ConsensusEngine, StaticStakes
from stakedag.dag import SOperaChain, create_event

LADDER_STAKES = (1, 2, 1, 2, 1)
A, B, C, D, E = range(5)


def build_ladder():
    """Five nodes a..e with stakes (1,2,1,2,1) and k = 2.

    Each node has a leaf root.  Node c references r_b, node a then references
    c, and node e references d, so the flagtables grow one root at a time.
    """
    chain = SOperaChain(k=2)
    leaves = {}
    for node in range(5):
        leaves[node] = create_event(chain, node, payload=[f"leaf-{node}"])
    c = create_event(chain, C, [leaves[B].hash])
    d = create_event(chain, A, [c.hash])
    d2 = create_event(chain, E, [d.hash])
    engine = ConsensusEngine(chain, StaticStakes(LADDER_STAKES), range(5))
    engine.compute(final=True)
    return chain, engine, {"r_b": leaves[B].hash, "c": c.hash, "d": d.hash, "d_prime": d2.hash}


def random_chain(seed: int, n: int, events: int, k: int = 3) -> SOperaChain:
    """A fork-free chain grown by random creators referencing random peer tops."""
    rng = random.Random(seed)
    chain = SOperaChain(k=k)
    for node in range(n):
        create_event(chain, node, payload=[f"leaf-{node}"])
    while len(chain) < events:
        node = rng.randrange(n)
        peers = rng.sample([p for p in range(n) if p != node], k - 1)
        create_event(chain, node, [chain.top[p] for p in peers], payload=[f"tx-{len(chain)}"])
    return chain


def shuffled_insertion(chain: SOperaChain, seed: int) -> list[str]:
    """A random topological order of the chain's events."""
    rng = random.Random(seed)
    waiting = {h: len(set(chain.events[h].parents)) for h in chain.order}
    children: dict[str, list[str]] = {h: [] for h in chain.order}
    for h in chain.order:
        for p in set(chain.events[h].parents):
            children[p].append(h)
    ready = [h for h in chain.order if waiting[h] == 0]
    out = []
    while ready:
        i = rng.randrange(len(ready))
        ready[i], ready[-1] = ready[-1], ready[i]
        h = ready.pop()
        out.append(h)
        for c in children[h]:
            waiting[c] -= 1
            if waiting[c] == 0:
                ready.append(c)
    return out
