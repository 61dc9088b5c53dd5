"""Peer selection strategies for the sync step."""

from __future__ import annotations

import random
from typing import Iterable, MutableMapping, Sequence

__all__ = ["select_peers"]


def _weighted_without_replacement(
    candidates: list[int], weights: list[float], count: int, rng: random.Random
) -> list[int]:
    chosen: list[int] = []
    cands = list(candidates)
    ws = list(weights)
    for _ in range(count):
        total = sum(ws)
        if total <= 0:
            idx = rng.randrange(len(cands))
        else:
            x = rng.random() * total
            acc = 0.0
            idx = len(cands) - 1
            for j, w in enumerate(ws):
                acc += w
                if x < acc:
                    idx = j
                    break
        chosen.append(cands.pop(idx))
        ws.pop(idx)
    return chosen


def select_peers(
    self_id: int,
    n: int,
    strategy: str,
    count: int,
    rng: random.Random,
    stakes: Sequence[float],
    counters: MutableMapping[int, int],
    exclude: Iterable[int] = (),
) -> list[int]:
    """Pick ``count`` distinct peers other than ``self_id`` and bump their counters.

    Peers in ``exclude`` (known cheaters) are skipped unless too few remain.
    Ties are broken by ascending node id.
    """
    if count > n - 1:
        raise ValueError("cannot select more peers than there are other nodes")
    banned = set(exclude)
    candidates = [j for j in range(n) if j != self_id and j not in banned]
    if len(candidates) < count:
        candidates = [j for j in range(n) if j != self_id]
    if strategy == "uniform-random":
        chosen = rng.sample(candidates, count)
    elif strategy == "stake-proportional":
        chosen = _weighted_without_replacement(
            candidates, [float(stakes[j]) for j in candidates], count, rng
        )
    elif strategy == "least-used":
        chosen = sorted(candidates, key=lambda j: (counters.get(j, 0) * stakes[j], j))[:count]
    elif strategy == "most-used":
        chosen = sorted(candidates, key=lambda j: (-counters.get(j, 0) * stakes[j], j))[:count]
    elif strategy == "balanced":
        # largest gap between a peer's stake-proportional share and its actual picks
        total_w = sum(stakes[j] for j in candidates) or 1
        picks = sum(counters.get(j, 0) for j in candidates) + count

        def deficit(j: int) -> tuple[float, int]:
            return (-(stakes[j] / total_w * picks - counters.get(j, 0)), j)

        chosen = sorted(candidates, key=deficit)[:count]
    else:
        raise ValueError(f"unknown peer strategy {strategy!r}")
    for j in chosen:
        counters[j] = counters.get(j, 0) + 1
    return chosen
