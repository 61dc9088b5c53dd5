"""Layer numbering of a chain's events.

Layers are 1-based: leaves sit on layer 1 and every edge climbs at least one
layer from parent to child.  Three assigners are provided: a batch longest-path
pass used as the reference, its online counterpart which only touches new
vertices, and an online Coffman-Graham variant that caps layer width.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dag import EventBlock, SOperaChain

__all__ = [
    "LayerAssignment",
    "LayeringError",
    "DiffGraph",
    "batch_lpl",
    "online_lpl",
    "online_cg",
    "extend_cg",
    "max_width",
]


class LayeringError(Exception):
    pass


@dataclass
class DiffGraph:
    """Events not yet layered; their edges are implied by parent references."""

    new_vertices: list[EventBlock] = field(default_factory=list)

    @classmethod
    def from_hashes(cls, chain: SOperaChain, hashes: Iterable[str]) -> "DiffGraph":
        return cls([chain.events[h] for h in hashes])

    def __len__(self) -> int:
        return len(self.new_vertices)


@dataclass
class LayerAssignment:
    phi: dict[str, int] = field(default_factory=dict)
    height: int = 0
    width_bound: int | None = None
    members: dict[int, list[str]] = field(default_factory=dict)

    @property
    def processed(self) -> set[str]:
        return set(self.phi)

    def copy(self) -> "LayerAssignment":
        return LayerAssignment(
            dict(self.phi),
            self.height,
            self.width_bound,
            {l: list(vs) for l, vs in self.members.items()},
        )

    def place(self, event_hash: str, layer: int) -> None:
        self.phi[event_hash] = layer
        self.members.setdefault(layer, []).append(event_hash)
        if layer > self.height:
            self.height = layer

    def width(self, layer: int) -> int:
        return len(self.members.get(layer, ()))

    def extend_lpl(self, chain: SOperaChain, hashes: Sequence[str]) -> None:
        """In-place longest-path layering of ``hashes`` (given in insertion order)."""
        phi = self.phi
        events = chain.events
        for h in hashes:
            if h in phi:
                continue
            ev = events[h]
            if ev.seq == 0:
                layer = 1
            else:
                try:
                    layer = 1 + max(phi[p] for p in ev.parents)
                except KeyError as exc:
                    raise LayeringError(f"unlayered parent {exc.args[0]}") from None
            self.place(h, layer)

    def check_edges(self, chain: SOperaChain) -> bool:
        return all(
            self.phi[h] >= self.phi[p] + 1 for h in self.phi for p in chain.events[h].parents
        )


def _topo_order(chain: SOperaChain, vertices: Sequence[EventBlock], known: set[str]) -> list[EventBlock]:
    """Kahn's algorithm over ``vertices``, treating ``known`` as already placed."""
    local = {v.hash: v for v in vertices}
    indeg: dict[str, int] = {}
    kids: dict[str, list[str]] = {h: [] for h in local}
    for v in vertices:
        count = 0
        for p in v.parents:
            if p in local:
                count += 1
                kids[p].append(v.hash)
            elif p not in known:
                raise LayeringError(f"unlayered parent {p}")
        indeg[v.hash] = count
    ready = [(local[h].lamport, h) for h, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    out: list[EventBlock] = []
    while ready:
        _, h = heapq.heappop(ready)
        out.append(local[h])
        for c in kids[h]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, (local[c].lamport, c))
    if len(out) != len(local):
        raise LayeringError("cycle detected")
    return out


def batch_lpl(chain: SOperaChain) -> LayerAssignment:
    """Longest-path layering of the whole chain."""
    state = LayerAssignment()
    indeg = {h: len(ev.parents) for h, ev in chain.events.items()}
    queue = deque(sorted(h for h, d in indeg.items() if d == 0))
    seen = 0
    while queue:
        h = queue.popleft()
        seen += 1
        ev = chain.events[h]
        layer = 1 + max((state.phi[p] for p in ev.parents), default=0)
        state.place(h, layer)
        for c in chain.children[h]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if seen != len(chain.events):
        raise LayeringError("cycle detected")
    return state


def online_lpl(state: LayerAssignment, chain: SOperaChain, diff: DiffGraph) -> LayerAssignment:
    """Layer only the diff vertices; existing layers are left untouched."""
    result = state.copy()
    ordered = _topo_order(chain, diff.new_vertices, set(result.phi))
    result.extend_lpl(chain, [v.hash for v in ordered])
    return result


def online_cg(state: LayerAssignment, chain: SOperaChain, W: int, diff: DiffGraph) -> LayerAssignment:
    """Online Coffman-Graham layering with at most ``W`` vertices per layer."""
    result = state.copy()
    extend_cg(result, chain, W, [v.hash for v in diff.new_vertices])
    return result


def extend_cg(state: LayerAssignment, chain: SOperaChain, W: int, hashes: Sequence[str]) -> None:
    """In-place form of :func:`online_cg`.

    Every new vertex starts with label infinity and is then relabelled 1, so
    selection among ready vertices falls through to the (lamport, hash)
    tie-break.  A vertex goes to the layer just above its highest parent when
    that layer still has room, otherwise it opens a new top layer.
    """
    if W < 1:
        raise ValueError("W must be at least 1")
    state.width_bound = W
    vertices = {h: chain.events[h] for h in hashes if h not in state.phi}
    label = {h: math.inf for h in vertices}
    for h in label:
        label[h] = 1
    waiting: dict[str, int] = {}
    kids: dict[str, list[str]] = {h: [] for h in vertices}
    for h, v in vertices.items():
        count = 0
        for p in v.parents:
            if p in vertices:
                count += 1
                kids[p].append(h)
            elif p not in state.phi:
                raise LayeringError(f"unlayered parent {p}")
        waiting[h] = count
    ready = [(-label[h], v.lamport, h) for h, v in vertices.items() if waiting[h] == 0]
    heapq.heapify(ready)
    placed = 0
    while ready:
        _, _, h = heapq.heappop(ready)
        v = vertices[h]
        target = 1 + max((state.phi[p] for p in v.parents), default=0)
        if state.width(target) < W:
            state.place(h, target)
        else:
            state.place(h, state.height + 1)
        placed += 1
        for c in kids[h]:
            waiting[c] -= 1
            if waiting[c] == 0:
                heapq.heappush(ready, (-label[c], vertices[c].lamport, c))
    if placed != len(vertices):
        raise LayeringError("cycle detected")


def max_width(n: int, w_p: float, w_c: float) -> int:
    """Layer width bound for n nodes when faulty nodes fork with probability w_p."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 <= w_p <= 1.0:
        raise ValueError("w_p must lie in [0, 1]")
    if w_c < 0:
        raise ValueError("w_c must be non-negative")
    # the tolerance absorbs float noise such as 0.1 * 3 = 0.30000000000000004
    return math.ceil(n + (n - 1) * w_p * w_c - 1e-9)
