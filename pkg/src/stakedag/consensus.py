"""Stake-weighted finality over a layered chain.

The engine walks events in (layer, lamport, hash) order.  For each event it
derives a flagtable from its ancestry, scores it with the creators' validating
power for the relevant frame, and promotes it to a root when the score passes
two thirds of the total.  Frames are closed one at a time: every root of the
frame is decided as a Clotho or not, the decided Clothos are ordered with their
not-yet-ordered ancestry, and each becomes an Atropos on the Main chain.

All thresholds use integer cross-multiplication on integer powers.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .dag import SOperaChain, UnknownEvent
from .layering import LayerAssignment, extend_cg

__all__ = [
    "StakeView",
    "StaticStakes",
    "Flagtable",
    "RootGraph",
    "FinalityState",
    "Atropos",
    "ConsensusEngine",
    "is_supermajority",
    "reaches_frame_quorum",
    "validation_score",
    "update_flagtable",
    "build_root_graph",
    "assign_frames",
    "assign_frames_nonroot",
    "select_clothos",
    "sort_key",
    "topo_sort",
    "finalize_atropos",
    "confirmation_status",
    "finality_lines",
    "STAGE_SUBMITTED",
    "STAGE_BATCHED",
    "STAGE_ROOT",
    "STAGE_CLOTHO",
    "STAGE_FINAL",
]

STAGE_SUBMITTED = 1
STAGE_BATCHED = 2
STAGE_ROOT = 3
STAGE_CLOTHO = 4
STAGE_FINAL = 5


class StakeView(Protocol):
    def weight(self, creator: int, frame: int) -> int: ...

    def total(self, frame: int) -> int: ...

    def powers(self, frame: int) -> Mapping[int, int]: ...


class StaticStakes:
    """Validating power that never changes."""

    def __init__(self, stakes: Mapping[int, int] | Sequence[int]) -> None:
        if isinstance(stakes, Mapping):
            self._stakes = dict(stakes)
        else:
            self._stakes = dict(enumerate(stakes))
        if any(int(v) != v or v < 0 for v in self._stakes.values()):
            raise ValueError("validating powers must be non-negative integers")
        self._total = sum(self._stakes.values())

    def weight(self, creator: int, frame: int) -> int:
        return self._stakes.get(creator, 0)

    def total(self, frame: int) -> int:
        return self._total

    def powers(self, frame: int) -> Mapping[int, int]:
        return self._stakes

    @property
    def creators(self) -> list[int]:
        return sorted(self._stakes)


def is_supermajority(score: int, total: int) -> bool:
    """More than two thirds: 3 * score > 2 * total."""
    return 3 * score > 2 * total


def reaches_frame_quorum(score: int, total: int) -> bool:
    """At least two thirds: 3 * score >= 2 * total."""
    return 3 * score >= 2 * total


@dataclass
class Flagtable:
    """Root hash -> (creator, weight)."""

    entries: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def score(self) -> int:
        return sum(w for _, w in self.entries.values())

    def creators(self) -> set[int]:
        return {c for c, _ in self.entries.values()}


def validation_score(ft: Flagtable) -> int:
    return ft.score


@dataclass
class RootGraph:
    roots: set[str] = field(default_factory=set)
    edges: dict[str, tuple[str, ...]] = field(default_factory=dict)
    active: dict[int, str] = field(default_factory=dict)
    frame_of: dict[str, int] = field(default_factory=dict)
    by_frame: dict[int, dict[int, str]] = field(default_factory=dict)

    def edge_set(self) -> set[tuple[str, str]]:
        return {(r, t) for r, ts in self.edges.items() for t in ts}


@dataclass(frozen=True)
class Atropos:
    hash: str
    consensus_position: int
    consensus_lamport: int


@dataclass
class FinalityState:
    clothos: set[str] = field(default_factory=set)
    atropos: list[Atropos] = field(default_factory=list)
    ordered: list[str] = field(default_factory=list)
    processed: set[str] = field(default_factory=set)
    main_chain: list[str] = field(default_factory=list)
    position: dict[str, int] = field(default_factory=dict)
    atropos_of: dict[str, str] = field(default_factory=dict)

    def copy(self) -> "FinalityState":
        return FinalityState(
            set(self.clothos),
            list(self.atropos),
            list(self.ordered),
            set(self.processed),
            list(self.main_chain),
            dict(self.position),
            dict(self.atropos_of),
        )


def sort_key(chain: SOperaChain, phi: Mapping[str, int], h: str) -> tuple[int, int, str]:
    return (phi[h], chain.events[h].lamport, h)


def topo_sort(
    clothos: Iterable[str],
    chain: SOperaChain,
    phi: Mapping[str, int],
    state: FinalityState,
    exclude: set[str] | frozenset[str] = frozenset(),
    *,
    inplace: bool = False,
) -> tuple[FinalityState, list[str]]:
    """Append each Clotho's unordered ancestry to the final list.

    Clothos are taken in (layer, lamport, hash) order.  Each one's subgraph is
    collected without descending below already-ordered events, sorted by the
    same key and appended.  Events in ``exclude`` (known fork members) are
    marked as processed but never given a position.  Returns the new state and
    the Clothos that were ordered, in order.
    """
    result = state if inplace else state.copy()
    done: list[str] = []
    for c in sorted(set(clothos), key=lambda h: sort_key(chain, phi, h)):
        if c in result.processed:
            continue
        sub = chain.ancestry(c, stop=result.processed)
        for h in sorted(sub, key=lambda h: sort_key(chain, phi, h)):
            result.processed.add(h)
            if h in exclude:
                continue
            result.position[h] = len(result.ordered)
            result.atropos_of[h] = c
            result.ordered.append(h)
        done.append(c)
    return result, done


def finalize_atropos(
    state: FinalityState, clothos: Sequence[str], chain: SOperaChain, *, inplace: bool = False
) -> FinalityState:
    """Turn newly ordered Clothos into Atropos entries on the Main chain."""
    result = state if inplace else state.copy()
    for c in clothos:
        if c in result.main_chain or c not in result.position:
            continue
        result.clothos.add(c)
        result.atropos.append(Atropos(c, result.position[c], chain.events[c].lamport))
        result.main_chain.append(c)
    return result


StageCallback = Callable[[str, int], None]


class ConsensusEngine:
    """Per-node consensus pipeline over an append-only chain.

    ``settle_layers`` delays processing of an event until the chain has grown
    that many layers above it, which gives fork evidence time to arrive before
    an event's root status is fixed.  ``layering`` is ``"lpl"`` or ``("cg", W)``.
    """

    def __init__(
        self,
        chain: SOperaChain,
        stakes: StakeView,
        creators: Iterable[int],
        *,
        settle_layers: int = 0,
        layering: str | tuple[str, int] = "lpl",
        on_stage: StageCallback | None = None,
    ) -> None:
        self.chain = chain
        self.stakes = stakes
        self.creators = sorted(creators)
        self.settle_layers = settle_layers
        self.layering = layering
        self.on_stage = on_stage
        self.layers = LayerAssignment()
        self.flagtables: dict[str, dict[int, str]] = {}
        self.scores: dict[str, int] = {}
        self.frame: dict[str, int] = {}
        self.bases: dict[str, int] = {}
        self.frame_roots: dict[int, list[str]] = {}
        self.root_graph = RootGraph()
        self.finality = FinalityState()
        self.decided: dict[str, bool] = {}
        self.next_frame = 1
        self.creator_max_frame: dict[int, int] = {}
        self.promotions: list[tuple[str, int, int]] = []
        self.non_roots: list[tuple[str, int, int]] = []
        self.root_known: set[str] = set()
        self.clotho_known: set[str] = set()
        self.excluded_roots: set[str] = set()
        self._layered = 0
        self._roots_at_last_decide = -1
        # canonical roots in processing order, and how far each undecided root has looked
        self._root_log: list[tuple[int, str]] = []
        self._yes_cursor: dict[str, int] = {}
        # first log index holding a root at or above each frame
        self._frame_start: dict[int, int] = {0: 0}
        self._queue: list[tuple[int, int, str]] = []

    # -- pipeline ---------------------------------------------------------------

    def compute(self, final: bool = False) -> list[str]:
        """Run one ComputeConsensus pass; returns newly finalized Atropos hashes."""
        self._layer_new()
        limit = None if final else self.layers.height - self.settle_layers
        progressed = False
        queue = self._queue
        while queue and (limit is None or queue[0][0] <= limit):
            _, _, h = heapq.heappop(queue)
            self._process(h)
            progressed = True
        if not progressed:
            return []
        return self._decide_frames()

    def _layer_new(self) -> None:
        order = self.chain.order
        if self._layered == len(order):
            return
        new = order[self._layered :]
        self._layered = len(order)
        if self.layering == "lpl":
            self.layers.extend_lpl(self.chain, new)
        else:
            _, W = self.layering  # type: ignore[misc]
            extend_cg(self.layers, self.chain, W, new)
        phi = self.layers.phi
        events = self.chain.events
        for h in new:
            heapq.heappush(self._queue, (phi[h], events[h].lamport, h))

    def _better(self, a: str, b: str) -> str:
        # same creator, two roots: keep the higher layer, then the lower hash
        pa, pb = self.layers.phi[a], self.layers.phi[b]
        if pa != pb:
            return a if pa > pb else b
        return min(a, b)

    def table_at(self, h: str, base: int) -> dict[int, str]:
        """Creator -> frame-``base`` root reachable from ``h``, fork members excluded.

        If two reachable roots share a creator the higher layer wins, then
        the lower hash.
        """
        chain = self.chain
        forks = chain.fork_members
        events = chain.events
        clock = chain._clock[h]
        merged: dict[int, str] = {}
        for r in self.frame_roots.get(base, ()):
            if r in forks:
                continue
            ev = events[r]
            c = ev.creator
            # r is not a fork member, so the vector clock answers reachability
            if clock.get(c, -1) < ev.seq:
                continue
            cur = merged.get(c)
            merged[c] = r if cur is None else self._better(cur, r)
        return merged

    def flagtable_of(self, h: str) -> tuple[int, dict[int, str]]:
        """Highest parent frame and the flagtable of ``h`` against it."""
        ev = self.chain.events[h]
        if ev.seq == 0:
            return 0, {ev.creator: h}
        f = max(self.frame[p] for p in ev.parents)
        return f, self.table_at(h, f)

    def _score(self, table: Mapping[int, str], base: int) -> int:
        powers = self.stakes.powers(base)
        return sum(powers.get(c, 0) for c in table)

    def _process(self, h: str) -> None:
        """Frame, root status and flagtable of one event.

        With f the highest parent frame, an event that sees more than two
        thirds of the frame-f power climbs to frame f+1; otherwise it stays
        at f.  It is a root when its frame exceeds its self-parent's.  A root
        that inherited its frame still reaches a supermajority of the frame
        below, through the root that first opened its frame.
        """
        ev = self.chain.events[h]
        stakes = self.stakes
        fork_member = h in self.chain.fork_members
        if ev.seq == 0:
            frame, base = 1, 0
            table = {ev.creator: h}
            score = stakes.weight(ev.creator, 1)
            total = stakes.total(1)
            is_root = not fork_member
        else:
            f, table = self.flagtable_of(h)
            score = self._score(table, f)
            total = stakes.total(f)
            climbs = is_supermajority(score, total)
            if climbs and fork_member:
                self.excluded_roots.add(h)
                climbs = False
            frame = f + 1 if climbs else f
            is_root = frame > self.frame[ev.self_parent] and not fork_member  # type: ignore[index]
            base = f
            if is_root and not climbs:
                base = f - 1
                table = self.table_at(h, base)
                score = self._score(table, base)
                total = stakes.total(base)
            if is_root:
                self.promotions.append((h, score, total))
            else:
                self.non_roots.append((h, score, total))
        self.flagtables[h] = table
        self.scores[h] = score
        self.bases[h] = base
        self.frame[h] = frame
        if self.creator_max_frame.get(ev.creator, 0) < frame:
            self.creator_max_frame[ev.creator] = frame
        if is_root:
            rg = self.root_graph
            rg.roots.add(h)
            rg.edges[h] = tuple(sorted(r for r in table.values() if r != h))
            rg.frame_of[h] = frame
            rg.active[ev.creator] = h
            slot = rg.by_frame.setdefault(frame, {})
            if ev.creator not in slot:
                slot[ev.creator] = h
                f = frame
                while f not in self._frame_start:
                    self._frame_start[f] = len(self._root_log)
                    f -= 1
                self._root_log.append((frame, h))
            self.frame_roots.setdefault(frame, []).append(h)
            self._mark(h, self.root_known, STAGE_ROOT)

    def _mark(self, start: str, marked: set[str], stage: int) -> None:
        if start in marked:
            return
        events = self.chain.events
        marked.add(start)
        queue = deque([start])
        newly = [start]
        while queue:
            x = queue.popleft()
            for p in events[x].parents:
                if p not in marked:
                    marked.add(p)
                    newly.append(p)
                    queue.append(p)
        if self.on_stage is not None:
            for x in newly:
                self.on_stage(x, stage)

    # -- Clotho / Atropos ------------------------------------------------------------

    def _decide_root(self, r: str, i: int, settled: list[int]) -> bool | None:
        chain = self.chain
        if r in chain.fork_members:
            return False
        stakes = self.stakes
        W1 = stakes.total(i + 1)
        nxt = self.root_graph.by_frame.get(i + 1, {})
        events = chain.events
        clock = chain._clock
        ev_r = events[r]
        rc, rs = ev_r.creator, ev_r.seq
        witnesses = [y for y in nxt.values() if clock[y].get(rc, -1) >= rs]
        # a root only sees witnesses processed before it, so one that fell
        # short once never needs another look
        log = self._root_log
        start = max(self._yes_cursor.get(r, 0), self._frame_start.get(i + 2, len(log)))
        self._yes_cursor[r] = len(log)
        if witnesses:
            forks = chain.fork_members
            plain = []
            forked = []
            for y in witnesses:
                ev_y = events[y]
                w = stakes.weight(ev_y.creator, i + 1)
                if y in forks:
                    forked.append((y, w))
                else:
                    plain.append((ev_y.creator, ev_y.seq, w))
            for idx in range(start, len(log)):
                j, z = log[idx]
                if j < i + 2:
                    continue
                cz = clock[z]
                seen = sum(w for c, sq, w in plain if cz.get(c, -1) >= sq)
                if forked:
                    seen += sum(w for y, w in forked if chain.reaches(z, y))
                if is_supermajority(seen, W1):
                    return True
        against = 0
        for c in settled:
            y = nxt.get(c)
            if y is None or clock[y].get(rc, -1) < rs:
                against += stakes.weight(c, i + 1)
        if 3 * against >= W1:
            return False
        return None

    def _decide_frames(self) -> list[str]:
        finalized: list[str] = []
        rg = self.root_graph
        # verdicts and settled creators only move when new roots appear
        if len(rg.roots) == self._roots_at_last_decide:
            return finalized
        self._roots_at_last_decide = len(rg.roots)
        while True:
            i = self.next_frame
            # without a frame i+2 root no YES is possible, and a frame closes
            # only once every root is decided, so waiting loses nothing
            if i + 2 not in rg.by_frame:
                break
            W1 = self.stakes.total(i + 1)
            settled = [c for c in self.creators if self.creator_max_frame.get(c, 0) >= i + 1]
            if 3 * sum(self.stakes.weight(c, i + 1) for c in settled) < W1:
                break
            pending = False
            for r in sorted(rg.by_frame.get(i, {}).values()):
                if r in self.decided:
                    continue
                verdict = self._decide_root(r, i, settled)
                if verdict is None:
                    pending = True
                else:
                    self.decided[r] = verdict
                    if verdict:
                        self.finality.clothos.add(r)
                        self._mark(r, self.clotho_known, STAGE_CLOTHO)
            if pending:
                break
            chosen = [r for r in rg.by_frame.get(i, {}).values() if self.decided.get(r)]
            before = len(self.finality.ordered)
            state, done = topo_sort(
                chosen, self.chain, self.layers.phi, self.finality, self.chain.fork_members, inplace=True
            )
            state = finalize_atropos(state, done, self.chain, inplace=True)
            self.finality = state
            if self.on_stage is not None:
                for h in state.ordered[before:]:
                    self.on_stage(h, STAGE_FINAL)
            finalized.extend(h for h in done if h in state.position)
            self.next_frame += 1
        return finalized

    # -- queries ----------------------------------------------------------------------

    @property
    def processed(self) -> set[str]:
        return set(self.frame)

    def is_root(self, h: str) -> bool:
        return h in self.root_graph.roots

    def flagtable(self, h: str) -> Flagtable:
        base = max(self.bases[h], 1)
        events = self.chain.events
        return Flagtable(
            {r: (events[r].creator, self.stakes.weight(events[r].creator, base)) for r in self.flagtables[h].values()}
        )

    @property
    def max_frame(self) -> int:
        return max(self.root_graph.by_frame, default=0)

    def annotation(self, h: str) -> tuple:
        """Everything consensus derives for ``h``; equal across honest nodes."""
        return (
            self.layers.phi[h],
            self.frame[h],
            self.is_root(h),
            tuple(sorted(self.flagtables[h].items())),
            self.scores[h],
            self.decided.get(h),
        )


# -- operation-level wrappers ---------------------------------------------------------


def update_flagtable(engine: ConsensusEngine, event_hash: str) -> Flagtable:
    """Flagtable of an event whose parents the engine has already processed."""
    engine._layer_new()
    base, table = engine.flagtable_of(event_hash)
    events = engine.chain.events
    weight_frame = max(base, 1)
    return Flagtable(
        {r: (events[r].creator, engine.stakes.weight(events[r].creator, weight_frame)) for r in table.values()}
    )


def build_root_graph(engine: ConsensusEngine, final: bool = True) -> RootGraph:
    engine.compute(final=final)
    return engine.root_graph


def assign_frames(engine: ConsensusEngine) -> dict[str, int]:
    return dict(engine.root_graph.frame_of)


def assign_frames_nonroot(engine: ConsensusEngine) -> dict[str, int]:
    return {h: f for h, f in engine.frame.items() if h not in engine.root_graph.roots}


def select_clothos(engine: ConsensusEngine) -> set[str]:
    return {r for r, yes in engine.decided.items() if yes}


def confirmation_status(engine: ConsensusEngine, event_hash: str) -> int:
    """Highest confirmation stage reached by an event (2 once it is in the chain)."""
    if event_hash not in engine.chain.events:
        raise UnknownEvent(event_hash)
    if event_hash in engine.finality.position:
        return STAGE_FINAL
    if event_hash in engine.clotho_known:
        return STAGE_CLOTHO
    if event_hash in engine.root_known:
        return STAGE_ROOT
    return STAGE_BATCHED


def finality_lines(engine: ConsensusEngine) -> list[str]:
    """Finality report: position, hash, creator, layer, frame, lamport, atropos flag."""
    chain = engine.chain
    atropos = set(engine.finality.main_chain)
    out = []
    for pos, h in enumerate(engine.finality.ordered):
        ev = chain.events[h]
        out.append(
            f"{pos}\t{h}\t{ev.creator}\t{engine.layers.phi[h]}\t{engine.frame[h]}\t{ev.lamport}\t{int(h in atropos)}"
        )
    return out
