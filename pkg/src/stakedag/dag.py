"""Event blocks and the local S-OPERA chain.

A chain stores event blocks keyed by content hash, tracks each creator's top
event, answers ancestry queries and records equivocation (fork) evidence.
Edges run child -> parent: an event references its self-parent and k-1
other-parents, all of which must already be stored.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import json
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

__all__ = [
    "EventBlock",
    "ForkProof",
    "SOperaChain",
    "InsertOutcome",
    "ChainError",
    "InvalidEvent",
    "MissingParent",
    "ForkDetected",
    "UnknownEvent",
    "hash_event",
    "make_event",
    "create_event",
    "insert_event",
    "happened_before",
    "detect_forks_pairwise",
    "event_to_log_line",
    "event_from_log_line",
]


class ChainError(Exception):
    """Base class for chain-level failures."""


class InvalidEvent(ChainError):
    def __init__(self, reason: str, event_hash: str | None = None) -> None:
        super().__init__(f"{reason}: {event_hash}" if event_hash else reason)
        self.reason = reason
        self.event_hash = event_hash


class MissingParent(ChainError):
    """Retryable: the block references events this chain has not stored yet."""

    def __init__(self, event_hash: str, missing: Sequence[str]) -> None:
        super().__init__(f"missing-parent: {event_hash} needs {list(missing)}")
        self.event_hash = event_hash
        self.missing = tuple(missing)


class ForkDetected(ChainError):
    def __init__(self, proof: "ForkProof") -> None:
        super().__init__(f"fork-detected: creator {proof.creator}")
        self.proof = proof


class UnknownEvent(ChainError, KeyError):
    pass


def _field(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def _canonical_bytes(
    creator: int,
    seq: int,
    self_parent: str | None,
    other_parents: Sequence[str],
    lamport: int,
    payload: Sequence[str],
) -> bytes:
    # length-prefixed fields in declared order; lists carry their own count
    parts = [
        _field(str(creator).encode()),
        _field(str(seq).encode()),
        _field((self_parent or "").encode()),
        _field(str(len(other_parents)).encode()),
        *(_field(p.encode()) for p in other_parents),
        _field(str(lamport).encode()),
        _field(str(len(payload)).encode()),
        *(_field(tx.encode()) for tx in payload),
    ]
    return b"".join(parts)


def hash_event(
    creator: int,
    seq: int,
    self_parent: str | None,
    other_parents: Sequence[str],
    lamport: int,
    payload: Sequence[str],
) -> str:
    """SHA-256 hex digest of the canonical serialization of an event."""
    return _cached_hash(creator, seq, self_parent, tuple(other_parents), lamport, tuple(payload))


@functools.lru_cache(maxsize=1 << 16)
def _cached_hash(
    creator: int,
    seq: int,
    self_parent: str | None,
    other_parents: tuple[str, ...],
    lamport: int,
    payload: tuple[str, ...],
) -> str:
    # every simulated node re-verifies the same blocks, so memoize the digest
    data = _canonical_bytes(creator, seq, self_parent, other_parents, lamport, payload)
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True, slots=True)
class EventBlock:
    creator: int
    seq: int
    self_parent: str | None
    other_parents: tuple[str, ...]
    lamport: int
    payload: tuple[str, ...]
    hash: str
    # self-parent first, then other-parents; derived, so excluded from equality
    parents: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.self_parent is None:
            parents = tuple(self.other_parents)
        else:
            parents = (self.self_parent, *self.other_parents)
        object.__setattr__(self, "parents", parents)

    @property
    def is_leaf(self) -> bool:
        return self.seq == 0

    def computed_hash(self) -> str:
        return hash_event(
            self.creator, self.seq, self.self_parent, self.other_parents, self.lamport, self.payload
        )

    def short(self) -> str:
        return f"{self.creator}:{self.seq}:{self.hash[:8]}"


def make_event(
    creator: int,
    seq: int,
    self_parent: str | None,
    other_parents: Iterable[str],
    lamport: int,
    payload: Iterable[str] = (),
) -> EventBlock:
    others = tuple(other_parents)
    txs = tuple(payload)
    digest = hash_event(creator, seq, self_parent, others, lamport, txs)
    return EventBlock(creator, seq, self_parent, others, lamport, txs, digest)


@dataclass(frozen=True, slots=True)
class ForkProof:
    """Two events by one creator, neither a self-ancestor of the other."""

    creator: int
    event_a: str
    event_b: str

    def __post_init__(self) -> None:
        if self.event_a == self.event_b:
            raise ValueError("a fork needs two distinct events")

    def normalized(self) -> "ForkProof":
        a, b = sorted((self.event_a, self.event_b))
        return ForkProof(self.creator, a, b)

    @property
    def members(self) -> tuple[str, str]:
        return (self.event_a, self.event_b)


class InsertOutcome(enum.Enum):
    ACCEPTED = "accepted"
    DUPLICATE = "duplicate"
    FORK_RETAINED = "fork-retained"


@dataclass
class SOperaChain:
    """A node's local DAG of event blocks.

    ``fork_policy="reject"`` keeps the first-stored sibling and refuses later
    ones.  ``"retain"`` stores every valid sibling and only records the proof,
    so that honest events built on either sibling remain storable.
    """

    k: int = 3
    fork_policy: str = "reject"
    events: dict[str, EventBlock] = field(default_factory=dict)
    order: list[str] = field(default_factory=list)
    top: dict[int, str] = field(default_factory=dict)
    children: dict[str, list[str]] = field(default_factory=dict)
    fork_proofs: list[ForkProof] = field(default_factory=list)
    fork_members: set[str] = field(default_factory=set)
    forked_creators: set[int] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.fork_policy not in ("reject", "retain"):
            raise ValueError(f"unknown fork policy {self.fork_policy!r}")
        self._by_seq: dict[tuple[int, int], list[str]] = {}
        self._clock: dict[str, dict[int, int]] = {}
        self._by_creator: dict[int, list[str]] = {}

    # -- queries -------------------------------------------------------------

    def __contains__(self, event_hash: object) -> bool:
        return event_hash in self.events

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[EventBlock]:
        return (self.events[h] for h in self.order)

    def get(self, event_hash: str) -> EventBlock:
        try:
            return self.events[event_hash]
        except KeyError:
            raise UnknownEvent(event_hash) from None

    def by_creator(self, creator: int) -> list[str]:
        return list(self._by_creator.get(creator, ()))

    def creator_index(self) -> dict[int, list[str]]:
        """Creator -> hashes in insertion order (live view, do not mutate)."""
        return self._by_creator

    def at_seq(self, creator: int, seq: int) -> list[str]:
        return list(self._by_seq.get((creator, seq), ()))

    def clock(self, event_hash: str) -> dict[int, int]:
        """Highest seq per creator inside the event's ancestry (inclusive)."""
        return self._clock[event_hash]

    def known_map(self) -> dict[int, int]:
        """Creator -> seq of its top event, as sent in a sync request."""
        return {c: self.events[h].seq for c, h in self.top.items()}

    def reaches(self, a: str, b: str) -> bool:
        """True iff ``b`` is ``a`` or one of its ancestors."""
        if a == b:
            return True
        # An event that is alone at its (creator, seq) is the self-ancestor at
        # that seq of every later event by its creator, so the clock is exact.
        if b not in self.fork_members:
            ev_b = self.events[b]
            return self._clock[a].get(ev_b.creator, -1) >= ev_b.seq
        return b in self.ancestry(a)

    def ancestry(self, event_hash: str, stop: set[str] | None = None) -> set[str]:
        """All events reachable from ``event_hash`` including itself.

        Traversal does not descend below events in ``stop``; those events are
        excluded from the result.
        """
        seen: set[str] = set()
        if stop and event_hash in stop:
            return seen
        queue = deque([event_hash])
        seen.add(event_hash)
        events = self.events
        while queue:
            h = queue.popleft()
            for p in events[h].parents:
                if p in seen or (stop is not None and p in stop):
                    continue
                seen.add(p)
                queue.append(p)
        return seen

    def is_self_ancestor(self, a: str, b: str) -> bool:
        """True iff ``a`` lies on ``b``'s self-parent chain (strictly below)."""
        ev_a, ev_b = self.events[a], self.events[b]
        if ev_a.creator != ev_b.creator or ev_a.seq >= ev_b.seq:
            return False
        cur: str | None = b
        while cur is not None:
            ev = self.events[cur]
            if ev.seq == ev_a.seq:
                return cur == a
            cur = ev.self_parent
        return False

    # -- mutation --------------------------------------------------------------

    def validate(self, block: EventBlock) -> None:
        """Structural checks that do not depend on parents being present."""
        if block.computed_hash() != block.hash:
            raise InvalidEvent("bad-hash", block.hash)
        if block.seq < 0 or block.lamport < 0:
            raise InvalidEvent("negative-field", block.hash)
        if block.seq == 0:
            if block.self_parent is not None or block.other_parents:
                raise InvalidEvent("leaf-with-parents", block.hash)
            if block.lamport != 0:
                raise InvalidEvent("bad-lamport", block.hash)
            return
        if block.self_parent is None:
            raise InvalidEvent("missing-self-parent", block.hash)
        if len(block.other_parents) != self.k - 1:
            raise InvalidEvent("wrong-reference-count", block.hash)
        if len(set(block.parents)) != len(block.parents):
            raise InvalidEvent("duplicate-reference", block.hash)

    def insert(self, block: EventBlock) -> InsertOutcome:
        if block.hash in self.events:
            return InsertOutcome.DUPLICATE
        self.validate(block)
        missing = [p for p in block.parents if p not in self.events]
        if missing:
            raise MissingParent(block.hash, missing)
        events = self.events
        if block.seq > 0:
            sp = events[block.self_parent]  # type: ignore[index]
            if sp.creator != block.creator or sp.seq + 1 != block.seq:
                raise InvalidEvent("bad-self-parent", block.hash)
            creators = {events[p].creator for p in block.other_parents}
            if len(creators) != len(block.other_parents) or block.creator in creators:
                raise InvalidEvent("duplicate-parent-creator", block.hash)
            expected = 1 + max(events[p].lamport for p in block.parents)
            if block.lamport != expected:
                raise InvalidEvent("bad-lamport", block.hash)

        siblings = self._by_seq.get((block.creator, block.seq), [])
        outcome = InsertOutcome.ACCEPTED
        if siblings:
            proofs = [ForkProof(block.creator, s, block.hash) for s in siblings]
            self.fork_proofs.extend(proofs)
            self.forked_creators.add(block.creator)
            self.fork_members.update(siblings)
            self.fork_members.add(block.hash)
            if self.fork_policy == "reject":
                raise ForkDetected(proofs[0])
            outcome = InsertOutcome.FORK_RETAINED

        self._store(block)
        return outcome

    def _store(self, block: EventBlock) -> None:
        h = block.hash
        self.events[h] = block
        self.order.append(h)
        self.children[h] = []
        for p in block.parents:
            self.children[p].append(h)
        self._by_seq.setdefault((block.creator, block.seq), []).append(h)
        self._by_creator.setdefault(block.creator, []).append(h)

        if block.self_parent is None:
            vc: dict[int, int] = {}
        else:
            vc = dict(self._clock[block.self_parent])
        for p in block.other_parents:
            for c, s in self._clock[p].items():
                if vc.get(c, -1) < s:
                    vc[c] = s
        vc[block.creator] = block.seq
        self._clock[h] = vc

        cur = self.top.get(block.creator)
        if cur is None and block.seq == 0:
            self.top[block.creator] = h
        elif cur is not None and block.self_parent == cur:
            self.top[block.creator] = h

    def check_acyclic(self) -> bool:
        indeg = {h: len(ev.parents) for h, ev in self.events.items()}
        queue = deque(h for h, d in indeg.items() if d == 0)
        seen = 0
        while queue:
            h = queue.popleft()
            seen += 1
            for c in self.children[h]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        return seen == len(self.events)


def create_event(
    chain: SOperaChain,
    creator: int,
    peer_tops: Sequence[str] = (),
    payload: Iterable[str] = (),
) -> EventBlock:
    """Build the creator's next event on ``chain`` and insert it."""
    self_parent = chain.top.get(creator)
    if self_parent is None:
        if peer_tops:
            raise InvalidEvent("leaf-with-parents")
        block = make_event(creator, 0, None, (), 0, payload)
    else:
        if len(peer_tops) != chain.k - 1:
            raise InvalidEvent("wrong-reference-count")
        for p in peer_tops:
            if p not in chain.events:
                raise MissingParent("<new>", [p])
        creators = [chain.events[p].creator for p in peer_tops]
        if len(set(creators)) != len(creators) or creator in creators:
            raise InvalidEvent("duplicate-parent-creator")
        parent = chain.events[self_parent]
        lamport = 1 + max(chain.events[p].lamport for p in (self_parent, *peer_tops))
        block = make_event(creator, parent.seq + 1, self_parent, peer_tops, lamport, payload)
    chain.insert(block)
    return block


def insert_event(chain: SOperaChain, block: EventBlock) -> InsertOutcome:
    return chain.insert(block)


def happened_before(chain: SOperaChain, a: str, b: str) -> bool:
    """True iff ``a`` is a strict ancestor of ``b``."""
    for h in (a, b):
        if h not in chain.events:
            raise UnknownEvent(h)
    return a != b and chain.reaches(b, a)


def detect_forks_pairwise(chain: SOperaChain, creator: int) -> list[ForkProof]:
    hashes = chain.by_creator(creator)
    # self-ancestor path of every event, indexed by seq
    paths: dict[str, list[str]] = {}
    for h in sorted(hashes, key=lambda x: chain.events[x].seq):
        ev = chain.events[h]
        base = paths[ev.self_parent] if ev.self_parent is not None else []
        paths[h] = base + [h]
    proofs = []
    for i, a in enumerate(hashes):
        for b in hashes[i + 1 :]:
            lo, hi = sorted((a, b), key=lambda x: chain.events[x].seq)
            lo_seq = chain.events[lo].seq
            if paths[hi][lo_seq] != lo:
                proofs.append(ForkProof(creator, a, b).normalized())
    return sorted(proofs, key=lambda p: (p.event_a, p.event_b))


# -- event log records --------------------------------------------------------

def event_to_log_line(block: EventBlock) -> str:
    """creator, seq, lamport, hash, self_parent, other_parents, payload-size, payload."""
    return "\t".join(
        [
            str(block.creator),
            str(block.seq),
            str(block.lamport),
            block.hash,
            block.self_parent or "-",
            ",".join(block.other_parents) or "-",
            str(len(block.payload)),
            json.dumps(list(block.payload), separators=(",", ":")),
        ]
    )


def event_from_log_line(line: str) -> EventBlock:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 8:
        raise ValueError(f"expected 8 fields, got {len(parts)}")
    creator, seq, lamport, digest, sp, others, size, payload_json = parts
    payload = tuple(json.loads(payload_json))
    if len(payload) != int(size):
        raise ValueError("payload size mismatch")
    return EventBlock(
        creator=int(creator),
        seq=int(seq),
        self_parent=None if sp == "-" else sp,
        other_parents=() if others == "-" else tuple(others.split(",")),
        lamport=int(lamport),
        payload=payload,
        hash=digest,
    )
