"""Event and stake synchronisation between two nodes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from ..dag import EventBlock, SOperaChain

__all__ = ["StakeBook", "sync_events", "sync_stakes"]


def sync_events(
    requester_known: Mapping[int, int],
    responder: SOperaChain,
    requester_tops: Mapping[int, str] | None = None,
) -> list[EventBlock]:
    """Every responder event past the requester's known top seq, by (lamport, hash).

    When ``requester_tops`` is given and the requester's top for a creator is
    not the responder's event at that seq, the responder's events at that seq
    are sent too, which exposes equivocation the seq map alone cannot see.
    """
    out = []
    events = responder.events
    for creator, hashes in responder.creator_index().items():
        known = requester_known.get(creator, -1)
        floor = known
        if requester_tops is not None and known >= 0:
            top = requester_tops.get(creator)
            if top not in events or responder.at_seq(creator, known) != [top]:
                floor = known - 1
        linear = creator not in responder.forked_creators
        for h in reversed(hashes):
            ev = events[h]
            if ev.seq > floor:
                if ev.seq > known or h != (requester_tops or {}).get(creator):
                    out.append(ev)
            elif linear:
                # an unforked creator's events are stored in seq order
                break
    out.sort(key=lambda e: (e.lamport, e.hash))
    return out


@dataclass
class StakeBook:
    """Validating power per creator, stamped with the frame it takes effect.

    Base powers apply from frame 0.  A change keyed ``(node, frame)`` applies
    from that checkpoint frame onward.
    """

    base: list[int]
    entries: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._cache: dict[int, dict[int, int]] = {}
        self._base = dict(enumerate(self.base))
        self._base_total = sum(self.base)

    def _powers(self, frame: int) -> dict[int, int]:
        cached = self._cache.get(frame)
        if cached is None:
            powers = dict(enumerate(self.base))
            best: dict[int, int] = {}
            for (node, eff), stake in self.entries.items():
                if eff <= frame and eff >= best.get(node, -1):
                    best[node] = eff
                    powers[node] = stake
            cached = self._cache[frame] = powers
        return cached

    def powers(self, frame: int) -> Mapping[int, int]:
        if not self.entries:
            return self._base
        return self._powers(frame)

    def weight(self, creator: int, frame: int) -> int:
        if not self.entries:
            return self._base.get(creator, 0)
        return self._powers(frame).get(creator, 0)

    def total(self, frame: int) -> int:
        if not self.entries:
            return self._base_total
        return sum(self._powers(frame).values())

    def apply(self, updates: Mapping[tuple[int, int], int]) -> list[tuple[int, int]]:
        """Merge updates; returns the keys that actually changed."""
        changed = [k for k, v in updates.items() if self.entries.get(k) != v]
        for k in changed:
            self.entries[k] = updates[k]
        if changed:
            self._cache.clear()
        return changed


def sync_stakes(
    requester_map: Mapping[tuple[int, int], int], responder: StakeBook
) -> dict[tuple[int, int], int]:
    return {k: v for k, v in responder.entries.items() if requester_map.get(k) != v}
