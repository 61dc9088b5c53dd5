"""Rebuild a node's finality report from its event log.

A node log is line oriented.  The first line is the ``H`` header carrying the
parameters consensus depends on; after it come ``E`` lines (an event inserted,
in dag-core log format), ``S`` lines (a stake entry learned) and ``C`` lines
(a consensus pass ran, with the chain size and whether it was the final pass).
Replaying the lines in order and running consensus at each marker reproduces
the node's engine state exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

from ..consensus import ConsensusEngine, finality_lines
from ..dag import ChainError, SOperaChain, event_from_log_line
from ..netsim.node import parse_log_header
from ..netsim.sync import StakeBook

__all__ = ["CorruptLog", "ReplayResult", "replay_log"]


class CorruptLog(ValueError):
    """A log line could not be parsed or applied; ``position`` is 1-based."""

    def __init__(self, position: int, reason: str) -> None:
        super().__init__(f"line {position}: {reason}")
        self.position = position
        self.reason = reason


@dataclass
class ReplayResult:
    finality: list[str] = field(default_factory=list)
    events: int = 0
    passes: int = 0


def _engine_from_header(params: dict[str, Any]) -> tuple[SOperaChain, StakeBook, ConsensusEngine]:
    chain = SOperaChain(k=params["k"], fork_policy="retain")
    book = StakeBook(list(params["stakes"]))
    layering: Any = "lpl" if params["layering"] == "lpl" else ("cg", params["cg_width"])
    engine = ConsensusEngine(
        chain, book, range(params["n"]), settle_layers=params["settle_layers"], layering=layering
    )
    return chain, book, engine


def replay_log(lines: Iterable[str]) -> ReplayResult:
    """Re-insert logged events, re-run consensus at each marker, return the report."""
    result = ReplayResult()
    chain = book = engine = None
    for pos, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line:
            continue
        if engine is None:
            try:
                chain, book, engine = _engine_from_header(parse_log_header(line))
            except (ValueError, KeyError) as exc:
                raise CorruptLog(pos, f"bad header ({exc})") from None
            continue
        kind, _, rest = line.partition("\t")
        try:
            if kind == "E":
                chain.insert(event_from_log_line(rest))
                result.events += 1
            elif kind == "S":
                node, frame, stake = (int(x) for x in rest.split("\t"))
                book.apply({(node, frame): stake})
            elif kind == "C":
                size, final = (int(x) for x in rest.split("\t"))
                if size != len(chain):
                    raise ValueError(f"marker expects {size} events, log has {len(chain)}")
                engine.compute(final=bool(final))
                result.passes += 1
            else:
                raise ValueError(f"unknown record type {kind!r}")
        except (ValueError, ChainError) as exc:
            raise CorruptLog(pos, str(exc)) from None
    if engine is not None:
        result.finality = finality_lines(engine)
    return result
