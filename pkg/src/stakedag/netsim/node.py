"""A simulated node: local chain, consensus engine, peer sync and faults."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from ..consensus import STAGE_BATCHED, STAGE_SUBMITTED, ConsensusEngine
from ..dag import (
    EventBlock,
    InvalidEvent,
    MissingParent,
    SOperaChain,
    event_to_log_line,
    make_event,
)
from .config import ByzantineSpec, SimConfig
from .peers import select_peers
from .sync import StakeBook, sync_events, sync_stakes

if TYPE_CHECKING:
    from .world import World

__all__ = ["SimMessage", "Node", "log_header", "parse_log_header"]


def log_header(config: SimConfig) -> str:
    """First line of a node log: everything replay needs besides the events."""
    width = config.cg_width if config.layering == "cg" else 0
    stakes = ",".join(str(s) for s in config.stakes)
    return f"H\t{config.n}\t{config.k}\t{config.settle_layers}\t{config.layering}\t{width}\t{stakes}"


def parse_log_header(line: str) -> dict[str, Any]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 7 or parts[0] != "H":
        raise ValueError("missing log header")
    _, n, k, settle, layering, width, stakes = parts
    return {
        "n": int(n),
        "k": int(k),
        "settle_layers": int(settle),
        "layering": layering,
        "cg_width": int(width) or None,
        "stakes": [int(s) for s in stakes.split(",")],
    }


@dataclass(frozen=True)
class SimMessage:
    frm: int
    to: int
    deliver_at: int
    kind: str  # sync-request | sync-response | broadcast | stake-sync
    body: Any


@dataclass
class SyncRound:
    round_id: int
    peers: list[int]
    started: int
    responses: set[int] = field(default_factory=set)

    @property
    def complete(self) -> bool:
        return len(self.responses) == len(self.peers)


class Node:
    def __init__(self, node_id: int, config: SimConfig, world: "World") -> None:
        self.id = node_id
        self.config = config
        self.world = world
        self.behaviour: ByzantineSpec | None = config.byzantine.get(node_id)
        self.rng = random.Random(f"{config.seed}-{node_id}")
        self.chain = SOperaChain(k=config.k, fork_policy="retain")
        self.stake_book = StakeBook(list(config.stakes))
        layering: Any = "lpl" if config.layering == "lpl" else ("cg", config.cg_width)
        self.engine = ConsensusEngine(
            self.chain,
            self.stake_book,
            range(config.n),
            settle_layers=config.settle_layers,
            layering=layering,
            on_stage=self._on_stage,
        )
        self.counters: dict[int, int] = {}
        self.iterations = 0
        self.pending: dict[str, EventBlock] = {}
        self.round: SyncRound | None = None
        self._round_seq = 0
        # event entries stay as blocks until the log is read
        self._log: list[str | EventBlock] = []
        self._last_compute_len = -1
        self.mempool: list[str] = []
        self.tx_event: dict[str, str] = {}
        self.event_txs: dict[str, list[str]] = {}
        self.tx_stages: dict[str, list[int]] = {}
        self.forks_created = 0
        self.messages_sent = 0
        self._tx_seq = 0
        self._fork_snapshot: frozenset[str] = frozenset()
        self._log.append(log_header(config))

    # -- helpers --------------------------------------------------------------------

    @property
    def honest(self) -> bool:
        return self.behaviour is None

    @property
    def timeout(self) -> int:
        return 2 * self.config.delay_ticks[1] + 1

    @property
    def log(self) -> list[str]:
        return [e if isinstance(e, str) else "E\t" + event_to_log_line(e) for e in self._log]

    def send(self, to: int, kind: str, body: Any) -> None:
        self.messages_sent += 1
        self.world.send(self.id, to, kind, body)

    def _on_stage(self, event_hash: str, stage: int) -> None:
        for tx in self.event_txs.get(event_hash, ()):
            self.tx_stages[tx].append(stage)

    def _store(self, block: EventBlock) -> bool:
        """Insert a block; buffers it when parents are missing."""
        if block.hash in self.chain.events:
            return False
        try:
            self.chain.insert(block)
        except MissingParent:
            self.pending[block.hash] = block
            return False
        except InvalidEvent:
            return False
        self.pending.pop(block.hash, None)
        self._log.append(block)
        return True

    def receive_events(self, blocks: list[EventBlock]) -> None:
        progressed = False
        for b in blocks:
            progressed |= self._store(b)
        while progressed and self.pending:
            progressed = False
            events = self.chain.events
            ready = [b for b in self.pending.values() if all(p in events for p in b.parents)]
            ready.sort(key=lambda b: (b.lamport, b.hash))
            for b in ready:
                progressed |= self._store(b)
        if self.pending:
            events = self.chain.events
            for h in [h for h in self.pending if h in events]:
                del self.pending[h]

    def wanted(self) -> list[str]:
        events = self.chain.events
        want = {p for b in self.pending.values() for p in b.parents if p not in events and p not in self.pending}
        return sorted(want)

    def fork_known(self) -> frozenset[str]:
        members = self.chain.fork_members
        if len(members) != len(self._fork_snapshot):
            self._fork_snapshot = frozenset(members)
        return self._fork_snapshot

    # -- message handling ----------------------------------------------------------------

    def handle(self, msg: SimMessage) -> None:
        if msg.kind == "broadcast":
            self.receive_events([msg.body])
        elif msg.kind == "sync-request":
            round_id, known, tops, want, fork_known, stakes = msg.body
            blocks = sync_events(known, self.chain, tops)
            events = self.chain.events
            extra = {h for h in want if h in events}
            extra.update(h for h in self.chain.fork_members if h not in fork_known)
            have = {b.hash for b in blocks}
            blocks.extend(events[h] for h in sorted(extra - have))
            stake_diff = sync_stakes(stakes, self.stake_book)
            self.send(msg.frm, "sync-response", (round_id, blocks, stake_diff))
        elif msg.kind == "sync-response":
            round_id, blocks, stake_diff = msg.body
            self.receive_events(blocks)
            self.apply_stakes(stake_diff)
            if self.round is not None and self.round.round_id == round_id:
                self.round.responses.add(msg.frm)
        elif msg.kind == "stake-sync":
            self.apply_stakes(msg.body)
        else:
            raise ValueError(f"unknown message kind {msg.kind!r}")

    def apply_stakes(self, updates: dict[tuple[int, int], int]) -> None:
        for node, frame in self.stake_book.apply(updates):
            self._log.append(f"S\t{node}\t{frame}\t{updates[(node, frame)]}")

    # -- loop 1 -------------------------------------------------------------------------------

    def submit_tx(self) -> str:
        tx = f"tx-{self.id}-{self._tx_seq}"
        self._tx_seq += 1
        self.mempool.append(tx)
        self.tx_stages[tx] = [STAGE_SUBMITTED]
        return tx

    def _batch(self, block: EventBlock, txs: list[str]) -> None:
        self.event_txs[block.hash] = txs
        for tx in txs:
            self.tx_event[tx] = block.hash
            self.tx_stages[tx].append(STAGE_BATCHED)

    def start_round(self, tick: int) -> None:
        self._round_seq += 1
        exclude = self.chain.forked_creators if self.honest else ()
        peers = select_peers(
            self.id,
            self.config.n,
            self.config.peer_strategy,
            self.config.k - 1,
            self.rng,
            self.config.stakes,
            self.counters,
            exclude,
        )
        self.iterations += 1
        self.round = SyncRound(self._round_seq, peers, tick)
        body = (
            self._round_seq,
            self.chain.known_map(),
            dict(self.chain.top),
            self.wanted(),
            self.fork_known(),
            dict(self.stake_book.entries),
        )
        for p in peers:
            self.send(p, "sync-request", body)

    def create_leaf(self) -> EventBlock:
        txs = [self.submit_tx()]
        self.mempool.clear()
        block = make_event(self.id, 0, None, (), 0, txs)
        self._store(block)
        self._batch(block, txs)
        self.broadcast(block)
        return block

    def broadcast(self, block: EventBlock) -> None:
        if self.behaviour is not None and self.behaviour.kind == "withholder":
            return
        for j in range(self.config.n):
            if j != self.id:
                self.send(j, "broadcast", block)

    def create_from_round(self) -> EventBlock | None:
        assert self.round is not None
        chain = self.chain
        self_top = chain.top.get(self.id)
        if self_top is None:
            return None
        tops = []
        for p in self.round.peers:
            if self.honest and p in chain.forked_creators:
                return None
            t = chain.top.get(p)
            if t is None:
                return None
            tops.append(t)
        parents = (self_top, *tops)
        lamport = 1 + max(chain.events[h].lamport for h in parents)
        seq = chain.events[self_top].seq + 1
        txs = list(self.mempool)
        if self.behaviour is not None and self.behaviour.kind == "forker":
            if self.rng.random() < self.behaviour.fork_prob:
                return self._fork(seq, self_top, tops, lamport, txs)
        self.mempool.clear()
        block = make_event(self.id, seq, self_top, tops, lamport, txs)
        self._store(block)
        self._batch(block, txs)
        self.broadcast(block)
        return block

    def _fork(self, seq: int, self_top: str, tops: list[str], lamport: int, txs: list[str]) -> EventBlock:
        w_c = self.behaviour.w_c  # type: ignore[union-attr]
        siblings = [
            make_event(self.id, seq, self_top, tops, lamport, [*txs, f"fork-{j}"]) for j in range(w_c)
        ]
        self.mempool.clear()
        self.forks_created += 1
        self._store(siblings[0])
        others = [j for j in range(self.config.n) if j != self.id]
        for idx, j in enumerate(others):
            self.send(j, "broadcast", siblings[idx % w_c])
        return siblings[0]

    def tick(self, tick: int, create: bool = True) -> None:
        if tick == 0 and create:
            self.create_leaf()
            self.start_round(tick)
        elif self.round is None:
            self.start_round(tick)
        elif self.round.complete:
            if create:
                self.submit_tx()
                self.create_from_round()
            self.start_round(tick)
        elif tick - self.round.started > self.timeout:
            self.start_round(tick)
        if self.honest:
            self.compute(final=False)

    def compute(self, final: bool) -> None:
        """Run consensus and log a marker; a repeat pass over an unchanged chain is a no-op."""
        size = len(self.chain)
        if size == self._last_compute_len and not final:
            return
        self._last_compute_len = size
        self.engine.compute(final=final)
        self._log.append(f"C\t{size}\t{int(final)}")
