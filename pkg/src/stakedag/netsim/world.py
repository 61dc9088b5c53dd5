"""The deterministic world loop and the run report."""

from __future__ import annotations

import gc
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any

from ..consensus import finality_lines
from .config import SimConfig
from .node import Node, SimMessage
from .verify import PrefixMonitor, Verdicts, check_confirmations, check_forks, check_soundness, compare_pair, snapshot

__all__ = ["World", "SimReport", "run_simulation"]


@dataclass
class SimReport:
    config_digest: str
    config: dict[str, Any]
    finality: dict[str, list[str]]
    fork_proofs: dict[str, list[list[str]]]
    verdicts: dict[str, bool]
    details: dict[str, list[str]]
    frames: dict[str, int]
    frames_mid: dict[str, int]
    messages: int
    ticks: int
    forks_created: int
    log_nodes: dict[str, Node] = field(default_factory=dict, repr=False, compare=False)

    @property
    def logs(self) -> dict[str, list[str]]:
        """Per-node event logs, rendered on demand."""
        return {k: n.log for k, n in self.log_nodes.items()}

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_digest": self.config_digest,
            "config": self.config,
            "finality": self.finality,
            "fork_proofs": self.fork_proofs,
            "verdicts": self.verdicts,
            "details": self.details,
            "frames": self.frames,
            "frames_mid": self.frames_mid,
            "messages": self.messages,
            "ticks": self.ticks,
            "forks_created": self.forks_created,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, separators=(",", ": ")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        return cls(**json.loads(text))


class World:
    def __init__(self, config: SimConfig) -> None:
        config.validate()
        self.config = config
        self.tick = 0
        self.net_rng = random.Random(f"{config.seed}-net")
        self._queue: list[tuple[int, int, SimMessage]] = []
        self._msg_seq = 0
        self.messages = 0
        self.nodes = [Node(i, config, self) for i in range(config.n)]
        self.honest = [n for n in self.nodes if n.honest]
        self.monitor = PrefixMonitor()
        self.check_rng = random.Random(f"{config.seed}-check")
        self.frames_mid: dict[str, int] = {}
        self.verdicts = Verdicts()

    def send(self, frm: int, to: int, kind: str, body: Any) -> None:
        lo, hi = self.config.delay_ticks
        when = self.tick + self.net_rng.randint(lo, hi)
        self._msg_seq += 1
        self.messages += 1
        heapq.heappush(self._queue, (when, self._msg_seq, SimMessage(frm, to, when, kind, body)))

    def _deliver_due(self) -> None:
        queue = self._queue
        nodes = self.nodes
        while queue and queue[0][0] <= self.tick:
            _, _, msg = heapq.heappop(queue)
            nodes[msg.to].handle(msg)

    def _announce_stakes(self) -> None:
        for ch in self.config.stake_changes:
            if ch.announce_tick == self.tick:
                self.nodes[ch.node].apply_stakes({(ch.node, ch.effective_frame): ch.stake})

    def step(self, create: bool = True) -> None:
        self._announce_stakes()
        self._deliver_due()
        for node in self.nodes:
            node.tick(self.tick, create=create)
        if self.config.check_every and self.tick % self.config.check_every == 0:
            self.monitor.observe(self.tick, self.honest)
        self.tick += 1

    def converged(self) -> bool:
        ref = self.honest[0].chain
        for node in self.honest[1:]:
            if len(node.chain) != len(ref):
                return False
        if any(n.pending for n in self.honest):
            return False
        keys = set(ref.events)
        return all(set(n.chain.events) == keys for n in self.honest[1:])

    def pairwise(self, label: str) -> None:
        honest = self.honest
        merged: dict[str, list[str]] = {}
        snaps = [snapshot(n) for n in honest]
        shared = set(snaps[0]).intersection(*snaps[1:]) if snaps else set()
        probes = self.check_rng.sample(sorted(shared), min(4, len(shared)))
        cache: dict[tuple[int, str], set[str]] = {}
        for i, a in enumerate(honest):
            for j in range(i + 1, len(honest)):
                b = honest[j]
                found = compare_pair(
                    a, b, self.check_rng, snaps=(snaps[i], snaps[j]), probes=probes, ancestry_cache=cache
                )
                for name, probs in found.items():
                    merged.setdefault(name, []).extend(f"{label} {a.id}/{b.id}: {p}" for p in probs)
        for name, probs in merged.items():
            self.verdicts.record(name, probs)

    def run(self) -> SimReport:
        cfg = self.config
        mid = cfg.max_ticks // 2
        while self.tick < cfg.max_ticks:
            self.step(create=True)
            if self.tick == mid:
                self.frames_mid = {str(n.id): n.engine.max_frame for n in self.honest}
                self.pairwise("mid")
        quiet = 0
        while quiet < cfg.quiesce_ticks and not self.converged():
            self.step(create=False)
            quiet += 1
        for node in self.honest:
            node.compute(final=True)
        self.monitor.observe(self.tick, self.honest)
        return self.report()

    def report(self) -> SimReport:
        cfg = self.config
        v = self.verdicts
        honest = self.honest
        v.record("prefix-all-ticks", self.monitor.violations)
        self.pairwise("final")
        converged = self.converged()
        eq = []
        if not converged:
            eq.append("honest chains differ after quiescence")
        else:
            ref = honest[0].engine.finality
            for n in honest[1:]:
                if n.engine.finality.ordered != ref.ordered or n.engine.finality.main_chain != ref.main_chain:
                    eq.append(f"node {n.id} final order differs from node {honest[0].id}")
        v.record("quiescence-equal", eq)
        v.record("root-soundness", [p for n in honest for p in check_soundness(n, self.check_rng)])
        v.record("main-chain-nonempty", [f"node {n.id}" for n in honest if not n.engine.finality.main_chain])
        for name, probs in check_forks(honest).items():
            v.record(name, probs)
        forks_created = sum(n.forks_created for n in self.nodes)
        if forks_created:
            v.record(
                "fork-proof-recorded",
                [] if any(n.chain.fork_proofs for n in honest) else ["no honest node holds a fork proof"],
            )
        v.record("confirmations", [f"node {n.id} {p}" for n in honest for p in check_confirmations(n)])
        iters = [
            f"node {n.id}" for n in self.nodes if sum(n.counters.values()) != n.iterations * (cfg.k - 1)
        ]
        v.record("peer-counters", iters)
        frames = {str(n.id): n.engine.max_frame for n in honest}
        if not cfg.byzantine and self.frames_mid:
            v.record(
                "liveness",
                [f"node {k}" for k, f in frames.items() if f <= self.frames_mid.get(k, 0)],
            )
        proofs = {}
        for n in honest:
            uniq = sorted({(p.normalized().event_a, p.normalized().event_b, p.creator) for p in n.chain.fork_proofs})
            proofs[str(n.id)] = [[str(c), a, b] for a, b, c in uniq]
        return SimReport(
            config_digest=cfg.digest(),
            config=cfg.to_dict(),
            finality={str(n.id): finality_lines(n.engine) for n in honest},
            fork_proofs=proofs,
            verdicts=dict(sorted(v.results.items())),
            details={k: v.details[k] for k in sorted(v.details)},
            frames=frames,
            frames_mid=self.frames_mid,
            messages=self.messages,
            ticks=self.tick,
            forks_created=forks_created,
            log_nodes={str(n.id): n for n in self.nodes},
        )


def run_simulation(config: SimConfig) -> SimReport:
    # A run allocates millions of small, mostly acyclic objects; a larger
    # young-generation threshold keeps the cycle collector from rescanning
    # them over and over.
    old = gc.get_threshold()
    gc.set_threshold(200_000, 50, 1000)
    try:
        return World(config).run()
    finally:
        gc.set_threshold(*old)
