"""Simulation configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

__all__ = ["ByzantineSpec", "StakeChange", "SimConfig", "PEER_STRATEGIES", "ConfigError"]

PEER_STRATEGIES = ("uniform-random", "stake-proportional", "least-used", "most-used", "balanced")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ByzantineSpec:
    """``forker`` creates ``w_c`` sibling events with probability ``fork_prob`` per
    round; ``withholder`` never broadcasts its own events."""

    kind: str
    w_c: int = 2
    fork_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("forker", "withholder"):
            raise ConfigError(f"unknown byzantine behaviour {self.kind!r}")
        if self.kind == "forker" and self.w_c < 2:
            raise ConfigError("a forker needs w_c >= 2")
        if not 0.0 <= self.fork_prob <= 1.0:
            raise ConfigError("fork_prob must lie in [0, 1]")


@dataclass(frozen=True)
class StakeChange:
    node: int
    stake: int
    effective_frame: int
    announce_tick: int = 0


@dataclass
class SimConfig:
    n: int = 5
    k: int = 3
    stakes: list[int] = field(default_factory=list)
    byzantine: dict[int, ByzantineSpec] = field(default_factory=dict)
    peer_strategy: str = "uniform-random"
    delay_ticks: tuple[int, int] = (1, 5)
    seed: int = 0
    max_ticks: int = 2000
    layering: str = "lpl"
    cg_width: int | None = None
    stake_sync_period_frames: int = 20
    settle_layers: int = 10
    stake_changes: list[StakeChange] = field(default_factory=list)
    quiesce_ticks: int = 3000
    check_every: int = 1

    def __post_init__(self) -> None:
        if not self.stakes:
            self.stakes = [1] * self.n
        self.delay_ticks = tuple(self.delay_ticks)  # type: ignore[assignment]
        self.validate()

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if self.n < self.k:
            raise ConfigError(f"n ({self.n}) must be at least k ({self.k})")
        if len(self.stakes) != self.n:
            raise ConfigError("stakes must list one validating power per node")
        if any(int(s) != s or s < 0 for s in self.stakes) or sum(self.stakes) <= 0:
            raise ConfigError("stakes must be non-negative integers with a positive total")
        for node in self.byzantine:
            if not 0 <= node < self.n:
                raise ConfigError(f"byzantine node {node} out of range")
        if self.peer_strategy not in PEER_STRATEGIES:
            raise ConfigError(f"unknown peer strategy {self.peer_strategy!r}")
        lo, hi = self.delay_ticks
        if not 1 <= lo <= hi:
            raise ConfigError("delay_ticks must satisfy 1 <= min <= max")
        if self.max_ticks < 1:
            raise ConfigError("max_ticks must be positive")
        if self.layering not in ("lpl", "cg"):
            raise ConfigError("layering must be 'lpl' or 'cg'")
        if self.layering == "cg" and (self.cg_width is None or self.cg_width < 1):
            raise ConfigError("cg layering needs a positive width")
        if self.stake_sync_period_frames < 1:
            raise ConfigError("stake_sync_period_frames must be positive")
        if self.settle_layers < 0:
            raise ConfigError("settle_layers must be non-negative")
        for ch in self.stake_changes:
            if not 0 <= ch.node < self.n:
                raise ConfigError(f"stake change for unknown node {ch.node}")
            if ch.effective_frame < 1 or ch.effective_frame % self.stake_sync_period_frames:
                raise ConfigError("stake changes take effect on a checkpoint frame")
            if ch.stake < 0:
                raise ConfigError("stake must be non-negative")

    @property
    def honest(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.byzantine]

    @property
    def total_power(self) -> int:
        return sum(self.stakes)

    @property
    def faulty_power(self) -> int:
        return sum(self.stakes[i] for i in self.byzantine)

    @property
    def bft_bounded(self) -> bool:
        """Faulty validating power below a third of the total."""
        return 3 * self.faulty_power < self.total_power

    def to_dict(self) -> dict:
        data = asdict(self)
        data["byzantine"] = {str(k): asdict(v) for k, v in sorted(self.byzantine.items())}
        data["delay_ticks"] = list(self.delay_ticks)
        return data

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
