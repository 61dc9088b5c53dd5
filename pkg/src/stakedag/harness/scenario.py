"""Scenario files: a simulation config, an optional stake ledger and output paths.

Scenarios are YAML (JSON is accepted too, being a YAML subset).  Unknown keys
are rejected at every level so a typo fails loudly instead of silently
falling back to a default.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..netsim.config import ByzantineSpec, ConfigError, SimConfig, StakeChange
from ..staking import Account, StakeParams

__all__ = [
    "ScenarioError",
    "ByzantineModel",
    "StakeChangeModel",
    "SimModel",
    "AccountModel",
    "ParamsModel",
    "LedgerModel",
    "OutputModel",
    "Scenario",
    "load_scenario",
    "parse_scenario",
    "dump_scenario",
    "load_ledger",
]


class ScenarioError(ValueError):
    """Raised for unreadable, malformed or invalid scenario and ledger files."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ByzantineModel(_Strict):
    kind: Literal["forker", "withholder"]
    w_c: int = 2
    fork_prob: float = 0.5


class StakeChangeModel(_Strict):
    node: int
    stake: int
    effective_frame: int
    announce_tick: int = 0


class SimModel(_Strict):
    n: int = 5
    k: int = 3
    stakes: list[int] = Field(default_factory=list)
    byzantine: dict[int, ByzantineModel] = Field(default_factory=dict)
    peer_strategy: str = "uniform-random"
    delay_ticks: tuple[int, int] = (1, 5)
    seed: int = 0
    max_ticks: int = 2000
    layering: Literal["lpl", "cg"] = "lpl"
    cg_width: int | None = None
    stake_sync_period_frames: int = 20
    settle_layers: int = 10
    stake_changes: list[StakeChangeModel] = Field(default_factory=list)
    quiesce_ticks: int = 3000


class AccountModel(_Strict):
    id: str
    tokens: float
    tx_stake: float = 0.0
    stake: float = 0.0
    delegations: dict[str, float] = Field(default_factory=dict)
    gas: float = 0.0
    staked_day: int | None = None

    def to_account(self) -> Account:
        return Account(
            id=self.id,
            t=self.tokens,
            t_x=self.tx_stake,
            t_s=self.stake,
            t_d=dict(self.delegations),
            g=self.gas,
            staked_day=self.staked_day,
        )


class ParamsModel(_Strict):
    F: float | None = None
    delta_days: int | None = None
    lambda_days: int | None = None
    epsilon: float | None = None
    theta: float | None = None
    xi: float | None = None
    phi_commission: float | None = None
    mu: float | None = None
    T_s_min: float | None = None
    T_s_max: float | None = None
    M: float | None = None
    Q: float | None = None
    Pi: float | None = None
    Theta_tp: float | None = None
    Z: float | None = None
    reward_days: int | None = None

    def to_params(self) -> StakeParams:
        overrides = {k: v for k, v in self.model_dump().items() if v is not None}
        return StakeParams(**overrides)


class LedgerModel(_Strict):
    day: int = 1
    fees: float = 0.0
    spv_balance: float = 0.0
    params: ParamsModel = Field(default_factory=ParamsModel)
    accounts: list[AccountModel] = Field(default_factory=list)

    def to_accounts(self) -> list[Account]:
        return [a.to_account() for a in self.accounts]


class OutputModel(_Strict):
    out_dir: str = "out"
    report: str = "report.json"


class Scenario(_Strict):
    name: str = "scenario"
    sim: SimModel = Field(default_factory=SimModel)
    ledger: LedgerModel | None = None
    output: OutputModel = Field(default_factory=OutputModel)

    def to_sim_config(self, seed: int | None = None, ticks: int | None = None) -> SimConfig:
        """Build a validated simulator config, applying CLI overrides."""
        s = self.sim
        try:
            return SimConfig(
                n=s.n,
                k=s.k,
                stakes=list(s.stakes),
                byzantine={
                    node: ByzantineSpec(b.kind, b.w_c, b.fork_prob) for node, b in sorted(s.byzantine.items())
                },
                peer_strategy=s.peer_strategy,
                delay_ticks=tuple(s.delay_ticks),
                seed=s.seed if seed is None else seed,
                max_ticks=s.max_ticks if ticks is None else ticks,
                layering=s.layering,
                cg_width=s.cg_width,
                stake_sync_period_frames=s.stake_sync_period_frames,
                settle_layers=s.settle_layers,
                stake_changes=[
                    StakeChange(c.node, c.stake, c.effective_frame, c.announce_tick) for c in s.stake_changes
                ],
                quiesce_ticks=s.quiesce_ticks,
            )
        except ConfigError as exc:
            raise ScenarioError(f"invalid sim config: {exc}") from None


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def _read_mapping(text: str, source: str) -> dict[str, Any]:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: not valid YAML/JSON: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    return data


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    data = _read_mapping(text, source)
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(f"{source}: {_format_validation(exc)}") from None


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {p}: {exc.strerror}") from None
    return parse_scenario(text, str(p))


def dump_scenario(scenario: Scenario) -> str:
    """Canonical YAML text; parsing it yields an equal scenario."""
    data = scenario.model_dump(mode="json")
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)


def load_ledger(path: str | Path) -> LedgerModel:
    """Read a ledger from a standalone file or from a scenario's ``ledger`` section."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {p}: {exc.strerror}") from None
    data = _read_mapping(text, str(p))
    if "ledger" in data and "accounts" not in data:
        data = data["ledger"] or {}
    try:
        return LedgerModel.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(f"{p}: {_format_validation(exc)}") from None
