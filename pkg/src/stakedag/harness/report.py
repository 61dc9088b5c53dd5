"""Run outputs on disk, cross-report checks and the stake table."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..netsim.world import SimReport
from ..staking import (
    DelegationCapExceeded,
    block_reward,
    build_validators,
    check_account,
    daily_rewards,
    delegated_to,
    slot_for_stake,
)
from .scenario import LedgerModel

__all__ = [
    "write_run",
    "read_report",
    "CheckOutcome",
    "check_reports",
    "STAKE_COLUMNS",
    "StakeTable",
    "stake_table",
]


def write_run(report: SimReport, out_dir: str | Path, report_name: str = "report.json") -> list[Path]:
    """Write the report, every node's log and every honest node's finality report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / report_name
    path.write_text(report.to_json())
    written.append(path)
    for node, lines in sorted(report.logs.items(), key=lambda kv: int(kv[0])):
        path = out / f"node{node}.log"
        path.write_text("".join(line + "\n" for line in lines))
        written.append(path)
    for node, lines in sorted(report.finality.items(), key=lambda kv: int(kv[0])):
        path = out / f"node{node}.final"
        path.write_text("".join(line + "\n" for line in lines))
        written.append(path)
    return written


def read_report(path: str | Path) -> SimReport:
    return SimReport.from_json(Path(path).read_text())


@dataclass
class CheckOutcome:
    comparable: bool = True
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


def _first_divergence(a: Sequence[str], b: Sequence[str]) -> int | None:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return None


def check_reports(reports: Sequence[tuple[str, SimReport]]) -> CheckOutcome:
    """Cross-check finality reports of every honest node in every report.

    Each finality line carries the event hash with its annotations, so two
    lists agree on their common events exactly when one is a line-for-line
    prefix of the other.  Main chains are the lines flagged as Atropos and
    are compared the same way.
    """
    outcome = CheckOutcome()
    digests = {r.config_digest for _, r in reports}
    if len(digests) > 1:
        outcome.comparable = False
        return outcome
    lists = [(f"{name}:node{node}", lines) for name, r in reports for node, lines in sorted(r.finality.items())]
    for i, (name_a, a) in enumerate(lists):
        for name_b, b in lists[i + 1 :]:
            pos = _first_divergence(a, b)
            if pos is not None:
                outcome.problems.append(f"{name_a} vs {name_b}: final order diverges at position {pos}")
                continue
            main_a = [line for line in a if line.endswith("\t1")]
            main_b = [line for line in b if line.endswith("\t1")]
            pos = _first_divergence(main_a, main_b)
            if pos is not None:
                outcome.problems.append(f"{name_a} vs {name_b}: main chain diverges at position {pos}")
    return outcome


STAKE_COLUMNS = ("account", "role", "w_v", "h_hat", "p_v", "p_share", "slot_gas", "slot_bytes", "reward")


@dataclass
class StakeTable:
    rows: list[tuple[str, ...]] = field(default_factory=list)
    totals: list[tuple[str, str]] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    def render(self) -> str:
        widths = [max([len(c), *(len(r[i]) for r in self.rows)]) for i, c in enumerate(STAKE_COLUMNS)]

        def line(cells: Sequence[str]) -> str:
            return "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

        out = [line(STAKE_COLUMNS).rstrip()]
        out.extend(line(r).rstrip() for r in self.rows)
        for label, value in self.totals:
            out.append(f"{label}: {value}")
        return "\n".join(out) + "\n"


def _tokens(x: float) -> str:
    return f"{x:,.2f}"


def _share(x: float) -> str:
    return f"{x:.6f}"


def stake_table(ledger: LedgerModel, day: int | None = None) -> StakeTable:
    """Per-account weights, importances, powers, slots and the day's rewards.

    Token amounts print with two decimals and shares with six.  Constraint
    violations are collected per account; when any exist no rows are built.
    """
    params = ledger.params.to_params()
    day = ledger.day if day is None else day
    accounts = ledger.to_accounts()
    table = StakeTable()
    if not accounts:
        return table
    ids = {a.id for a in accounts}
    for a in accounts:
        for target in a.t_d:
            if target not in ids:
                table.violations.append(f"{a.id}: delegates to unknown account {target}")
        check = check_account(a, params, delegated_in=delegated_to(a.id, accounts), day=day)
        table.violations.extend(f"{a.id}: {code}" for code in check.violations)
    if table.violations:
        return table
    try:
        validators = build_validators(accounts, params)
    except DelegationCapExceeded as exc:
        table.violations.append(f"{exc}")
        return table
    by_id = {v.id: v for v in validators}
    P = sum(v.p_v for v in validators)
    if validators:
        rewards = daily_rewards(day, ledger.fees, validators, accounts, params, F_s=ledger.spv_balance)
        payouts = rewards.payouts
    else:
        rewards = None
        payouts = {}
    for a in accounts:
        slot = slot_for_stake(a.t_x, params)
        v = by_id.get(a.id)
        table.rows.append(
            (
                a.id,
                "validator" if v else "account",
                _tokens(v.w_v) if v else "-",
                _tokens(v.h_hat) if v else "-",
                _tokens(v.p_v) if v else "-",
                _share(v.p_v / P) if v else "-",
                _tokens(slot.gas_per_sec),
                _tokens(slot.bytes_per_sec),
                _tokens(payouts.get(a.id, 0.0)),
            )
        )
    if rewards is None:
        table.totals = [("total block reward", _tokens(block_reward(day, params)))]
    else:
        table.totals = [
            ("total block reward", _tokens(rewards.R_b)),
            ("transaction fee reward", _tokens(rewards.R_x)),
            ("total reward", _tokens(rewards.R)),
            ("spv balance", _tokens(rewards.F_s)),
        ]
    return table

