"""Scenario ingestion, run outputs, report checks, replay and the CLI."""

from .replay import CorruptLog, ReplayResult, replay_log
from .report import CheckOutcome, StakeTable, check_reports, read_report, stake_table, write_run
from .scenario import LedgerModel, Scenario, ScenarioError, dump_scenario, load_ledger, load_scenario, parse_scenario

__all__ = [
    "CorruptLog",
    "ReplayResult",
    "replay_log",
    "CheckOutcome",
    "StakeTable",
    "check_reports",
    "read_report",
    "stake_table",
    "write_run",
    "LedgerModel",
    "Scenario",
    "ScenarioError",
    "dump_scenario",
    "load_ledger",
    "load_scenario",
    "parse_scenario",
]
