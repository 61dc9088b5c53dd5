"""Command line entry point: run, check, stake-calc and replay."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from ..netsim.world import run_simulation
from .replay import CorruptLog, replay_log
from .report import check_reports, read_report, stake_table, write_run
from .scenario import ScenarioError, load_ledger, load_scenario

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
        config = scenario.to_sim_config(seed=args.seed, ticks=args.ticks)
    except ScenarioError as exc:
        _err(str(exc))
        return EXIT_USAGE
    report = run_simulation(config)
    out_dir = args.out_dir if args.out_dir is not None else scenario.output.out_dir
    write_run(report, out_dir, scenario.output.report)
    print(f"config {report.config_digest[:16]}  ticks {report.ticks}  messages {report.messages}")
    print("frames " + " ".join(f"{k}:{v}" for k, v in sorted(report.frames.items(), key=lambda kv: int(kv[0]))))
    for name, ok in report.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            for detail in report.details.get(name, []):
                print(f"      {detail}")
    print(f"wrote {Path(out_dir) / scenario.output.report}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_check(args: argparse.Namespace) -> int:
    if len(args.reports) < 2:
        _err("check needs at least two reports")
        return EXIT_USAGE
    loaded = []
    for path in args.reports:
        try:
            loaded.append((path, read_report(path)))
        except (OSError, ValueError, TypeError) as exc:
            _err(f"cannot read report {path}: {exc}")
            return EXIT_USAGE
    outcome = check_reports(loaded)
    if not outcome.comparable:
        print("incomparable configs")
        return EXIT_OK
    if outcome.problems:
        for problem in outcome.problems:
            print(f"FAIL  {problem}")
        return EXIT_FAIL
    print(f"PASS  {len(loaded)} reports agree")
    return EXIT_OK


def cmd_stake_calc(args: argparse.Namespace) -> int:
    source = args.ledger or args.scenario
    if source is None:
        _err("stake-calc needs a ledger path")
        return EXIT_USAGE
    try:
        ledger = load_ledger(source)
        table = stake_table(ledger, day=args.day)
    except (ScenarioError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    if table.violations:
        for v in table.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_FAIL
    sys.stdout.write(table.render())
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        with open(args.log) as fh:
            result = replay_log(fh)
    except OSError as exc:
        _err(f"cannot read {args.log}: {exc.strerror}")
        return EXIT_USAGE
    except CorruptLog as exc:
        _err(f"corrupt log {args.log}: {exc}")
        return EXIT_USAGE
    text = "".join(line + "\n" for line in result.finality)
    if args.out_dir is not None:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / (Path(args.log).stem + ".replay.final")).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stakedag", description="Stake-weighted DAG consensus simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write the report and node logs")
    run.add_argument("--scenario", required=True, help="scenario YAML or JSON file")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--ticks", type=int, default=None, help="override the scenario tick count")
    run.add_argument("--out-dir", default=None, help="output directory (default from the scenario)")
    run.set_defaults(func=cmd_run)

    check = sub.add_parser("check", help="cross-check finality across reports")
    check.add_argument("reports", nargs="+", help="two or more report.json files")
    check.set_defaults(func=cmd_check)

    stake = sub.add_parser("stake-calc", help="print the stake table for a ledger")
    stake.add_argument("ledger", nargs="?", default=None, help="ledger file (or a scenario with a ledger)")
    stake.add_argument("--scenario", default=None, help="read the ledger section of a scenario")
    stake.add_argument("--day", type=int, default=None, help="reward day (default from the ledger)")
    stake.set_defaults(func=cmd_stake_calc)

    replay = sub.add_parser("replay", help="rebuild a node's finality report from its log")
    replay.add_argument("log", help="node log written by run")
    replay.add_argument("--out-dir", default=None, help="write <log>.replay.final here instead of stdout")
    replay.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
