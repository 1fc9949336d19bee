"""Command line entry point: ``nmpsim run|compare|validate``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .runner import compare_modes, format_summary, run_scenario
from .scenario import ScenarioError, load_scenario, paper_scenario_path, validate_scenario

EXIT_OK = 0
EXIT_SCENARIO = 1
EXIT_VIOLATIONS = 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmpsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log controller decisions")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, outputs: bool = True) -> None:
        p.add_argument("--scenario", default=None, help="scenario file (default: bundled paper.scenario)")
        if outputs:
            p.add_argument("--out", default="out", help="output directory (default: ./out)")
            p.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    run = sub.add_parser("run", help="replay a scenario and write transitions/timeseries CSVs")
    common(run)
    run.add_argument("--no-interaction", action="store_true", help="disable audio negotiation")
    common(sub.add_parser("compare", help="run with and without interaction and report the gain"))
    common(sub.add_parser("validate", help="check a scenario file and list all violations"), outputs=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    path = Path(args.scenario) if args.scenario else paper_scenario_path()

    if args.command == "validate":
        try:
            report = validate_scenario(path)
        except OSError as exc:
            print(f"{path}: cannot read scenario: {exc}", file=sys.stderr)
            return EXIT_SCENARIO
        print(report)
        return EXIT_OK if report.ok else EXIT_SCENARIO

    try:
        scenario = load_scenario(path)
    except ScenarioError as exc:
        print(exc, file=sys.stderr)
        for v in exc.violations[1:]:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_SCENARIO
    scenario = scenario.with_overrides(seed=args.seed)

    if args.command == "run":
        if args.no_interaction:
            scenario = scenario.with_overrides(interaction_enabled=False)
        report = run_scenario(scenario, args.out)
        sys.stdout.write(format_summary(report.summary))
        for notice in report.notices:
            print(f"notice: {notice}", file=sys.stderr)
        return EXIT_VIOLATIONS if report.summary["ept_violations"] else EXIT_OK

    result = compare_modes(scenario, args.out)
    sys.stdout.write(format_summary(result.summary, result.notice))
    return EXIT_VIOLATIONS if result.enabled.summary["ept_violations"] else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
