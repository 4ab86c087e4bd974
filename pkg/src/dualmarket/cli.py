"""Command line interface.

    dualmarket run <scenario> [--seed N] [--out FILE]
    dualmarket verify <report>
    dualmarket scenarios

`run` resolves its argument first as a file path, then as the name of a
bundled scenario (`dualmarket scenarios` lists those). Exit codes: 0 on
success, 1 for scenario parse or validation errors, 2 for protocol errors
(infeasible schedules, insufficient balances, and the like).
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources

from .errors import MarketError, ParseError, ValidationError
from .report import render_report, run_scenario, verify_report
from .scenario import parse_scenario

EXIT_OK = 0
EXIT_SCENARIO = 1
EXIT_PROTOCOL = 2


def _bundled() -> dict[str, str]:
    root = resources.files("dualmarket") / "scenarios"
    out = {}
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".scn"):
            out[entry.name[: -len(".scn")]] = entry.read_text(encoding="utf-8")
    return out


def _load_text(target: str) -> tuple[str, str]:
    """Resolve a path or bundled name to (scenario name, text)."""
    if os.path.exists(target):
        stem = os.path.splitext(os.path.basename(target))[0]
        with open(target, encoding="utf-8") as fh:
            return stem, fh.read()
    bundled = _bundled()
    name = target[: -len(".scn")] if target.endswith(".scn") else target
    if name in bundled:
        return name, bundled[name]
    raise ValidationError(
        f"no such scenario file or bundled scenario: {target!r}"
    )


def _cmd_run(args: argparse.Namespace) -> int:
    name, text = _load_text(args.scenario)
    sc = parse_scenario(text)
    if args.seed is not None:
        sc.seed = args.seed
    data = run_scenario(sc, name=name)
    report = render_report(data)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
        print(f"report written to {args.out}")
    else:
        sys.stdout.write(report)
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    with open(args.report, encoding="utf-8") as fh:
        text = fh.read()
    checks = verify_report(text)
    print(f"report ok: {len(checks)} checks passed")
    return EXIT_OK


def _cmd_scenarios(_args: argparse.Namespace) -> int:
    for name in _bundled():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualmarket",
        description="deterministic dual-market simulator (data + compute)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a scenario, print its report")
    p_run.add_argument("scenario", help="path to a .scn file or bundled name")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario's [meta] seed")
    p_run.add_argument("--out", default=None,
                       help="write the report to this file instead of stdout")
    p_run.set_defaults(fn=_cmd_run)
    p_ver = sub.add_parser("verify", help="re-check a report's invariants")
    p_ver.add_argument("report", help="path to a report produced by `run`")
    p_ver.set_defaults(fn=_cmd_verify)
    p_ls = sub.add_parser("scenarios", help="list bundled scenarios")
    p_ls.set_defaults(fn=_cmd_scenarios)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ValidationError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except MarketError as exc:
        print(f"protocol error: {exc.__class__.__name__}: {exc}",
              file=sys.stderr)
        return EXIT_PROTOCOL
    except OSError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
