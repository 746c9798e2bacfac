"""Command-line entry point: ``delaybm run | verify | summarize``.

Exit status is 0 on success, 1 for configuration or validation errors and
2 when a simulation cell or steady-state check fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import runner
from .policies import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = runner.load_config(args.config)
    filters = runner.parse_filters(args.filter or [])
    out = Path(args.out) if args.out else runner.default_output_dir(cfg)
    result = runner.run_matrix(cfg, out, jobs=args.jobs, filters=filters)
    done = len(result.outcomes) - len(result.failures)
    print(f"{done}/{len(result.outcomes)} cells completed; summary at {out / 'summary.csv'}")
    for o in result.failures:
        print(f"FAILED {o.cell.relpath}: {o.error}", file=sys.stderr)
    return EXIT_RUNTIME if result.failures else EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    cfg = runner.load_config(args.config)
    text, ok, _ = runner.verify_steady_state(cfg)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "steady_state_report.txt").write_text(text)
    return EXIT_OK if ok else EXIT_RUNTIME


def _cmd_summarize(args: argparse.Namespace) -> int:
    path, rows = runner.summarize(Path(args.dir))
    table = runner.median_table(rows, args.column)
    print(f"median {args.column} across seeds ({len(rows)} cells, written {path})")
    for (scheme, scenario), value in sorted(table.items()):
        print(f"  {scheme:9s} {scenario:40s} {value:.4g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="delaybm", description="Shared-buffer switch simulations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every cell of a configuration's scenario matrix")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (default: ${runner.OUTPUT_ROOT_ENV}/<run.name>)")
    run.add_argument("--jobs", type=int, default=1, help="cells to run in parallel")
    run.add_argument("--filter", action="append", metavar="KEY=VALUE",
                     help="keep only matching cells, e.g. scheme=dt,cs (repeatable)")
    run.set_defaults(func=_cmd_run)

    verify = sub.add_parser("verify", help="check persistent-congestion runs against the closed forms")
    verify.add_argument("config")
    verify.add_argument("--out", help="also write the report into this directory")
    verify.set_defaults(func=_cmd_verify)

    summ = sub.add_parser("summarize", help="rebuild summary.csv from a run directory")
    summ.add_argument("dir")
    summ.add_argument("--column", default="incast_p99", help="summary column to tabulate")
    summ.set_defaults(func=_cmd_summarize)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
