"""Command line: generate, ingest, simulate, analyze.

Exit codes: 0 success, 1 usage or configuration error, 2 some grid cells
failed, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import MissingResultsError, analyze
from .curves import (
    SCHEMAS,
    BenchmarkError,
    FilterReport,
    SyntheticSpec,
    canonical_export,
    generate_synthetic,
    load_benchmark,
)
from .experiment import ExperimentGrid, simulate
from .moo import curve_rank_export

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("earlydiscard")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None


def cmd_generate(args) -> int:
    try:
        with open(args.spec) as fh:
            spec = SyntheticSpec.from_dict(json.load(fh))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: invalid synthetic spec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    bench = generate_synthetic(spec)
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        canonical_export(bench, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    report = curve_rank_export(bench, 1, seed=0)
    print(f"curves: {len(bench)}")
    print(f"i_max: {bench.i_max}")
    print(f"worse_than_constant_fraction: {report.fraction_worse_than_constant:.4f}")
    print(f"written: {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    report = FilterReport()
    try:
        bench = load_benchmark(args.input, args.schema, name=args.name,
                               task_kind=args.task_kind, report=report)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BenchmarkError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(report.summary(), file=sys.stderr)
        return EXIT_USAGE
    print(report.summary())
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        canonical_export(bench, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"written: {args.out} ({len(bench)} curves, i_max={bench.i_max})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        grid = ExperimentGrid.from_file(args.grid)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: invalid grid: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed_list is not None:
        grid.seeds = args.seed_list
    if args.out is not None:
        grid.out = Path(args.out)
    if args.schema is not None:
        grid.schema = args.schema
    try:
        result = simulate(grid, jobs=args.jobs, resume=args.resume)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BenchmarkError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"cells computed: {result.computed}")
    print(f"cells skipped: {result.skipped}")
    print(f"cells failed: {len(result.failed)}")
    if result.failed:
        failures = Path(grid.out) / "failures.txt"
        failures.parent.mkdir(parents=True, exist_ok=True)
        with failures.open("w") as fh:
            for cell, error in result.failed:
                fh.write(f"{cell.stem(Path(grid.out))}\t{error}\n")
        print(f"failures listed in {failures}")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        written = analyze(args.results, args.out)
    except MissingResultsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for name, path in written.items():
        print(f"{name}: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="earlydiscard", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic benchmark in the canonical format")
    p.add_argument("spec", help="JSON file with synthetic generator settings")
    p.add_argument("--out", required=True, help="output benchmark CSV")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="validate external curves and convert them to the canonical format")
    p.add_argument("input")
    p.add_argument("--schema", choices=sorted(SCHEMAS), default="canonical",
                   help="what the value columns store (canonical: 1-R^2 errors, r2: R^2 scores)")
    p.add_argument("--task-kind", choices=("regression", "classification"))
    p.add_argument("--name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", help="run every (benchmark, policy, parameter, seed) cell of a grid")
    p.add_argument("grid", help="JSON grid file")
    p.add_argument("--seed-list", type=_seed_list, help="comma-separated seeds, overrides the grid")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="results directory, overrides the grid")
    p.add_argument("--schema", choices=sorted(SCHEMAS), help="benchmark schema, overrides the grid")
    p.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True,
                   help="skip cells whose outputs match the current settings")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="aggregate a results directory into analysis tables")
    p.add_argument("results")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
