"""Command-line interface: ``seqcp {critvals,simulate,analyze,cache}``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import critvals, pipeline, simharness
from .critvals import CacheFormatError, LimitFunctionalSpec
from .monitor import Scheme

logger = logging.getLogger("seqcp")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seqcp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("critvals", help="simulate critical values of a limit distribution")
    p.add_argument("--scheme", required=True, choices=[s.value for s in Scheme])
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--b", type=float, default=0.4, help="mMOSUM fraction (ignored for other schemes)")
    p.add_argument("--normalization", choices=["homoscedastic", "heteroscedastic"], default="homoscedastic")
    p.add_argument("--grid", type=int, default=None, help="grid points per path (default 10000, 2000 with --desk)")
    p.add_argument("--reps", type=int, default=None, help="replications (default 50000, 5000 with --desk)")
    p.add_argument("--desk", action="store_true", help="reduced desk-scale defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, help="output file (default: store in the cache directory)")
    p.add_argument("--timestamp", action="store_true", help="record the creation time in --out")

    p = sub.add_parser("simulate", help="run a scenario grid from a config file")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--size-corrected", action="store_true", help="calibrate thresholds on H0 runs for H1 cells")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-compute", action="store_true", help="fail instead of simulating missing critical values")
    p.add_argument("--full-tables", action="store_true",
                   help="use full-scale critical values (10000 grid points, 50000 paths) instead of desk scale")

    p = sub.add_parser("analyze", help="monitor a monthly CSV series")
    p.add_argument("--csv", type=Path, required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--date-column", default="date")
    p.add_argument("--historic", type=int, default=120)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--b", type=float, default=0.4)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--kernels", type=_csv_list, default=["dom", "wilcoxon"])
    p.add_argument("--schemes", type=_csv_list, default=["cusum", "mmosum", "page"])
    p.add_argument("--no-deseasonalize", action="store_true")
    p.add_argument("--grid", type=int, default=critvals.DESK_GRID)
    p.add_argument("--reps", type=int, default=critvals.DESK_REPS)
    p.add_argument("--seed", type=int, default=0, help="seed of the critical-value simulation")
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("cache", help="inspect the critical-value cache")
    p.add_argument("action", choices=["ls", "rm"])
    p.add_argument("names", nargs="*", help="files to remove (rm); all when omitted")
    return parser


def cmd_critvals(args) -> int:
    grid = args.grid or (critvals.DESK_GRID if args.desk else critvals.FULL_GRID)
    reps = args.reps or (critvals.DESK_REPS if args.desk else critvals.FULL_REPS)
    try:
        spec = LimitFunctionalSpec(args.scheme, args.gamma, args.b if args.scheme == "mmosum" else None,
                                   args.normalization, grid, reps, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    table = critvals.simulate_limit(spec, workers=args.workers)
    if args.out:
        path = critvals.cache_store(table, args.out, timestamp=args.timestamp)
    else:
        path = critvals.cache_store(table, critvals.cache_dir() / spec.filename())
    for a in (0.10, 0.05, 0.01):
        print(f"alpha={a:.2f}\tc={table.critical_value(a):.6f}")
    print(f"written {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenarios = simharness.parse_scenarios(args.config.read_text(), str(args.config))
    if not scenarios:
        raise pipeline.DataError(f"{args.config}: no scenarios")
    reports = simharness.run_scenarios(
        scenarios, size_corrected=args.size_corrected, compute_missing=not args.no_compute, workers=args.workers,
        **({"grid_points": critvals.FULL_GRID, "limit_replications": critvals.FULL_REPS} if args.full_tables else {}),
    )
    path = simharness.write_reports(reports, args.out_dir)
    for rep in reports:
        print(f"{rep.scenario.label()}\trejection_rate={rep.rejection_rate:.4f}")
    print(f"written {path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    records = pipeline.load_csv(args.csv, args.column, args.date_column)
    gaps = pipeline.find_gaps(records)
    for a, b in gaps:
        logger.warning("gap between %s and %s", a, b)
    if not args.no_deseasonalize:
        records = pipeline.deseasonalize(records, args.historic)
    try:
        output = pipeline.analyze(
            records, args.historic, args.kernels, args.schemes, args.gamma, args.b, args.alpha,
            grid_points=args.grid, replications=args.reps, seed=args.seed,
        )
    except ValueError as exc:
        if isinstance(exc, pipeline.DataError):
            raise
        raise UsageError(str(exc)) from None
    pipeline.write_analysis(output, args.out_dir)
    labels = output.labels[args.historic :]
    for (kernel, scheme), res in output.results.items():
        tau = res.stopping_time
        when = f"{tau} ({labels[tau - 1]})" if tau else "none"
        print(f"{kernel}\t{scheme}\tstopping_time={when}")
    return EXIT_OK


def cmd_cache(args) -> int:
    files = critvals.list_cache()
    if args.action == "ls":
        for path in files:
            try:
                table = critvals.read_table(path)
                print(f"{path.name}\tc(0.05)={table.critical_value(0.05):.6f}")
            except CacheFormatError as exc:
                print(f"{path.name}\tCORRUPT: {exc}")
        return EXIT_OK
    targets = files if not args.names else [critvals.cache_dir() / n for n in args.names]
    for path in targets:
        if path.suffix != ".cvt" or not path.exists():
            raise UsageError(f"no cache entry {path.name}")
        path.unlink()
        print(f"removed {path.name}")
    return EXIT_OK


COMMANDS = {"critvals": cmd_critvals, "simulate": cmd_simulate, "analyze": cmd_analyze, "cache": cmd_cache}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"seqcp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (pipeline.DataError, CacheFormatError, simharness.MissingCriticalValues, OSError) as exc:
        print(f"seqcp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"seqcp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
