"""Command-line entry point.

Exit codes: 0 success, 1 property or verification failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .automata import RangeViolation, StateSpaceExceeded, UnmatchedChannel, load_network
from .expr import ExpressionError
from .controller import MUTATIONS, app_queries, mutated_network, verify_controller, verify_generic_suite
from .runner import APPS, MODES, CorruptArchive, RunManifest, check_archive, run_scenario, summarize_archive, write_rows

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _weights(text: str) -> tuple[float, float]:
    try:
        w = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must look like w1,w2 (got {text!r})") from None
    if len(w) != 2:
        raise argparse.ArgumentTypeError(f"expected two weights, got {len(w)}")
    return w  # type: ignore[return-value]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfadapt", description="Verified self-adaptation: controller checks, scenario runs, reports.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify-controller", help="model-check the MAPE controller network (P1-P9 plus R4)")
    v.add_argument("--app", choices=APPS, required=True)
    v.add_argument("--network", type=Path, help="automata network file (default: the shipped network for --app)")
    v.add_argument("--mutation", choices=[m.name for m in MUTATIONS], help="check a seeded mutation of the shipped network")
    v.add_argument("--out", type=Path, help="write the verification report here")

    r = sub.add_parser("run-scenario", help="run a change scenario through the MAPE loop and archive it")
    r.add_argument("--app", choices=APPS, required=True)
    r.add_argument("--scenario", type=Path)
    r.add_argument("--registry", type=Path)
    r.add_argument("--weights", type=_weights)
    r.add_argument("--deadline", type=float)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--mode", choices=MODES, default="logical")
    r.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("report", help="summarise an archive and check its referential completeness")
    s.add_argument("archive", type=Path)
    s.add_argument("--plots", type=Path, help="write a long-format feasibility CSV (plot data) into this directory")
    return p


def cmd_verify_controller(args) -> int:
    try:
        if args.network is not None:
            net = load_network(args.network)
            report = verify_generic_suite(net, app_queries(net))
        elif args.mutation is not None:
            report = verify_controller(mutated_network(args.app, args.mutation))
        else:
            report = verify_controller(args.app)
    except (UnmatchedChannel, ExpressionError, KeyError, FileNotFoundError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StateSpaceExceeded, RangeViolation) as exc:
        print(f"verification failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    text = report.to_text()
    if args.out is not None:
        report.write(args.out)
    print(text, end="")
    print(f"{sum(report.verdicts.values())}/{len(report.verdicts)} properties hold ({report.elapsed:.2f} s)")
    return EXIT_OK if report.all_hold else EXIT_FAIL


def cmd_run_scenario(args) -> int:
    try:
        m = RunManifest(args.app, args.scenario, args.registry, args.weights, args.deadline, args.out, args.mode, args.seed)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = run_scenario(m)
    for rec in result.records:
        extra = f" ({rec.reason})" if rec.reason else ""
        print(f"{rec.event:>4} t={rec.time:<8g} {rec.monitor:<9} {rec.decision}{extra} -> {rec.config}")
    problems = check_archive(args.out)
    for p in problems:
        print(f"archive problem: {p}", file=sys.stderr)
    print(f"archive written to {args.out}")
    return EXIT_FAIL if problems else EXIT_OK


def cmd_report(args) -> int:
    try:
        text = summarize_archive(args.archive)
    except CorruptArchive as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(text, end="")
    if args.plots is not None:
        _plot_data(args.archive, args.plots)
    return EXIT_FAIL if check_archive(args.archive) else EXIT_OK


def _plot_data(archive: Path, out: Path) -> None:
    """Copy per-decision evidence into one long-format CSV per archive."""
    import csv

    rows = []
    for f in sorted((archive / "evidence").glob("*.csv")):
        for r in csv.DictReader(f.open()):
            rows.append({"seq": int(f.stem), **r})
    if rows:
        write_rows(rows, out / "feasibility.csv")
        print(f"plot data written to {out / 'feasibility.csv'}")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"verify-controller": cmd_verify_controller, "run-scenario": cmd_run_scenario, "report": cmd_report}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
