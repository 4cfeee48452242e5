"""UUV change scenario A-H: decisions, oracle cross-check, and per-event feasibility data.

    python scripts/uuv_scenario.py --out results/uuv
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import uuv_oracle  # noqa: E402
from selfadapt.runner import RunManifest, feasibility_rows, run_scenario, write_rows  # noqa: E402
from selfadapt.uuv import load_uuv_scenario  # noqa: E402


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/uuv"))
    args = ap.parse_args(argv)

    r = run_scenario(RunManifest("uuv", out=args.out / "archive"))
    rates = dict(r.app.initial_observations())
    mismatches = 0
    print(f"{'event':<6}{'rates':<22}{'decision':<12}{'configuration':<20}oracle")
    events = {e.label: e for e in load_uuv_scenario().events}
    for rec in r.records:
        rates.update(events[rec.event].values)
        oracle = uuv_oracle(r.app, [rates[p] for p in r.app.parameters])
        shown = "-" if rec.decision == "none" else str(oracle.best)
        if rec.decision in ("adapt", "keep") and oracle.best != rec.config:
            mismatches += 1
        rs = ", ".join(f"{rates[p]:g}" for p in r.app.parameters)
        print(f"{rec.event:<6}{rs:<22}{rec.decision:<12}{str(rec.config):<20}{shown}")
    path = write_rows(feasibility_rows(r), args.out / "feasibility.csv")
    print(f"\nfeasibility data: {path}\narchive: {args.out / 'archive'}")
    return 1 if mismatches else 0


if __name__ == "__main__":
    sys.exit(main())
