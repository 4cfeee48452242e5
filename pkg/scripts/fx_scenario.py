"""FX change scenario A-G: decisions against the brute-force oracle, plus feasibility data.

    python scripts/fx_scenario.py --out results/fx
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import fx_oracle  # noqa: E402
from selfadapt.fx import load_fx_scenario  # noqa: E402
from selfadapt.runner import RunManifest, feasibility_rows, run_scenario, write_rows  # noqa: E402


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/fx"))
    args = ap.parse_args(argv)

    r = run_scenario(RunManifest("fx", out=args.out / "archive"))
    obs = dict(r.app.initial_observations())
    events = {e.label: e for e in load_fx_scenario().events}
    bad = 0
    for rec in r.records:
        obs.update(events[rec.event].values)
        best = fx_oracle(r.app, obs).best
        idx = rec.config.index if rec.config.index is not None else "-"
        ok = (best is None) if rec.decision == "failsafe" else (best is not None and best.services == rec.config.services)
        bad += not ok
        print(f"{rec.event}  {rec.decision:<9} index {idx!s:<3} {rec.config}  oracle {best.index if best else 'none'}  {'ok' if ok else 'MISMATCH'}")
    path = write_rows(feasibility_rows(r), args.out / "feasibility.csv")
    print(f"\nfeasibility data: {path}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
