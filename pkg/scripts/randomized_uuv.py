"""Randomized UUV parameterizations: weights in [1, 500], sensor energies in [0.1, 10] J.

Every decision of the scenario is compared with the closed-form oracle.

    python scripts/randomized_uuv.py --trials 30 --seed 5 --out results/randomized.csv
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import uuv_oracle  # noqa: E402
from selfadapt.runner import RunManifest, run_scenario, write_rows  # noqa: E402
from selfadapt.uuv import UuvApplication, load_uuv_scenario, make_uuv_application  # noqa: E402


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=30)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("results/randomized.csv"))
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    base = make_uuv_application()
    events = {e.label: e for e in load_uuv_scenario().events}
    rows, violations = [], 0
    for trial in range(args.trials):
        specs = tuple(replace(s, e=float(rng.uniform(0.1, 10.0))) for s in base.specs)
        w = (float(rng.uniform(1, 500)), float(rng.uniform(1, 500)))
        app = UuvApplication(specs=specs, speed_grid=base.speed_grid, weights=w)
        r = run_scenario(RunManifest("uuv"), app=app)
        rates = dict(app.initial_observations())
        for rec in r.records:
            rates.update(events[rec.event].values)
            if rec.decision == "none":
                continue
            oracle = uuv_oracle(app, [rates[p] for p in app.parameters])
            if rec.decision == "failsafe":
                ok = oracle.best is None
            else:
                ok = rec.config == oracle.best or rec.config in oracle.ambiguous
            violations += not ok
            rows.append(
                {
                    "trial": trial,
                    "w1": w[0],
                    "w2": w[1],
                    **{f"e{i + 1}": s.e for i, s in enumerate(specs)},
                    "event": rec.event,
                    "decision": rec.decision,
                    "config": str(rec.config),
                    "oracle": str(oracle.best),
                    "feasible": rec.feasible,
                    "ok": ok,
                }
            )
    write_rows(rows, args.out)
    print(f"{len(rows)} decisions, {sum(r['decision'] == 'failsafe' for r in rows)} failsafe, {violations} violations -> {args.out}")
    return 1 if violations else 0


if __name__ == "__main__":
    sys.exit(main())
