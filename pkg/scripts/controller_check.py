"""Model-check both controller networks and every seeded mutation; write the reports.

    python scripts/controller_check.py --out results/controller
"""

import argparse
import sys
from pathlib import Path

from selfadapt.controller import MUTATIONS, mutated_network, suite_query, trace_replays, verify_controller


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/controller"))
    args = ap.parse_args(argv)

    status = 0
    for app in ("uuv", "fx"):
        r = verify_controller(app)
        r.write(args.out / f"{app}.txt")
        print(f"{app}: {r.n_states} states, {sum(r.verdicts.values())}/{len(r.verdicts)} hold, {r.elapsed:.2f} s")
        status |= not r.all_hold
        for m in MUTATIONS:
            net = mutated_network(app, m)
            mr = verify_controller(net)
            mr.write(args.out / f"{app}_{m.name}.txt")
            failing = [v.pid for v in mr.failing()]
            replays = all(trace_replays(net, v, suite_query(net, v.pid)) for v in mr.failing())
            caught = m.breaks in failing and replays
            status |= not caught
            print(f"  {m.name:<30} fails {','.join(failing) or '-':<14} replay {'ok' if replays else 'BROKEN'}")
    return status


if __name__ == "__main__":
    sys.exit(main())
