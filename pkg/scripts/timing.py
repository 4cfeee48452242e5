"""Wall-clock cost of a full verification batch (all configurations) per application.

    python scripts/timing.py --repeats 10 --out results/timing.csv
"""

import argparse
import statistics
import sys
import time
from pathlib import Path

from selfadapt.fx import make_fx_application
from selfadapt.runner import write_rows
from selfadapt.uuv import make_uuv_application
from selfadapt.verifier import verify_config_space


def batch_time(app, obs) -> tuple[float, int]:
    t0 = time.perf_counter()
    b = verify_config_space(app.model_factory(obs), app.configurations(), app.properties)
    return time.perf_counter() - t0, len(b.entries)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--out", type=Path, default=Path("results/timing.csv"))
    args = ap.parse_args(argv)

    rows = []
    for name, make in (("uuv", make_uuv_application), ("fx", make_fx_application)):
        app = make()
        times = []
        for k in range(args.repeats):
            t, n = batch_time(app, app.initial_observations())
            times.append(t)
            rows.append({"app": name, "repeat": k, "configs": n, "seconds": t, "per_config_ms": 1000 * t / n})
        print(f"{name}: {n} configs, median {statistics.median(times):.3f} s, max {max(times):.3f} s")
    write_rows(rows, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
