"""Support recovery rates over signal shapes, sparsity and magnitude, with a d1 sweep.

For each setting the detector runs the primed variant and takes
ceil(a^2 s log2(2p) / beta^2) extra observations before estimating the support.

    python3 scripts/support_grid.py --p 100 --s 5 50 --vartheta 1 2 --reps 200 --d1-factor 0.5 1 2
"""

import argparse
import csv
import math
import sys
import time
from pathlib import Path

from ocdci.calibration import monte_carlo_thresholds, support_extra_samples
from ocdci.detector import DetectorConfig, Variant
from ocdci.grid import ScaleGrid
from ocdci.simulation import ScenarioSpec, Shape, run_support_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=100)
    ap.add_argument("--s", type=int, nargs="+", default=[5, 50])
    ap.add_argument("--vartheta", type=float, nargs="+", default=[2.0, 1.0])
    ap.add_argument("--shape", nargs="+", default=["uniform", "inv-sqrt", "harmonic"], choices=[s.value for s in Shape])
    ap.add_argument("--d1-factor", type=float, nargs="+", default=[1.0], help="multiples of sqrt(2 log(p/alpha))")
    ap.add_argument("--z", type=int, default=1000)
    ap.add_argument("--gamma", type=int, default=30_000)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--cal-reps", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("-o", "--output", type=Path, default=None)
    args = ap.parse_args(argv)

    p = args.p
    a = math.sqrt(2 * math.log(p))
    base_d1 = math.sqrt(2 * math.log(p / args.alpha))
    d1_values = [f * base_d1 for f in args.d1_factor]
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    writer = None
    for vartheta in args.vartheta:
        grid = ScaleGrid(p, vartheta)
        t0 = time.perf_counter()
        th = monte_carlo_thresholds(p, args.gamma, a, grid, Variant.OCD_PRIME, reps=args.cal_reps, seed=args.seed, threads=args.threads)
        det = DetectorConfig(grid, a, *th, Variant.OCD_PRIME)
        for s in args.s:
            ell = support_extra_samples(a, s, vartheta, p)
            for shape in args.shape:
                spec = ScenarioSpec(p, s, vartheta, args.z, Shape(shape))
                table = run_support_experiment(spec, det, d1_values, ell=ell, reps=args.reps, seed=args.seed + 1, threads=args.threads)
                for row in table.rows():
                    full = {"p": p, "s": s, "vartheta": vartheta, "shape": shape, "ell": ell, **row}
                    if writer is None:
                        writer = csv.DictWriter(out, fieldnames=list(full), lineterminator="\n")
                        writer.writeheader()
                    writer.writerow(full)
                out.flush()
        print(f"vartheta={vartheta:g}: {time.perf_counter() - t0:.0f}s", file=sys.stderr)
    if out is not sys.stdout:
        out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
