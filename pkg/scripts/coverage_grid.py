"""Coverage, interval length and detection delay over a grid of signal settings.

Thresholds are calibrated once per beta on null data and cached as .npy files,
so a second run with the same --cache directory skips calibration.

    python3 scripts/coverage_grid.py --p 100 --s 2 10 --vartheta 1 2 --beta-factor 0.5 1 2 --reps 200
"""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from ocdci.calibration import null_maxima, practical_preset, thresholds_from_maxima
from ocdci.detector import DetectorConfig, Variant
from ocdci.grid import ScaleGrid
from ocdci.inference import InferenceConfig
from ocdci.simulation import ScenarioSpec, run_coverage_experiment


def calibrated(p, gamma, a, grid, reps, seed, threads, cache: Path | None):
    path = None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        path = cache / f"null_p{p}_beta{grid.beta:g}_gamma{gamma}_r{reps}_s{seed}.npy"
        if path.exists():
            return thresholds_from_maxima(np.load(path))
    maxima = null_maxima(p, gamma, a, grid, Variant.OCD, reps=reps, seed=seed, threads=threads)
    if path is not None:
        np.save(path, maxima)
    return thresholds_from_maxima(maxima)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=100)
    ap.add_argument("--s", type=int, nargs="+", default=[2, 10, 100])
    ap.add_argument("--vartheta", type=float, nargs="+", default=[2.0, 1.0])
    ap.add_argument("--beta-factor", type=float, nargs="+", default=[2.0, 1.0, 0.5], help="beta = factor * vartheta")
    ap.add_argument("--z", type=int, default=1000)
    ap.add_argument("--gamma", type=int, default=30_000)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--cal-reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--cache", type=Path, default=None)
    ap.add_argument("-o", "--output", type=Path, default=None)
    args = ap.parse_args(argv)

    a, d1, d2 = practical_preset(args.p, args.alpha)
    inf = InferenceConfig(d1, d2, alpha=args.alpha)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    writer = None
    for vartheta in args.vartheta:
        for factor in args.beta_factor:
            beta = factor * vartheta
            grid = ScaleGrid(args.p, beta)
            t0 = time.perf_counter()
            th = calibrated(args.p, args.gamma, a, grid, args.cal_reps, args.seed, args.threads, args.cache)
            det = DetectorConfig(grid, a, *th)
            for s in args.s:
                spec = ScenarioSpec(args.p, s, vartheta, args.z)
                rep = run_coverage_experiment(spec, det, inf, args.reps, seed=args.seed + 1, threads=args.threads)
                row = {"p": args.p, "s": s, "vartheta": vartheta, "beta": beta, "T_diag": f"{th[0]:.6g}", "T_off": f"{th[1]:.6g}"}
                row.update(rep.row())
                if writer is None:
                    writer = csv.DictWriter(out, fieldnames=list(row), lineterminator="\n")
                    writer.writeheader()
                writer.writerow(row)
                out.flush()
            print(f"vartheta={vartheta:g} beta={beta:g}: {time.perf_counter() - t0:.0f}s", file=sys.stderr)
    if out is not sys.stdout:
        out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
