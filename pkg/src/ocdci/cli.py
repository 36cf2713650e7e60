"""Command-line entry point: ``ocdci {detect,simulate-coverage,simulate-support,calibrate,preset}``.

Tuning values are resolved in order: explicit flag, then ``--preset-file``,
then a computed default.  Diagnostics go to stderr; results go to
``--output`` or stdout.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys

from .calibration import (
    Provenance,
    TuningPreset,
    monte_carlo_thresholds,
    practical_preset,
    support_extra_samples,
    theoretical_preset,
    theoretical_thresholds,
)
from .detector import DetectorConfig, Variant
from .grid import ScaleGrid
from .inference import InferenceConfig
from .ingest import MonitorSession, PreprocessSpec, monitor, preprocess, read_csv_rows
from .simulation import ScenarioSpec, Shape, run_coverage_experiment, run_support_experiment, write_csv

log = logging.getLogger("ocdci")

THREADS_ENV = "OCDCI_THREADS"


class UsageError(Exception):
    """Invalid flag combination."""


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _tuning_flags(ap: argparse.ArgumentParser) -> None:
    g = ap.add_argument_group("tuning")
    g.add_argument("--beta", type=float, help="smallest l2 change size to detect")
    g.add_argument("--alpha", type=float, default=0.05, help="nominal miscoverage (default 0.05)")
    g.add_argument("--gamma", type=float, default=None, help="patience: target null run length")
    g.add_argument("--a", type=float, help="entrywise hard threshold (default sqrt(2 ln p))")
    g.add_argument("--c", type=float, default=0.5, help="d1 = c sqrt(ln(p/alpha)) when --d1 is absent")
    g.add_argument("--d1", type=float, help="support threshold")
    g.add_argument("--d2", type=float, help="interval slack (default 4 d1^2)")
    g.add_argument("--ell", type=int, help="extra post-declaration rows (ocd-prime only)")
    g.add_argument("--variant", choices=[v.value for v in Variant], default=None)
    g.add_argument("--t-diag", type=float, dest="t_diag")
    g.add_argument("--t-off", type=float, dest="t_off")
    g.add_argument("--preset-file", help="JSON preset from `calibrate` or `preset`")


def _run_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
    ap.add_argument("--output", "-o", help="output path (default stdout)")


def _scenario_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--p", type=int, required=True)
    ap.add_argument("--s", type=int, required=True, help="number of changing coordinates")
    ap.add_argument("--vartheta", type=float, required=True, help="l2 norm of the change")
    ap.add_argument("--z", type=int, default=1000, help="changepoint (last pre-change time)")
    ap.add_argument("--shape", choices=[s.value for s in Shape if s is not Shape.EXPLICIT], default="sphere")
    ap.add_argument("--horizon", type=int, help="censoring horizon (default z + 50 x delay scale)")
    ap.add_argument("--cal-reps", type=int, default=100, help="null runs for threshold calibration")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ocdci", description="Online changepoint detection with confidence intervals.")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="monitor a CSV stream and emit one JSON line per declaration")
    d.add_argument("input", help="CSV path with a header row, or - for stdin")
    d.add_argument("--p", type=int, help="expected number of series after dropping constant ones")
    d.add_argument("--train-rows", type=int, required=True, dest="train_rows")
    d.add_argument("--sqrt", action="store_true", help="square-root transform before standardizing")
    d.add_argument("--clip", type=float, help="clip standardized values to [-clip, clip]")
    d.add_argument("--cooldown", type=int, default=0)
    _tuning_flags(d)
    d.add_argument("--output", "-o")

    for name, helptext in (
        ("simulate-coverage", "coverage, length and delay of the interval over simulated runs"),
        ("simulate-support", "support recovery rates over a sweep of d1"),
    ):
        s = sub.add_parser(name, help=helptext)
        _scenario_flags(s)
        _tuning_flags(s)
        _run_flags(s)
        if name == "simulate-support":
            s.add_argument("--d1-grid", type=float, nargs="+", dest="d1_grid", help="d1 values (default: --d1 only)")

    c = sub.add_parser("calibrate", help="Monte Carlo thresholds at a given patience, written as a preset")
    c.add_argument("--p", type=int, required=True)
    _tuning_flags(c)
    _run_flags(c)
    c.add_argument("--level", type=float, default=0.5, help="quantile of the null maxima (default 0.5)")

    t = sub.add_parser("preset", help="closed-form thresholds and tuning parameters")
    t.add_argument("--p", type=int, required=True)
    t.add_argument("--s-hint", type=int, dest="s_hint", help="sparsity used to size --ell")
    _tuning_flags(t)
    t.add_argument("--output", "-o")
    return ap


# -- resolution -----------------------------------------------------------------


def _load_preset(args) -> TuningPreset | None:
    return TuningPreset.load(args.preset_file) if getattr(args, "preset_file", None) else None


def _pick(flag, preset: TuningPreset | None, attr: str, default):
    if flag is not None:
        return flag
    if preset is not None:
        return getattr(preset, attr)
    return default() if callable(default) else default


def _variant(args) -> Variant:
    v = Variant(args.variant) if args.variant else Variant.OCD
    if args.ell and v is Variant.OCD:
        if args.variant is None:
            return Variant.OCD_PRIME
        raise UsageError("--ell requires --variant ocd-prime")
    return v


def resolve_configs(args, p: int, thresholds=None) -> tuple[DetectorConfig, InferenceConfig]:
    """Detector and inference configs from flags, the preset file and defaults.

    ``thresholds`` is a callable ``(grid, a, variant) -> (T_diag, T_off)``
    supplying defaults when neither flags nor a preset give them.
    """
    if args.beta is None:
        raise UsageError("--beta is required")
    preset = _load_preset(args)
    variant = _variant(args)
    a_def, d1_def, _ = practical_preset(p, args.alpha, args.c)
    a = _pick(args.a, preset, "a", a_def)
    d1 = _pick(args.d1, preset, "d1", d1_def)
    d2 = _pick(args.d2, None if args.d1 is not None else preset, "d2", lambda: 4 * d1**2)
    ell = _pick(args.ell, preset, "ell", 0)
    if ell and variant is Variant.OCD:
        if args.variant == Variant.OCD.value:
            raise UsageError("a positive ell requires --variant ocd-prime")
        variant = Variant.OCD_PRIME
    grid = ScaleGrid(p, args.beta)
    t_diag = _pick(args.t_diag, preset, "T_diag", None)
    t_off = _pick(args.t_off, preset, "T_off", None)
    if t_diag is None or t_off is None:
        if thresholds is None:
            raise UsageError("thresholds needed: pass --t-diag/--t-off, --gamma or --preset-file")
        md, mo = thresholds(grid, a, variant)
        t_diag = md if t_diag is None else t_diag
        t_off = mo if t_off is None else t_off
    det = DetectorConfig(grid, a, t_diag, t_off, variant)
    return det, InferenceConfig(d1=d1, d2=d2, ell=int(ell), alpha=args.alpha)


def _threads(args) -> int:
    n = args.threads if args.threads is not None else _default_threads()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


@contextlib.contextmanager
def _out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _g(x: float) -> str:
    return f"{x:.6g}"


# -- subcommands ----------------------------------------------------------------


def cmd_detect(args) -> int:
    _variant(args)  # reject bad flag combinations before touching the input
    spec = PreprocessSpec(args.train_rows, args.sqrt, args.clip)
    with contextlib.ExitStack() as stack:
        fh = sys.stdin if args.input == "-" else stack.enter_context(open(args.input, newline=""))
        names, rows = read_csv_rows(fh)
        fitted, blocks = preprocess(rows, spec, names)
        kept = [names[j] for j in fitted.keep]
        p = len(kept)
        if args.p is not None and args.p != p:
            raise UsageError(f"--p {args.p} does not match the {p} non-constant series in the input")

        def theory(grid, a, variant):
            if args.gamma is None:
                raise UsageError("thresholds needed: pass --t-diag/--t-off, --gamma or --preset-file")
            return theoretical_thresholds(p, args.gamma)

        det, inf = resolve_configs(args, p, theory)
        log.info(
            "p=%d a=%s T_diag=%s T_off=%s d1=%s d2=%s ell=%d variant=%s",
            p, _g(det.a), _g(det.T_diag), _g(det.T_off), _g(inf.d1), _g(inf.d2), inf.ell, det.variant.value,
        )
        next(blocks)  # the training window only sets the standardization
        session = MonitorSession(det, inf, args.cooldown)
        records = monitor(blocks, session, offset=args.train_rows)
        with _out(args.output) as out:
            for rec in records:
                out.write(json.dumps(rec.to_record(kept)) + "\n")
    log.info("%d declaration(s)", len(records))
    return 0


def _mc_thresholds(args, p: int, gamma_default=None):
    def run(grid, a, variant):
        gamma = args.gamma if args.gamma is not None else gamma_default
        if gamma is None:
            raise UsageError("thresholds needed: pass --t-diag/--t-off, --gamma or --preset-file")
        log.info("calibrating thresholds: gamma=%d, %d null runs", int(gamma), args.cal_reps)
        return monte_carlo_thresholds(p, int(gamma), a, grid, variant, args.cal_reps, args.seed, _threads(args))

    return run


def _scenario(args) -> ScenarioSpec:
    return ScenarioSpec(args.p, args.s, args.vartheta, args.z, Shape(args.shape))


def _config_columns(args, det: DetectorConfig, inf: InferenceConfig) -> dict:
    return {
        "p": str(args.p),
        "s": str(args.s),
        "vartheta": _g(args.vartheta),
        "beta": _g(det.grid.beta),
        "z": str(args.z),
        "shape": args.shape,
        "variant": det.variant.value,
        "a": _g(det.a),
        "T_diag": _g(det.T_diag),
        "T_off": _g(det.T_off),
    }


def cmd_simulate_coverage(args) -> int:
    det, inf = resolve_configs(args, args.p, _mc_thresholds(args, args.p))
    reps = args.reps if args.reps is not None else 500
    rep = run_coverage_experiment(_scenario(args), det, inf, reps, args.seed, _threads(args), args.horizon)
    row = _config_columns(args, det, inf) | {"d1": _g(inf.d1), "d2": _g(inf.d2), "ell": str(inf.ell)} | rep.row()
    with _out(args.output) as out:
        write_csv([row], out)
    return 0


def cmd_simulate_support(args) -> int:
    if args.ell is None and _load_preset(args) is None and args.variant != Variant.OCD.value:
        if args.beta is None:
            raise UsageError("--beta is required")
        a = args.a if args.a is not None else practical_preset(args.p, args.alpha)[0]
        args.ell = support_extra_samples(a, args.s, args.beta, args.p)
    det, inf = resolve_configs(args, args.p, _mc_thresholds(args, args.p))
    grid = args.d1_grid if args.d1_grid else [inf.d1]
    reps = args.reps if args.reps is not None else 200
    table = run_support_experiment(_scenario(args), det, grid, inf.ell, reps, args.seed, _threads(args), args.horizon)
    base = _config_columns(args, det, inf) | {"ell": str(inf.ell)}
    with _out(args.output) as out:
        write_csv([base | r for r in table.rows()], out)
    return 0


def cmd_calibrate(args) -> int:
    if args.gamma is None:
        raise UsageError("--gamma is required")
    if args.beta is None:
        raise UsageError("--beta is required")
    variant = _variant(args)
    a_def, d1_def, _ = practical_preset(args.p, args.alpha, args.c)
    a = args.a if args.a is not None else a_def
    d1 = args.d1 if args.d1 is not None else d1_def
    d2 = args.d2 if args.d2 is not None else 4 * d1**2
    reps = args.reps if args.reps is not None else 200
    grid = ScaleGrid(args.p, args.beta)
    t_diag, t_off = monte_carlo_thresholds(
        args.p, int(args.gamma), a, grid, variant, reps, args.seed, _threads(args), args.level
    )
    preset = TuningPreset(a, t_diag, t_off, d1, d2, args.ell or 0, Provenance.MONTE_CARLO)
    with _out(args.output) as out:
        out.write(json.dumps(preset.to_dict(), indent=2) + "\n")
    return 0


def cmd_preset(args) -> int:
    if args.gamma is None:
        raise UsageError("--gamma is required")
    beta = args.beta if args.beta is not None else 1.0
    preset = theoretical_preset(args.p, args.gamma, beta, args.alpha, s_hint=args.s_hint)
    with _out(args.output) as out:
        out.write(json.dumps(preset.to_dict(), indent=2) + "\n")
    return 0


COMMANDS = {
    "detect": cmd_detect,
    "simulate-coverage": cmd_simulate_coverage,
    "simulate-support": cmd_simulate_support,
    "calibrate": cmd_calibrate,
    "preset": cmd_preset,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="ocdci: %(message)s", force=True)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, OSError, KeyError) as exc:
        log.error("error: %s", exc)
        return 2 if isinstance(exc, UsageError) else 1


if __name__ == "__main__":
    sys.exit(main())
