"""Synthetic change scenarios and Monte Carlo experiment runners."""

from __future__ import annotations

import csv
import enum
import io
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .calibration import rep_rng
from .detector import DetectorConfig, Variant, feed, new_state
from .grid import ScaleGrid
from .inference import (
    InferenceConfig,
    _Rows,
    estimate_support,
    run_ocd_ci,
    select_anchor,
)


class Shape(enum.Enum):
    SPHERE_UNIFORM = "sphere"
    UNIFORM = "uniform"
    INV_SQRT = "inv-sqrt"
    HARMONIC = "harmonic"
    EXPLICIT = "explicit"


def sample_signal(p: int, s: int, vartheta: float, shape: Shape | str, rng=None) -> np.ndarray:
    """Post-change mean vector with ``s`` non-zeros and l2-norm ``vartheta``.

    ``SPHERE_UNIFORM`` places a uniformly random direction on a uniformly chosen
    ``s``-subset; the deterministic shapes put ``1``, ``j**-1/2`` or ``1/j`` on the
    first ``s`` coordinates.
    """
    shape = Shape(shape)
    if not 1 <= s <= p:
        raise ValueError(f"need 1 <= s <= p, got s={s}, p={p}")
    if not vartheta > 0:
        raise ValueError(f"vartheta must be positive, got {vartheta!r}")
    theta = np.zeros(p)
    j = np.arange(1, s + 1, dtype=float)
    if shape is Shape.SPHERE_UNIFORM:
        rng = np.random.default_rng(rng)
        idx = np.sort(rng.choice(p, size=s, replace=False))
        u = rng.standard_normal(s)
        while not np.any(u):
            u = rng.standard_normal(s)
        theta[idx] = u
    elif shape is Shape.UNIFORM:
        theta[:s] = 1.0
    elif shape is Shape.INV_SQRT:
        theta[:s] = j**-0.5
    elif shape is Shape.HARMONIC:
        theta[:s] = 1.0 / j
    else:
        raise ValueError("EXPLICIT signals are supplied directly, not sampled")
    return theta * (vartheta / np.linalg.norm(theta))


@dataclass(frozen=True)
class ChangeScenario:
    """Gaussian stream with identity covariance whose mean jumps from 0 to ``theta`` after ``z`` steps."""

    z: int
    theta: np.ndarray
    shape: Shape = Shape.EXPLICIT

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @property
    def vartheta(self) -> float:
        return float(np.linalg.norm(self.theta))

    def stream(self, rng: np.random.Generator, chunk: int = 1024):
        """Endless generator of ``(m, p)`` blocks."""
        n = 0
        while True:
            block = rng.standard_normal((chunk, self.p))
            # block row i is time n + i + 1; the mean shifts for times > z
            first_post = max(self.z - n, 0)
            if first_post < chunk:
                block[first_post:] += self.theta
            n += chunk
            yield block


@dataclass(frozen=True)
class EffectiveSupportReport:
    s_eff: int
    support: tuple[int, ...]
    support_beta: tuple[int, ...]


def effective_support(theta, grid: ScaleGrid) -> EffectiveSupportReport:
    """Effective sparsity/support of ``theta`` and the set of coordinates at least ``b_min``.

    The effective sparsity is the smallest ``s`` in ``1, 2, 4, ..., 2**floor(log2 p)``
    such that at least ``s`` coordinates satisfy
    ``|theta_j| >= ||theta||_2 / sqrt(s log2(2p))``.
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    if p != grid.p:
        raise ValueError("theta dimension does not match the grid")
    norm = float(np.linalg.norm(theta))
    if norm == 0:
        raise ValueError("effective support is undefined for the zero vector")
    mag = np.abs(theta)
    log2_2p = math.log2(2 * p)
    # relative slack so exact-arithmetic boundary cases are not lost to rounding
    slack = 1 - 1e-12
    s_eff, members = None, None
    s = 1
    while s <= p:
        members = np.flatnonzero(mag >= slack * norm / math.sqrt(s * log2_2p))
        if members.size >= s:
            s_eff = s
            break
        s *= 2
    if s_eff is None:
        s_eff = s // 2
    s_beta = np.flatnonzero(mag >= grid.b_min)
    return EffectiveSupportReport(s_eff, tuple(int(j) for j in members), tuple(int(j) for j in s_beta))


def proportion_se(p_hat: float, n: int) -> float:
    return math.sqrt(p_hat * (1 - p_hat) / n) if n else math.nan


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se


@dataclass
class RunRecord:
    """Outcome of one simulated repetition (``N`` is ``None`` when censored)."""

    N: int | None
    covered: bool = False
    length: int = 0
    false_alarm: bool = False
    fp_free: bool = False
    fn_free: bool = False


@dataclass
class ExperimentReport:
    reps: int
    censored: int
    coverage: float
    coverage_se: float
    mean_ci_length: float
    mean_ci_length_se: float
    mean_delay: float
    mean_delay_se: float
    false_alarm_rate: float
    support_fp_free_rate: float
    support_fn_free_rate: float

    COLUMNS = (
        "reps",
        "censored",
        "coverage",
        "coverage_se",
        "mean_ci_length",
        "mean_ci_length_se",
        "mean_delay",
        "mean_delay_se",
        "false_alarm_rate",
        "support_fp_free_rate",
        "support_fn_free_rate",
    )

    @classmethod
    def from_records(cls, records: Sequence[RunRecord], z: int) -> ExperimentReport:
        done = [r for r in records if r.N is not None]
        k = len(done)
        cov = sum(r.covered for r in done) / k if k else math.nan
        length, length_se = _mean_se([r.length for r in done])
        delay, delay_se = _mean_se([r.N - z for r in done if r.N > z])
        fa = sum(r.false_alarm for r in done) / k if k else math.nan
        fp = sum(r.fp_free for r in done) / k if k else math.nan
        fn = sum(r.fn_free for r in done) / k if k else math.nan
        return cls(
            reps=len(records),
            censored=len(records) - k,
            coverage=cov,
            coverage_se=proportion_se(cov, k),
            mean_ci_length=length,
            mean_ci_length_se=length_se,
            mean_delay=delay,
            mean_delay_se=delay_se,
            false_alarm_rate=fa,
            support_fp_free_rate=fp,
            support_fn_free_rate=fn,
        )

    def row(self) -> dict:
        return {k: _fmt_cell(v) for k, v in asdict(self).items()}


def _fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return f"{v:.6g}"


def write_csv(rows: Sequence[dict], fh=None) -> str:
    """Write dict rows as CSV (header from the first row); return the text."""
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def default_horizon(z: int, p: int, s: int, vartheta: float, beta: float) -> int:
    """Censoring horizon: ``z`` plus 50 times a crude delay scale."""
    log2_2p = math.log2(2 * p)
    scale = max(1.0, s * log2_2p / beta**2, log2_2p / vartheta**2)
    return z + 50 * math.ceil(scale)


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of a signal-generating scenario; a fresh signal is drawn per repetition for ``SPHERE_UNIFORM``."""

    p: int
    s: int
    vartheta: float
    z: int
    shape: Shape = Shape.SPHERE_UNIFORM
    theta: tuple[float, ...] | None = None

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.theta is not None:
            return np.asarray(self.theta, dtype=float)
        return sample_signal(self.p, self.s, self.vartheta, self.shape, rng)


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _one_coverage_run(spec, det_config, inf_config, seed, rep, horizon) -> RunRecord:
    rng = rep_rng(seed, rep)
    theta = spec.draw(rng)
    scenario = ChangeScenario(spec.z, theta)
    chunk = 256
    rows = _Rows(_bounded(scenario.stream(rng, chunk), horizon + inf_config.ell, chunk), spec.p)
    res = run_ocd_ci(rows, det_config, inf_config)
    if res is None:
        return RunRecord(N=None)
    N = res.anchor.N
    truth = effective_support(theta, det_config.grid)
    picked = set(res.support)
    return RunRecord(
        N=N,
        covered=res.covers(spec.z),
        length=res.length,
        false_alarm=N <= spec.z,
        fp_free=picked <= set(truth.support_beta),
        fn_free=(picked | {res.anchor.anchor_j}) >= set(truth.support),
    )


def _bounded(blocks, total: int, chunk: int):
    left = total
    for blk in blocks:
        if left <= 0:
            return
        yield blk[:left]
        left -= chunk


def run_coverage_experiment(
    spec: ScenarioSpec,
    det_config: DetectorConfig,
    inf_config: InferenceConfig,
    reps: int,
    seed: int = 0,
    threads: int = 1,
    horizon: int | None = None,
) -> ExperimentReport:
    """Coverage, interval length, delay and support indicators over ``reps`` runs.

    Runs that do not declare by ``horizon`` are censored and excluded from the
    proportions; their count is reported.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    if horizon is None:
        horizon = default_horizon(spec.z, spec.p, spec.s, spec.vartheta, det_config.grid.beta)
    records = _map(
        lambda r: _one_coverage_run(spec, det_config, inf_config, seed, r, horizon),
        range(reps),
        threads,
    )
    return ExperimentReport.from_records(records, spec.z)


@dataclass
class SupportTable:
    """Support recovery estimates per ``d1`` value.

    ``selection_freq[i, j]`` is the fraction of declared runs with coordinate
    ``j`` in the support estimate augmented by the anchor, at ``d1_values[i]``.
    """

    d1_values: np.ndarray
    fp_free: np.ndarray
    fn_free: np.ndarray
    selection_freq: np.ndarray
    reps: int
    declared: int

    def rows(self) -> list[dict]:
        out = []
        for i, d1 in enumerate(self.d1_values):
            out.append(
                {
                    "d1": _fmt_cell(float(d1)),
                    "fp_free_rate": _fmt_cell(float(self.fp_free[i])),
                    "fp_free_se": _fmt_cell(proportion_se(float(self.fp_free[i]), self.declared)),
                    "fn_free_rate": _fmt_cell(float(self.fn_free[i])),
                    "fn_free_se": _fmt_cell(proportion_se(float(self.fn_free[i]), self.declared)),
                    "reps": str(self.reps),
                    "declared": str(self.declared),
                }
            )
        return out


def _one_support_run(spec, det_config, ell, d1_values, seed, rep, horizon):
    rng = rep_rng(seed, rep)
    theta = spec.draw(rng)
    scenario = ChangeScenario(spec.z, theta)
    chunk = 256
    rows = _Rows(_bounded(scenario.stream(rng, chunk), horizon + ell, chunk), spec.p)
    state = new_state(det_config)
    while not state.declared:
        blk = rows.block()
        if blk is None:
            return None
        rows.advance(feed(state, det_config, blk))
    extras = rows.take(ell)
    anchor, xi = select_anchor(state, det_config, extras if ell else None)
    truth = effective_support(theta, det_config.grid)
    sb, s_eff = set(truth.support_beta), set(truth.support)
    fp, fn = [], []
    sel = np.zeros((len(d1_values), spec.p), dtype=bool)
    for i, d1 in enumerate(d1_values):
        support, _ = estimate_support(xi, anchor, det_config.grid, d1)
        picked = set(support)
        fp.append(picked <= sb)
        fn.append((picked | {anchor.anchor_j}) >= s_eff)
        sel[i, list(support)] = True
        sel[i, anchor.anchor_j] = True
    return np.array(fp), np.array(fn), sel


def run_support_experiment(
    spec: ScenarioSpec,
    det_config: DetectorConfig,
    d1_values: Sequence[float],
    ell: int = 0,
    reps: int = 100,
    seed: int = 0,
    threads: int = 1,
    horizon: int | None = None,
) -> SupportTable:
    """Estimate ``P(S_hat within S_beta)`` and ``P(S_hat + anchor covers S)`` across a ``d1`` sweep.

    The detector runs once per repetition; each ``d1`` reuses its statistics.
    """
    d1_values = np.asarray(d1_values, dtype=float)
    if ell and det_config.variant is not Variant.OCD_PRIME:
        raise ValueError("ell > 0 requires the OCD_PRIME variant")
    if horizon is None:
        horizon = default_horizon(spec.z, spec.p, spec.s, spec.vartheta, det_config.grid.beta)
    results = _map(
        lambda r: _one_support_run(spec, det_config, ell, d1_values, seed, r, horizon),
        range(reps),
        threads,
    )
    done = [r for r in results if r is not None]
    k = len(done)
    if k == 0:
        nan = np.full(len(d1_values), np.nan)
        return SupportTable(d1_values, nan, nan, np.full((len(d1_values), spec.p), np.nan), reps, 0)
    fp = np.mean([r[0] for r in done], axis=0)
    fn = np.mean([r[1] for r in done], axis=0)
    freq = np.mean([r[2] for r in done], axis=0)
    return SupportTable(d1_values, fp, fn, freq, reps, k)
