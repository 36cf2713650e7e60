"""Thresholds and tuning parameters: closed-form presets and Monte Carlo calibration."""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .detector import DetectorConfig, Variant, feed, new_state
from .grid import ScaleGrid


class Provenance(enum.Enum):
    THEORETICAL = "theoretical"
    PRACTICAL = "practical"
    MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class TuningPreset:
    a: float
    T_diag: float
    T_off: float
    d1: float
    d2: float
    ell: int = 0
    provenance: Provenance = Provenance.THEORETICAL

    def to_dict(self) -> dict:
        out = asdict(self)
        out["provenance"] = Provenance(self.provenance).value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> TuningPreset:
        data = dict(data)
        data["provenance"] = Provenance(data.get("provenance", "theoretical"))
        data["ell"] = int(data.get("ell", 0))
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> TuningPreset:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_common(p: int, alpha: float | None = None) -> None:
    if int(p) != p or p < 2:
        raise ValueError(f"p must be an integer >= 2, got {p!r}")
    if alpha is not None and not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")


def theoretical_thresholds(p: int, gamma: float) -> tuple[float, float]:
    """``(log(16 p gamma log2(4p)), 8 log(16 p gamma log2(2p)))``."""
    _check_common(p)
    if not gamma >= 1:
        raise ValueError(f"gamma must be >= 1, got {gamma!r}")
    t_diag = math.log(16 * p * gamma * math.log2(4 * p))
    t_off = 8 * math.log(16 * p * gamma * math.log2(2 * p))
    return t_diag, t_off


def theoretical_preset(
    p: int,
    gamma: float,
    beta: float,
    alpha: float,
    c1: float = math.sqrt(8),
    c2: float = 1.0,
    s_hint: int | None = None,
    c3: float = 1.0,
) -> TuningPreset:
    """Closed-form tuning from the coverage/length/support guarantees.

    ``ell`` is only set when ``s_hint >= 2``: ``ceil(c3 (a**2 s log2(2p) / beta**2 + 1))``.
    """
    _check_common(p, alpha)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    if not (c1 > 0 and c2 > 0 and c3 > 0):
        raise ValueError("constants c1, c2, c3 must be positive")
    t_diag, t_off = theoretical_thresholds(p, gamma)
    a = c1 * math.sqrt(math.log(p * gamma * max(beta**-2, 1.0) / alpha))
    d1 = c2 * a
    ell = 0
    if s_hint is not None and s_hint >= 2:
        ell = math.ceil(c3 * (a**2 * s_hint * math.log2(2 * p) / beta**2 + 1))
    return TuningPreset(a, t_diag, t_off, d1, 4 * d1**2, ell, Provenance.THEORETICAL)


def practical_preset(p: int, alpha: float, c: float = 0.5) -> tuple[float, float, float]:
    """``a = sqrt(2 log p)``, ``d1 = c sqrt(log(p / alpha))``, ``d2 = 4 d1**2``."""
    _check_common(p, alpha)
    if not c > 0:
        raise ValueError(f"c must be positive, got {c!r}")
    a = math.sqrt(2 * math.log(p))
    d1 = c * math.sqrt(math.log(p / alpha))
    return a, d1, 4 * d1**2


def support_extra_samples(a: float, s: int, beta: float, p: int) -> int:
    """``ceil(a**2 s log2(2p) / beta**2)`` extra observations used for support recovery."""
    return math.ceil(a**2 * s * math.log2(2 * p) / beta**2)


def rep_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent generator for repetition ``rep`` of an experiment seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep)]))


def _null_run_maxima(config: DetectorConfig, gamma: int, seed: int, rep: int, chunk: int) -> tuple[float, float]:
    rng = rep_rng(seed, rep)
    state = new_state(config)
    remaining = gamma
    while remaining:
        m = min(chunk, remaining)
        feed(state, config, rng.standard_normal((m, config.p)))
        remaining -= m
    return state.max_S_diag, state.max_S_off


def null_maxima(
    p: int,
    gamma: int,
    a: float,
    grid: ScaleGrid,
    variant: Variant | str = Variant.OCD,
    reps: int = 100,
    seed: int = 0,
    threads: int = 1,
    chunk: int = 4096,
) -> np.ndarray:
    """Per-run maxima over ``gamma`` null steps of ``(S_diag, S_off)``, shape ``(reps, 2)``."""
    if grid.p != p:
        raise ValueError("grid dimension does not match p")
    if int(gamma) != gamma or gamma < 1:
        raise ValueError(f"gamma must be a positive integer, got {gamma!r}")
    config = DetectorConfig(grid, a, math.inf, math.inf, Variant(variant))
    jobs = range(reps)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda r: _null_run_maxima(config, int(gamma), seed, r, chunk), jobs))
    else:
        rows = [_null_run_maxima(config, int(gamma), seed, r, chunk) for r in jobs]
    return np.array(rows, dtype=float).reshape(reps, 2)


def thresholds_from_maxima(maxima: np.ndarray, level: float = 0.5) -> tuple[float, float]:
    """Empirical ``level``-quantiles of the per-run maxima of each statistic."""
    t_diag, t_off = np.quantile(maxima, level, axis=0)
    return float(t_diag), float(t_off)


def monte_carlo_thresholds(
    p: int,
    gamma: int,
    a: float,
    grid: ScaleGrid,
    variant: Variant | str = Variant.OCD,
    reps: int = 200,
    seed: int = 0,
    threads: int = 1,
    level: float = 0.5,
) -> tuple[float, float]:
    """Thresholds at the empirical ``level``-quantile of null maxima over horizon ``gamma``.

    The default splits the false alarm budget evenly: each statistic alone
    crosses its threshold by ``gamma`` in about half of the null runs.
    """
    if reps < 50:
        raise ValueError(f"need at least 50 repetitions, got {reps}")
    if not 0 < level < 1:
        raise ValueError(f"quantile level must lie in (0, 1), got {level!r}")
    maxima = null_maxima(p, gamma, a, grid, variant, reps, seed, threads)
    return thresholds_from_maxima(maxima, level)
