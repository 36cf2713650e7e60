"""Post-declaration inference: anchor selection, support estimate and changepoint interval."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ._kernels import argmax_q, xi_kernel
from .detector import (
    Declaration,
    DetectorConfig,
    DetectorState,
    Variant,
    feed,
    new_state,
)
from .grid import ScaleGrid


@dataclass(frozen=True)
class InferenceConfig:
    """Support threshold ``d1``, interval slack ``d2`` (default ``4 d1**2``) and extra samples ``ell``.

    ``alpha`` is carried for reporting only.
    """

    d1: float
    d2: float | None = None
    ell: int = 0
    alpha: float = 0.05

    def __post_init__(self) -> None:
        if not self.d1 > 0:
            raise ValueError(f"d1 must be positive, got {self.d1!r}")
        if self.d2 is None:
            object.__setattr__(self, "d2", 4 * self.d1**2)
        if not self.d2 > 0:
            raise ValueError(f"d2 must be positive, got {self.d2!r}")
        if int(self.ell) != self.ell or self.ell < 0:
            raise ValueError(f"ell must be a non-negative integer, got {self.ell!r}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")


@dataclass
class XiStatistics:
    """Window sums (plus extras) standardized by ``sqrt((tail + ell) v 1)``.

    ``xi[k, j, i]`` pairs coordinate ``i`` with the window of ``(j, scales[k])``;
    ``q[k, j]`` is the thresholded aggregate (zero for the two smallest scales).
    ``tails`` holds ``tau`` for the primed variant and ``t`` otherwise.
    """

    xi: np.ndarray
    q: np.ndarray
    tails: np.ndarray
    ell: int
    scales: np.ndarray


@dataclass
class InferenceResult:
    """Support estimate, shrunken scales and the interval ``[ci_left, ci_right]``.

    Coordinates are 0-based.  ``ci_right`` is the declaration time even when
    extra observations were used.
    """

    anchor: Declaration
    support: tuple[int, ...]
    shrunken_scales: dict[int, float]
    ci_left: int
    ci_right: int
    ell: int = 0
    extras_used: int = 0

    @property
    def length(self) -> int:
        return self.ci_right - self.ci_left

    @property
    def uninformative_left(self) -> bool:
        """True when the support estimate was empty, so the left end fell back to 0."""
        return not self.support

    def covers(self, z: int) -> bool:
        return self.ci_left <= z <= self.ci_right

    def to_record(self, **extra) -> dict:
        rec = {
            "N": self.anchor.N,
            "anchor_j": self.anchor.anchor_j,
            "anchor_b": _fmt(self.anchor.anchor_b),
            "support": list(self.support),
            "shrunken_scales": {str(j): _fmt(b) for j, b in sorted(self.shrunken_scales.items())},
            "ci_left": self.ci_left,
            "ci_right": self.ci_right,
            "uninformative_left": self.uninformative_left,
        }
        rec.update(extra)
        return rec

    def to_json(self, **extra) -> str:
        return json.dumps(self.to_record(**extra), sort_keys=False)


def _fmt(x: float) -> float:
    return float(f"{x:.6g}")


def xi_statistics(state: DetectorState, a: float, extras=None) -> XiStatistics:
    """Standardize the detector's window sums after adding ``extras`` (``ell x p``)."""
    p = state.p
    extras = np.zeros((0, p)) if extras is None else np.asarray(extras, dtype=float).reshape(-1, p)
    ell = extras.shape[0]
    num, tails = (state.Lam, state.tau) if state.prime else (state.A, state.t)
    if ell:
        num = num + extras.sum(axis=0)
    else:
        num = num.copy()
    xi = np.empty_like(num)
    q = np.empty(tails.shape)
    xi_kernel(num, tails, ell, float(a), 2, xi, q)
    return XiStatistics(xi=xi, q=q, tails=tails.copy(), ell=ell, scales=state.grid.signed_scales())


def select_anchor(
    state: DetectorState, config: DetectorConfig, extras=None, ell: int | None = None
) -> tuple[Declaration, XiStatistics]:
    """Argmax of the (extra-sample augmented) off-diagonal aggregate over coordinates and large scales."""
    if not state.declared:
        raise ValueError("anchor selection needs a declared detector state")
    n_extras = 0 if extras is None else len(extras)
    if ell is not None and n_extras != ell:
        raise ValueError(f"expected {ell} extra observations, got {n_extras}")
    if n_extras and not state.prime:
        raise ValueError("extra post-declaration observations require the OCD_PRIME variant")
    stats = xi_statistics(state, config.a, extras)
    key = np.abs(np.diagonal(stats.xi, axis1=1, axis2=2))
    j, k = argmax_q(stats.q, key, 2)
    return Declaration(N=state.n, anchor_j=int(j), anchor_b=float(stats.scales[k])), stats


def estimate_support(
    xi: XiStatistics, anchor: Declaration, grid: ScaleGrid, d1: float
) -> tuple[tuple[int, ...], dict[int, float]]:
    """Coordinates certified to carry signal, with their largest certified signed scale."""
    k = int(np.flatnonzero(xi.scales == anchor.anchor_b)[0])
    j_hat = anchor.anchor_j
    col = xi.xi[k, j_hat]
    root = math.sqrt(xi.tails[k, j_hat] + xi.ell)
    mags = np.asarray(grid.positive_scales)
    support, shrunk = [], {}
    for j in range(grid.p):
        if j == j_hat:
            continue
        v = abs(col[j])
        if v - grid.b_min * root >= d1:
            ok = v - mags * root >= d1
            # the smallest positive scale always qualifies here
            b = float(mags[np.flatnonzero(ok)[-1]])
            support.append(j)
            shrunk[j] = b if col[j] > 0 else -b
    return tuple(support), shrunk


def build_confidence_interval(
    state: DetectorState, shrunken_scales: dict[int, float], d2: float, n: int
) -> tuple[int, int]:
    budget = math.inf
    grid = state.grid
    for j, b in shrunken_scales.items():
        k = grid.scale_index(b)
        budget = min(budget, state.t[k, j] + d2 / b**2)
    if math.isinf(budget):
        return 0, n
    return max(math.floor(n - budget), 0), n


def univariate_ci(N: int, tail: int, b: float, alpha: float) -> tuple[int, int]:
    """Interval ``[N - tail - 4 q**2 / b**2, N]`` with ``q`` the ``1 - alpha/4`` normal quantile."""
    if not 0 <= tail <= N:
        raise ValueError(f"need 0 <= tail <= N, got tail={tail}, N={N}")
    if not b > 0:
        raise ValueError(f"b must be positive, got {b!r}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    slack = 4 * norm.ppf(1 - alpha / 4) ** 2 / b**2
    return max(math.floor(N - tail - slack), 0), N


def infer(
    state: DetectorState,
    det_config: DetectorConfig,
    inf_config: InferenceConfig,
    extras=None,
) -> InferenceResult:
    """Run the inference stage on a declared state."""
    anchor, xi = select_anchor(state, det_config, extras)
    support, shrunk = estimate_support(xi, anchor, det_config.grid, inf_config.d1)
    left, right = build_confidence_interval(state, shrunk, inf_config.d2, state.n)
    return InferenceResult(
        anchor=anchor,
        support=support,
        shrunken_scales=shrunk,
        ci_left=left,
        ci_right=right,
        ell=inf_config.ell,
        extras_used=xi.ell,
    )


class StreamExhausted(Exception):
    """The stream ended before the required post-declaration observations."""


class _Rows:
    """Row-buffered view over an iterable of vectors or blocks of vectors."""

    def __init__(self, source: Iterable, p: int):
        self._it = iter(source if not isinstance(source, np.ndarray) else [source])
        self._p = p
        self._buf = np.zeros((0, p))

    def _fill(self) -> bool:
        for item in self._it:
            arr = np.asarray(item, dtype=float)
            arr = arr.reshape(1, -1) if arr.ndim == 1 else arr
            if arr.ndim != 2 or arr.shape[1] != self._p:
                raise ValueError(f"stream item has shape {arr.shape}, expected (*, {self._p})")
            if arr.shape[0]:
                self._buf = arr
                return True
        return False

    def block(self) -> np.ndarray | None:
        if self._buf.shape[0] == 0 and not self._fill():
            return None
        return self._buf

    def advance(self, k: int) -> None:
        self._buf = self._buf[k:]

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            blk = self.block()
            if blk is None:
                raise StreamExhausted(f"needed {k} more observations")
            piece = blk[:k]
            out.append(piece)
            self.advance(piece.shape[0])
            k -= piece.shape[0]
        return np.concatenate(out) if out else np.zeros((0, self._p))


def run_ocd_ci(
    stream: Iterable,
    det_config: DetectorConfig,
    inf_config: InferenceConfig,
    state: DetectorState | None = None,
) -> InferenceResult | None:
    """Monitor ``stream`` until declaration, then build the interval and support estimate.

    ``stream`` may be a 2-d array or any iterable of vectors / row blocks.
    Returns ``None`` if the stream ends without a declaration.
    """
    if inf_config.ell and det_config.variant is not Variant.OCD_PRIME:
        raise ValueError("ell > 0 requires the OCD_PRIME variant")
    state = new_state(det_config) if state is None else state
    rows = stream if isinstance(stream, _Rows) else _Rows(stream, det_config.p)
    while not state.declared:
        blk = rows.block()
        if blk is None:
            return None
        rows.advance(feed(state, det_config, blk))
    extras = rows.take(inf_config.ell)
    return infer(state, det_config, inf_config, extras)
