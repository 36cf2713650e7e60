"""Online multiscale CUSUM detector for a sparse mean change.

The state holds, for every coordinate ``j`` and signed scale ``b``, the residual
tail length ``t`` and the partial sums of all coordinates over that tail.  The
``OCD_PRIME`` variant additionally keeps a dyadically reset reduced tail
(``tau``, ``Lam``) lying in ``[t/2, 3t/4]`` for ``t >= 2``, plus the running
auxiliary tail (``tau_t``, ``Lam_t``) used to rebuild it.

Memory is ``O(p^2 log p)`` and never depends on the number of observations.
"""

from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ._kernels import argmax_q, run_kernel
from .grid import ScaleGrid


class Variant(enum.Enum):
    OCD = "ocd"
    OCD_PRIME = "ocd-prime"


@dataclass(frozen=True)
class DetectorConfig:
    grid: ScaleGrid
    a: float
    T_diag: float
    T_off: float
    variant: Variant = Variant.OCD

    def __post_init__(self) -> None:
        if not self.a >= 0:
            raise ValueError(f"hard threshold a must be >= 0, got {self.a!r}")
        if not (self.T_diag > 0 and self.T_off > 0):
            raise ValueError("declaration thresholds must be positive")
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def p(self) -> int:
        return self.grid.p


@dataclass(frozen=True)
class Declaration:
    """Stopping time and the anchor (coordinate, signed scale) pair.

    ``anchor_j`` is 0-based.
    """

    N: int
    anchor_j: int
    anchor_b: float


@dataclass(frozen=True)
class StepOutcome:
    declared: bool
    S_diag: float
    S_off: float
    declaration: Declaration | None = None


@dataclass
class DetectorState:
    """Per-stream detector state.  Arrays are indexed ``[scale, coordinate(, coordinate)]``.

    ``A[k, j, i]`` is the sum of coordinate ``i`` over the last ``t[k, j]``
    observations, i.e. the ``(i, j)`` entry of the tail partial-sum matrix at
    scale ``scales[k]``.  ``Lam``/``Lam_t`` follow the same layout.
    """

    p: int
    beta: float
    variant: Variant
    n: int = 0
    t: np.ndarray = field(repr=False, default=None)
    A: np.ndarray = field(repr=False, default=None)
    tau: np.ndarray = field(repr=False, default=None)
    tau_t: np.ndarray = field(repr=False, default=None)
    Lam: np.ndarray = field(repr=False, default=None)
    Lam_t: np.ndarray = field(repr=False, default=None)
    Q: np.ndarray = field(repr=False, default=None)
    last_S_diag: float = -math.inf
    last_S_off: float = -math.inf
    max_S_diag: float = -math.inf
    max_S_off: float = -math.inf
    declared: bool = False

    @property
    def grid(self) -> ScaleGrid:
        return ScaleGrid(self.p, self.beta)

    @property
    def prime(self) -> bool:
        return self.variant is Variant.OCD_PRIME

    @property
    def nbytes(self) -> int:
        arrays = (self.t, self.A, self.tau, self.tau_t, self.Lam, self.Lam_t, self.Q)
        return sum(arr.nbytes for arr in arrays)

    def standardized(self) -> np.ndarray:
        """Current standardized tail sums ``E``, same layout as ``A``."""
        num, tails = (self.Lam, self.tau) if self.prime else (self.A, self.t)
        root = np.sqrt(np.maximum(tails, 1).astype(float))
        return num / root[:, :, None]


def new_state(config: DetectorConfig) -> DetectorState:
    grid = config.grid
    nb, p = grid.n_signed, grid.p
    if config.variant is Variant.OCD_PRIME:
        extra = dict(
            tau=np.zeros((nb, p), np.int64),
            tau_t=np.zeros((nb, p), np.int64),
            Lam=np.zeros((nb, p, p)),
            Lam_t=np.zeros((nb, p, p)),
        )
    else:
        extra = dict(
            tau=np.zeros((0, 0), np.int64),
            tau_t=np.zeros((0, 0), np.int64),
            Lam=np.zeros((0, 0, 0)),
            Lam_t=np.zeros((0, 0, 0)),
        )
    return DetectorState(
        p=p,
        beta=grid.beta,
        variant=config.variant,
        t=np.zeros((nb, p), np.int64),
        A=np.zeros((nb, p, p)),
        Q=np.zeros((nb, p)),
        **extra,
    )


def _check_compatible(state: DetectorState, config: DetectorConfig) -> None:
    if state.p != config.p or state.beta != config.grid.beta or state.variant is not config.variant:
        raise ValueError("detector state was built for a different configuration")
    if state.declared:
        raise RuntimeError("detector has already declared a change; start a new state")


def anchor_tie_key(num: np.ndarray, tails: np.ndarray, ell: int = 0) -> np.ndarray:
    """``|num[k, j, j]| / sqrt((tails + ell) v 1)``: breaks ties in the anchor argmax without using labels."""
    diag = np.abs(np.diagonal(num, axis1=1, axis2=2))
    return diag / np.sqrt(np.maximum(tails + ell, 1))


def _declaration(state: DetectorState, scales: np.ndarray) -> Declaration:
    num, tails = (state.Lam, state.tau) if state.prime else (state.A, state.t)
    j, k = argmax_q(state.Q, anchor_tie_key(num, tails), 2)
    return Declaration(N=state.n, anchor_j=int(j), anchor_b=float(scales[k]))


def feed(state: DetectorState, config: DetectorConfig, X: np.ndarray) -> int:
    """Consume rows of ``X`` until declaration.

    Returns the number of rows consumed.  If a change was declared the last
    consumed row is the declaring one and ``state.declared`` is set.
    """
    _check_compatible(state, config)
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != state.p:
        raise ValueError(f"expected observations of shape (n, {state.p}), got {X.shape}")
    if X.shape[0] == 0:
        return 0
    track = np.array([state.last_S_diag, state.last_S_off, state.max_S_diag, state.max_S_off])
    r = run_kernel(
        X,
        config.grid.signed_scales(),
        2,
        float(config.a),
        state.prime,
        float(config.T_diag),
        float(config.T_off),
        state.t,
        state.A,
        state.tau,
        state.tau_t,
        state.Lam,
        state.Lam_t,
        state.Q,
        track,
    )
    consumed = X.shape[0] if r < 0 else r + 1
    state.n += consumed
    state.last_S_diag, state.last_S_off, state.max_S_diag, state.max_S_off = map(float, track)
    state.declared = r >= 0
    return consumed


def step(state: DetectorState, config: DetectorConfig, x) -> StepOutcome:
    """Process one observation vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (state.p,):
        raise ValueError(f"expected a vector of length {state.p}, got shape {x.shape}")
    feed(state, config, x[None, :])
    decl = _declaration(state, config.grid.signed_scales()) if state.declared else None
    return StepOutcome(state.declared, state.last_S_diag, state.last_S_off, decl)


def declaration_of(state: DetectorState) -> Declaration:
    """Anchor pair maximising the current off-diagonal statistic."""
    return _declaration(state, state.grid.signed_scales())


def tail_length_oracle(xs, b: float) -> int:
    """Smallest maximiser over ``h`` of ``sum_{i > n-h} b (x_i - b/2)``, by enumeration."""
    best_h, best = 0, 0.0
    total = 0.0
    vals = xs.tolist() if isinstance(xs, np.ndarray) else [float(v) for v in xs]
    for h, x in enumerate(reversed(vals), start=1):
        total += b * (x - b / 2)
        if total > best:
            best_h, best = h, total
    return best_h


# -- snapshot format ----------------------------------------------------------
#
# little-endian: magic(4s) version(u16) variant(u8) pad(u8) p(u32) n_scales(u32)
# beta(f64) n(u64) declared(u8) pad(7x) last_S_diag last_S_off max_S_diag max_S_off (4 x f64)
# then t(i64) A(f64) [tau tau_t (i64) Lam Lam_t (f64)] Q(f64), C order.

_MAGIC = b"OCDS"
_VERSION = 1
_HEADER = struct.Struct("<4sHBxII d Q B7x 4d")
_VARIANT_CODE = {Variant.OCD: 0, Variant.OCD_PRIME: 1}


def snapshot(state: DetectorState) -> bytes:
    nb = state.t.shape[0]
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(
            _MAGIC,
            _VERSION,
            _VARIANT_CODE[state.variant],
            state.p,
            nb,
            state.beta,
            state.n,
            int(state.declared),
            state.last_S_diag,
            state.last_S_off,
            state.max_S_diag,
            state.max_S_off,
        )
    )
    arrays = [state.t, state.A]
    if state.prime:
        arrays += [state.tau, state.tau_t, state.Lam, state.Lam_t]
    arrays.append(state.Q)
    for arr in arrays:
        buf.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))
    return buf.getvalue()


def restore(data: bytes) -> DetectorState:
    if len(data) < _HEADER.size:
        raise ValueError("snapshot truncated: header incomplete")
    (magic, version, vcode, p, nb, beta, n, declared, *stats) = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a detector snapshot (bad magic)")
    if version != _VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    variant = {v: k for k, v in _VARIANT_CODE.items()}.get(vcode)
    if variant is None:
        raise ValueError(f"unknown variant code {vcode}")
    grid = ScaleGrid(p, beta)
    if grid.n_signed != nb:
        raise ValueError("scale count does not match (p, beta)")
    shapes = [("t", "<i8", (nb, p)), ("A", "<f8", (nb, p, p))]
    if variant is Variant.OCD_PRIME:
        shapes += [
            ("tau", "<i8", (nb, p)),
            ("tau_t", "<i8", (nb, p)),
            ("Lam", "<f8", (nb, p, p)),
            ("Lam_t", "<f8", (nb, p, p)),
        ]
    shapes.append(("Q", "<f8", (nb, p)))
    expected = _HEADER.size + sum(8 * math.prod(shape) for _, _, shape in shapes)
    if len(data) != expected:
        raise ValueError(f"snapshot has {len(data)} bytes, expected {expected}")
    state = new_state(DetectorConfig(grid, 0.0, 1.0, 1.0, variant))
    offset = _HEADER.size
    for name, dtype, shape in shapes:
        count = math.prod(shape)
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
        setattr(state, name, arr.astype(arr.dtype.newbyteorder("="), copy=True))
        offset += 8 * count
    state.n = n
    state.declared = bool(declared)
    state.last_S_diag, state.last_S_off, state.max_S_diag, state.max_S_off = stats
    return state
