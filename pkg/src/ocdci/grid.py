"""Dyadic grid of signed scales shared by every detection statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ScaleGrid:
    """Positive scale magnitudes derived from the dimension and signal lower bound.

    Parameters
    ----------
    p : int
        Data dimension, at least 2.
    beta : float
        Lower bound on the l2-norm of the mean change.

    Notes
    -----
    ``b_min = beta / sqrt(2**levels * log2(2p))`` with ``levels = floor(log2(2p))``.
    The "small" set holds ``b_min`` alone; the "large" set holds
    ``2**(l/2) * b_min`` for ``l = 1..levels``. Both are used with either sign.
    """

    p: int
    beta: float
    levels: int = field(init=False)
    b_min: float = field(init=False)
    scales_B: tuple[float, ...] = field(init=False)

    def __post_init__(self) -> None:
        if int(self.p) != self.p or self.p < 2:
            raise ValueError(f"p must be an integer >= 2, got {self.p!r}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta!r}")
        log2_2p = math.log2(2 * self.p)
        # integer bit_length avoids floor(log2) rounding at exact powers of two
        levels = (2 * self.p).bit_length() - 1
        b_min = self.beta / math.sqrt(2.0**levels * log2_2p)
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "b_min", b_min)
        object.__setattr__(
            self, "scales_B", tuple(2.0 ** (ell / 2) * b_min for ell in range(1, levels + 1))
        )

    @property
    def scales_B0(self) -> tuple[float, ...]:
        return (self.b_min,)

    @property
    def positive_scales(self) -> tuple[float, ...]:
        """All positive magnitudes, smallest (``b_min``) first."""
        return self.scales_B0 + self.scales_B

    def signed_scales(self) -> np.ndarray:
        """Signed scales in tie-break order: magnitude ascending, + before -.

        Index 0 and 1 are ``+b_min`` and ``-b_min``; indices ``>= 2`` form the
        large set over which the off-diagonal statistic is maximised.
        """
        out = np.empty(2 * len(self.positive_scales))
        mags = np.asarray(self.positive_scales)
        out[0::2] = mags
        out[1::2] = -mags
        return out

    @property
    def n_signed(self) -> int:
        return 2 * (self.levels + 1)

    def scale_index(self, b: float) -> int:
        """Index of the signed scale ``b`` in :meth:`signed_scales`."""
        idx = np.flatnonzero(self.signed_scales() == b)
        if idx.size == 0:
            raise KeyError(f"{b!r} is not a grid scale")
        return int(idx[0])


def build_scale_grid(p: int, beta: float) -> ScaleGrid:
    return ScaleGrid(p, beta)
