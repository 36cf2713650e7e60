"""Compiled inner loops for the streaming detector.

Array layout: ``A[k, j, i]`` is the tail partial sum of coordinate ``i`` over
the residual tail window of coordinate ``j`` at signed scale ``scales[k]``.
In matrix notation this is the ``(i, j)`` entry; storing it transposed keeps
each window contiguous.

Only the Q aggregate is compiled with reassociation allowed (so the masked sum
vectorizes); everything else is strict IEEE arithmetic.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, fastmath={"reassoc", "nsz"})
def column_q(col, j, tail, a):
    """Sum of ``(v / sqrt(tail))**2`` over entries with ``|v / sqrt(tail)| >= a``, skipping ``j``.

    Evaluated as ``sum(v**2 [v**2 >= a**2 tail]) / tail`` to stay division-free
    in the inner loop. ``tail`` must already be clamped to at least 1.
    """
    thr = a * a * tail
    q = 0.0
    for i in range(col.shape[0]):
        v2 = col[i] * col[i]
        q += v2 if (v2 >= thr) & (i != j) else 0.0
    return q / tail


@njit(cache=True, nogil=True)
def step_kernel(x, scales, n_small, a, prime, t, A, tau, tau_t, lam, lam_t, Q):
    """Advance every (scale, coordinate) recursion by one observation.

    Returns ``(S_diag, S_off)`` evaluated after the reset branch.
    """
    nb, p = t.shape
    s_diag = -np.inf
    s_off = -np.inf
    for k in range(nb):
        b = scales[k]
        for j in range(p):
            tj = t[k, j] + 1
            diag = A[k, j, j] + x[j]
            if b * diag - b * b * tj / 2.0 <= 0.0:
                if t[k, j] > 0:
                    A[k, j, :] = 0.0
                    if prime:
                        lam[k, j, :] = 0.0
                        lam_t[k, j, :] = 0.0
                        tau[k, j] = 0
                        tau_t[k, j] = 0
                t[k, j] = 0
                Q[k, j] = 0.0
                stat = 0.0
            else:
                t[k, j] = tj
                col = A[k, j]
                for i in range(p):
                    col[i] += x[i]
                if prime:
                    lc = lam[k, j]
                    lt = lam_t[k, j]
                    if tj & (tj - 1) == 0:
                        # tail length hit a power of two: promote the reduced tail
                        tau[k, j] = tau_t[k, j] + 1
                        tau_t[k, j] = 0
                        for i in range(p):
                            lc[i] = lt[i] + x[i]
                        lt[:] = 0.0
                    else:
                        tau[k, j] += 1
                        tau_t[k, j] += 1
                        for i in range(p):
                            lc[i] += x[i]
                        for i in range(p):
                            lt[i] += x[i]
                    Q[k, j] = column_q(lc, j, float(max(tau[k, j], 1)), a)
                else:
                    Q[k, j] = column_q(col, j, float(tj), a)
                stat = b * A[k, j, j] - b * b * tj / 2.0
            if stat > s_diag:
                s_diag = stat
            if k >= n_small and Q[k, j] > s_off:
                s_off = Q[k, j]
    return s_diag, s_off


@njit(cache=True, nogil=True)
def run_kernel(X, scales, n_small, a, prime, t_diag, t_off, t, A, tau, tau_t, lam, lam_t, Q, track):
    """Feed rows of ``X`` until a threshold is crossed.

    ``track`` receives ``[last S_diag, last S_off, max S_diag, max S_off]`` over
    the rows consumed. Returns the index of the declaring row, or -1.
    """
    for r in range(X.shape[0]):
        sd, so = step_kernel(X[r], scales, n_small, a, prime, t, A, tau, tau_t, lam, lam_t, Q)
        track[0] = sd
        track[1] = so
        if sd > track[2]:
            track[2] = sd
        if so > track[3]:
            track[3] = so
        if sd >= t_diag or so >= t_off:
            return r
    return -1


@njit(cache=True, nogil=True)
def xi_kernel(num, tails, ell, a, n_small, xi, q):
    """Standardize window sums by ``sqrt((tail + ell) v 1)`` and aggregate.

    ``num`` already includes the sum of the ``ell`` extra observations.
    """
    nb, p = tails.shape
    for k in range(nb):
        for j in range(p):
            tail = float(max(tails[k, j] + ell, 1))
            root = math.sqrt(tail)
            for i in range(p):
                xi[k, j, i] = num[k, j, i] / root
            if k >= n_small:
                q[k, j] = column_q(num[k, j], j, tail, a)
            else:
                q[k, j] = 0.0


@njit(cache=True, nogil=True)
def argmax_q(Q, D, n_small):
    """Maximiser of ``Q`` over the large scales.

    Ties in ``Q`` go to the larger ``D`` (a label-free key such as the anchor's
    own standardized sum), then to the first pair in (coordinate, scale-index)
    order.
    """
    nb, p = Q.shape
    best = -np.inf
    best_d = -np.inf
    bj = 0
    bk = n_small
    for j in range(p):
        for k in range(n_small, nb):
            q = Q[k, j]
            if q > best or (q == best and D[k, j] > best_d):
                best = q
                best_d = D[k, j]
                bj = j
                bk = k
    return bj, bk
