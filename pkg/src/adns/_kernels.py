"""Hot numeric kernels.

The cyclic Jacobi sweep dominates eigendecomposition cost. Two
interchangeable implementations are provided: a scalar-loop kernel
compiled with numba, and a vectorized pure-numpy twin. Selection is
controlled by the ``ADNS_DISABLE_NUMBA`` environment variable (set to
``1`` to force the numpy path); ``benchmarks/bench_eig.py`` compares
the two.

Both kernels rotate ``a`` toward diagonal form in place while
accumulating the rotations into ``v``, and return
``(sweeps_done, off_diagonal_frobenius)``.
"""

import math
import os

import numpy as np


def _offdiag_fro(a):
    n = a.shape[0]
    acc = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            acc += 2.0 * a[p, q] * a[p, q]
    return math.sqrt(acc)


def _jacobi_sweeps_scalar(a, v, off_tol, max_sweeps):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = _offdiag_fro(a)
        if off <= off_tol:
            return sweep, off
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for i in range(n):
                    aip = a[p, i]
                    aiq = a[q, i]
                    a[p, i] = c * aip - s * aiq
                    a[q, i] = s * aip + c * aiq
                for i in range(n):
                    aip = a[i, p]
                    aiq = a[i, q]
                    a[i, p] = c * aip - s * aiq
                    a[i, q] = s * aip + c * aiq
                for i in range(n):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - s * viq
                    v[i, q] = s * vip + c * viq
    return max_sweeps, _offdiag_fro(a)


def jacobi_sweeps_numpy(a, v, off_tol, max_sweeps):
    """Vectorized twin of the scalar kernel (same math, numpy row/col ops)."""
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off_sq = np.sum(a * a) - np.sum(np.diag(a) ** 2)
        off = math.sqrt(max(off_sq, 0.0))
        if off <= off_tol:
            return sweep, off
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    off_sq = np.sum(a * a) - np.sum(np.diag(a) ** 2)
    return max_sweeps, math.sqrt(max(off_sq, 0.0))


def _numba_disabled():
    return os.environ.get("ADNS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


NUMBA_ENABLED = False
jacobi_sweeps_njit = None

if not _numba_disabled():
    try:
        from numba import njit

        jacobi_sweeps_njit = njit(cache=True)(_jacobi_sweeps_scalar)
        NUMBA_ENABLED = True
    except ImportError:
        pass

jacobi_sweeps = jacobi_sweeps_njit if NUMBA_ENABLED else jacobi_sweeps_numpy
