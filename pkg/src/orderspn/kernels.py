"""Hot kernels for the base-3 subset tables.

Each candidate position of a variable takes one of three states in a table
key: free (digit 0), required-present (1), required-absent (2). The sum and
max tables over all 3^m keys are built here, either with numba @njit loops
or a pure-numpy fallback. Set ORDERSPN_NO_NUMBA=1 to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("ORDERSPN_NO_NUMBA", "") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

NEG_INF = -np.inf


def _pow3(m: int) -> np.ndarray:
    return 3 ** np.arange(m, dtype=np.int64)


def _digits(m: int) -> np.ndarray:
    keys = np.arange(3**m, dtype=np.int64)
    return (keys[:, None] // _pow3(m)[None, :]) % 3


def _lowest_free(dig: np.ndarray, m: int) -> np.ndarray:
    lf = np.full(dig.shape[0], m, dtype=np.int64)
    for t in range(m - 1, -1, -1):
        lf[dig[:, t] == 0] = t
    return lf


def _build_sum_numpy(scores: np.ndarray, m: int) -> np.ndarray:
    dig = _digits(m)
    lf = _lowest_free(dig, m)
    pow3 = _pow3(m)
    f = np.empty(3**m)
    base = lf == m
    amask = ((dig == 1).astype(np.int64) << np.arange(m, dtype=np.int64)).sum(axis=1)
    f[base] = scores[amask[base]]
    for b in range(m - 1, -1, -1):
        sel = np.nonzero(lf == b)[0]
        f[sel] = np.logaddexp(f[sel + pow3[b]], f[sel + 2 * pow3[b]])
    return f


def _build_max_numpy(scores: np.ndarray, m: int):
    dig = _digits(m)
    lf = _lowest_free(dig, m)
    pow3 = _pow3(m)
    size = 3**m
    fmax = np.empty(size)
    amax = np.zeros(size, dtype=np.int64)
    base = lf == m
    amask = ((dig == 1).astype(np.int64) << np.arange(m, dtype=np.int64)).sum(axis=1)
    fmax[base] = scores[amask[base]]
    amax[base] = amask[base]
    for b in range(m - 1, -1, -1):
        sel = np.nonzero(lf == b)[0]
        v1, v2 = fmax[sel + pow3[b]], fmax[sel + 2 * pow3[b]]
        a1, a2 = amax[sel + pow3[b]], amax[sel + 2 * pow3[b]]
        fmax[sel] = np.maximum(v1, v2)
        # ties resolve toward the smaller argmax mask
        amax[sel] = np.where(v1 > v2, a1, np.where(v2 > v1, a2, np.minimum(a1, a2)))
    return fmax, amax


if USE_NUMBA:

    @njit(cache=True)
    def _build_sum_numba(scores, m):  # pragma: no cover - exercised via tests
        size = 1
        for _ in range(m):
            size *= 3
        pow3 = np.empty(m, dtype=np.int64)
        p = 1
        for t in range(m):
            pow3[t] = p
            p *= 3
        f = np.empty(size)
        for key in range(size - 1, -1, -1):
            rem = key
            free = -1
            amask = 0
            for t in range(m):
                dig = rem % 3
                rem //= 3
                if dig == 0 and free < 0:
                    free = t
                elif dig == 1:
                    amask |= 1 << t
            if free < 0:
                f[key] = scores[amask]
            else:
                a = f[key + pow3[free]]
                b = f[key + 2 * pow3[free]]
                if a < b:
                    a, b = b, a
                if b == -np.inf:
                    f[key] = a
                else:
                    f[key] = a + np.log1p(np.exp(b - a))
        return f

    @njit(cache=True)
    def _build_max_numba(scores, m):  # pragma: no cover - exercised via tests
        size = 1
        for _ in range(m):
            size *= 3
        pow3 = np.empty(m, dtype=np.int64)
        p = 1
        for t in range(m):
            pow3[t] = p
            p *= 3
        fmax = np.empty(size)
        amax = np.zeros(size, dtype=np.int64)
        for key in range(size - 1, -1, -1):
            rem = key
            free = -1
            amask = 0
            for t in range(m):
                dig = rem % 3
                rem //= 3
                if dig == 0 and free < 0:
                    free = t
                elif dig == 1:
                    amask |= 1 << t
            if free < 0:
                fmax[key] = scores[amask]
                amax[key] = amask
            else:
                k1 = key + pow3[free]
                k2 = key + 2 * pow3[free]
                if fmax[k1] > fmax[k2]:
                    fmax[key] = fmax[k1]
                    amax[key] = amax[k1]
                elif fmax[k2] > fmax[k1]:
                    fmax[key] = fmax[k2]
                    amax[key] = amax[k2]
                else:
                    fmax[key] = fmax[k1]
                    amax[key] = min(amax[k1], amax[k2])
        return fmax, amax


def build_sum_table(scores: np.ndarray, m: int) -> np.ndarray:
    """Log-space subset-sum table over all 3^m (required, forbidden) keys."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if USE_NUMBA:
        return _build_sum_numba(scores, m)
    return _build_sum_numpy(scores, m)


def build_max_table(scores: np.ndarray, m: int):
    """Max analogue of build_sum_table, plus argmax position masks."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if USE_NUMBA:
        return _build_max_numba(scores, m)
    return _build_max_numpy(scores, m)
