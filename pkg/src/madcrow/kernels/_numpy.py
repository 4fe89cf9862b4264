"""Vectorised numpy versions of the Smith-Waterman kernels.

Used when numba is missing or ``MADCROW_DISABLE_NUMBA`` is set. Row kernels
resolve the horizontal gap dependency in closed form: with a linear gap
``g < 0`` and ``E`` the best of (zero, diagonal, vertical) for a row,

    H[j] = max_{k <= j} (E[k] + g * (j - k)) = g * j + cummax(E[k] - g * k)

which keeps every score an exact integer.
"""
import numpy as np

BACKEND = "numpy"


def _sigma(x, row, match, mismatch):
    if x < 0:
        return np.full(row.shape[0], mismatch, np.int64)
    return np.where(row == x, match, mismatch).astype(np.int64)


def _row(prev, x, b, match, mismatch, gap, ramp):
    diag = prev[:-1] + _sigma(x, b, match, mismatch)
    e = np.maximum(np.maximum(diag, prev[1:] + gap), 0)
    v = np.empty(prev.shape[0], np.int64)
    v[0] = 0
    v[1:] = e
    v -= gap * ramp
    return np.maximum.accumulate(v) + gap * ramp


def sw_score(a, b, match, mismatch, gap):
    if a.shape[0] == 0 or b.shape[0] == 0:
        return 0
    if a.shape[0] > b.shape[0]:
        a, b = b, a
    ramp = np.arange(b.shape[0] + 1, dtype=np.int64)
    prev = np.zeros(b.shape[0] + 1, np.int64)
    best = 0
    for x in a.tolist():
        prev = _row(prev, x, b, match, mismatch, gap, ramp)
        top = int(prev.max())
        if top > best:
            best = top
    return best


def sw_matrix(a, b, match, mismatch, gap):
    m, n = a.shape[0], b.shape[0]
    H = np.zeros((m + 1, n + 1), np.int64)
    ramp = np.arange(n + 1, dtype=np.int64)
    for i, x in enumerate(a.tolist(), start=1):
        H[i] = _row(H[i - 1], x, b, match, mismatch, gap, ramp)
    return H


def sw_score_wavefront(a, b, match, mismatch, gap, lanes, min_split=None):
    # One vector op per anti-diagonal; lanes only partitions work on the numba path.
    m, n = a.shape[0], b.shape[0]
    if m == 0 or n == 0:
        return 0
    prev2 = np.zeros(m + 2, np.int64)
    prev1 = np.zeros(m + 2, np.int64)
    cur = np.zeros(m + 2, np.int64)
    best = 0
    for d in range(2, m + n + 1):
        lo = max(1, d - n)
        hi = min(m, d - 1)
        i = np.arange(lo, hi + 1)
        ai = a[i - 1]
        bj = b[d - i - 1]
        sig = np.where((ai == bj) & (ai >= 0), match, mismatch)
        h = np.maximum(prev2[i - 1] + sig, prev1[i - 1] + gap)
        h = np.maximum(h, prev1[i] + gap)
        h = np.maximum(h, 0)
        cur[lo:hi + 1] = h
        cur[hi + 1] = 0
        top = int(h.max())
        if top > best:
            best = top
        prev2, prev1, cur = prev1, cur, prev2
    return best


def sw_scan(query, target, match, mismatch, gap):
    n = target.shape[0]
    best = np.zeros(n, np.int64)
    start = np.full(n, -1, np.int64)
    if query.shape[0] == 0 or n == 0:
        return best, start
    ramp = np.arange(n + 1, dtype=np.int64)
    cols = ramp[:-1]
    prev = np.zeros(n + 1, np.int64)
    sprev = np.full(n + 1, -1, np.int64)
    for x in query.tolist():
        diag = prev[:-1] + _sigma(x, target, match, mismatch)
        diag_org = np.where(prev[:-1] > 0, sprev[:-1], cols)
        up = prev[1:] + gap
        use_up = up > diag
        e = np.where(use_up, up, diag)
        e_org = np.where(use_up, sprev[1:], diag_org)
        e_org[e <= 0] = -1
        e = np.maximum(e, 0)

        v = np.empty(n + 1, np.int64)
        v[0] = 0
        v[1:] = e
        v -= gap * ramp
        run = np.maximum.accumulate(v)
        # latest k <= j with v[k] == run[k]; ties favour the non-horizontal move
        k = np.maximum.accumulate(np.where(v == run, ramp, 0))
        h = run + gap * ramp
        org = np.empty(n + 1, np.int64)
        org[0] = -1
        org[1:] = e_org
        s = org[k]
        s[h <= 0] = -1

        upd = h[1:] > best
        best[upd] = h[1:][upd]
        start[upd] = s[1:][upd]
        prev, sprev = h, s
    return best, start
