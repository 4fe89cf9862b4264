"""Smith-Waterman inner loops compiled with numba.

All kernels take int64 symbol arrays and integer scoring weights and use the
same cell rule: a pair of symbols scores ``match`` only when both are equal
and non-negative, so negative symbols (wildcards, OTHER) never match.
"""
import numpy as np
from numba import config, njit, prange

# the bundled TBB is too old; prefer layers that do not warn on import
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

BACKEND = "numba"

# diagonals shorter than this are not split across lanes
MIN_SPLIT_CELLS = 1024


@njit(cache=True, nogil=True)
def sw_score(a, b, match, mismatch, gap):
    m = a.shape[0]
    n = b.shape[0]
    if m == 0 or n == 0:
        return 0
    prev = np.zeros(n + 1, np.int64)
    cur = np.zeros(n + 1, np.int64)
    best = 0
    for i in range(1, m + 1):
        ai = a[i - 1]
        cur[0] = 0
        for j in range(1, n + 1):
            if ai == b[j - 1] and ai >= 0:
                h = prev[j - 1] + match
            else:
                h = prev[j - 1] + mismatch
            up = prev[j] + gap
            if up > h:
                h = up
            left = cur[j - 1] + gap
            if left > h:
                h = left
            if h < 0:
                h = 0
            cur[j] = h
            if h > best:
                best = h
        prev, cur = cur, prev
    return best


@njit(cache=True, nogil=True)
def sw_matrix(a, b, match, mismatch, gap):
    m = a.shape[0]
    n = b.shape[0]
    H = np.zeros((m + 1, n + 1), np.int64)
    for i in range(1, m + 1):
        ai = a[i - 1]
        for j in range(1, n + 1):
            if ai == b[j - 1] and ai >= 0:
                h = H[i - 1, j - 1] + match
            else:
                h = H[i - 1, j - 1] + mismatch
            up = H[i - 1, j] + gap
            if up > h:
                h = up
            left = H[i, j - 1] + gap
            if left > h:
                h = left
            if h < 0:
                h = 0
            H[i, j] = h
    return H


@njit(cache=True, nogil=True)
def _disjoint_negatives(a, b):
    # after this, plain equality implements the "negatives never match" rule
    a2 = a.copy()
    rb = b[::-1].copy()
    for i in range(a2.shape[0]):
        if a2[i] < 0:
            a2[i] = -1
    for j in range(rb.shape[0]):
        if rb[j] < 0:
            rb[j] = -2
    return a2, rb


@njit(cache=True, nogil=True)
def _diag_cells(a, rb, match, mismatch, gap, off, start, stop, prev2, prev1, cur):
    # cells (i, d - i) for i in [start, stop); rb is b reversed, so b[j - 1] == rb[off + i].
    # Slicing first keeps every index provably non-negative, which lets LLVM vectorise the loop.
    av = a[start - 1:stop - 1]
    bv = rb[off + start:off + stop]
    diag = prev2[start - 1:stop - 1]
    up = prev1[start - 1:stop - 1]
    left = prev1[start:stop]
    out = cur[start:stop]
    delta = match - mismatch
    best = 0
    for k in range(stop - start):
        h = diag[k] + mismatch + delta * (av[k] == bv[k])
        h = max(h, max(up[k], left[k]) + gap)
        h = max(h, 0)
        out[k] = h
        best = max(best, h)
    return best


@njit(cache=True, nogil=True)
def _wavefront_serial(a, b, match, mismatch, gap):
    m = a.shape[0]
    n = b.shape[0]
    a, rb = _disjoint_negatives(a, b)
    prev2 = np.zeros(m + 2, np.int64)
    prev1 = np.zeros(m + 2, np.int64)
    cur = np.zeros(m + 2, np.int64)
    best = 0
    for d in range(2, m + n + 1):
        lo = max(1, d - n)
        hi = min(m, d - 1)
        h = _diag_cells(a, rb, match, mismatch, gap, n - d, lo, hi + 1, prev2, prev1, cur)
        best = max(best, h)
        # cell (hi + 1, d - hi - 1) lies on the j == 0 border; later diagonals read it
        cur[hi + 1] = 0
        prev2, prev1, cur = prev1, cur, prev2
    return best


@njit(cache=True, parallel=True)
def _wavefront_lanes(a, b, match, mismatch, gap, lanes, min_split):
    m = a.shape[0]
    n = b.shape[0]
    a, rb = _disjoint_negatives(a, b)
    prev2 = np.zeros(m + 2, np.int64)
    prev1 = np.zeros(m + 2, np.int64)
    cur = np.zeros(m + 2, np.int64)
    lane_best = np.zeros(lanes, np.int64)
    for d in range(2, m + n + 1):
        lo = max(1, d - n)
        hi = min(m, d - 1)
        if hi - lo + 1 < min_split:
            # too short to be worth a thread dispatch
            h = _diag_cells(a, rb, match, mismatch, gap, n - d, lo, hi + 1, prev2, prev1, cur)
            lane_best[0] = max(lane_best[0], h)
            cur[hi + 1] = 0
            prev2, prev1, cur = prev1, cur, prev2
            continue
        chunk = (hi - lo + lanes) // lanes
        for lane in prange(lanes):
            start = lo + lane * chunk
            stop = min(hi + 1, start + chunk)
            if start < stop:
                h = _diag_cells(a, rb, match, mismatch, gap, n - d, start, stop, prev2, prev1, cur)
                lane_best[lane] = max(lane_best[lane], h)
        cur[hi + 1] = 0
        prev2, prev1, cur = prev1, cur, prev2
    return lane_best.max()


def sw_score_wavefront(a, b, match, mismatch, gap, lanes, min_split=MIN_SPLIT_CELLS):
    if a.shape[0] == 0 or b.shape[0] == 0:
        return 0
    if lanes == 1:
        return int(_wavefront_serial(a, b, match, mismatch, gap))
    return int(_wavefront_lanes(a, b, match, mismatch, gap, lanes, min_split))


@njit(cache=True, nogil=True)
def sw_scan(query, target, match, mismatch, gap):
    """Best local-alignment score ending at each target column, with its start column."""
    m = query.shape[0]
    n = target.shape[0]
    best = np.zeros(n, np.int64)
    start = np.full(n, -1, np.int64)
    prev = np.zeros(n + 1, np.int64)
    cur = np.zeros(n + 1, np.int64)
    sprev = np.full(n + 1, -1, np.int64)
    scur = np.full(n + 1, -1, np.int64)
    for i in range(1, m + 1):
        qi = query[i - 1]
        cur[0] = 0
        scur[0] = -1
        for j in range(1, n + 1):
            if qi == target[j - 1] and qi >= 0:
                h = prev[j - 1] + match
            else:
                h = prev[j - 1] + mismatch
            if prev[j - 1] > 0:
                org = sprev[j - 1]
            else:
                org = j - 1
            up = prev[j] + gap
            if up > h:
                h = up
                org = sprev[j]
            left = cur[j - 1] + gap
            if left > h:
                h = left
                org = scur[j - 1]
            if h <= 0:
                h = 0
                org = -1
            cur[j] = h
            scur[j] = org
            if h > best[j - 1]:
                best[j - 1] = h
                start[j - 1] = org
        prev, cur = cur, prev
        sprev, scur = scur, sprev
    return best, start
