"""Smith-Waterman local alignment over encoded call sequences.

Scores are exact integers. The score-only kernels keep two rolling rows (or
three anti-diagonals for the wavefront kernel); the full matrix is built only
when a traceback is requested.

Tie rules, shared by every kernel and by :func:`sw_align`:

* among cells holding the maximum score the smallest ``(end_a, end_b)`` wins;
* traceback prefers the diagonal move, then a gap in ``b`` (consumes ``a``),
  then a gap in ``a`` (consumes ``b``).
"""
from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import TooFewSequences

# Set by the test-suite (or MADCROW_VERIFY_TRACEBACK=1) to replay every alignment.
VERIFY_TRACEBACK = os.environ.get("MADCROW_VERIFY_TRACEBACK", "") not in ("", "0")
verified_alignments = 0


@dataclass(frozen=True)
class ScoringScheme:
    match_score: int = 2
    mismatch_penalty: int = -1
    gap_penalty: int = -1

    def __post_init__(self):
        for name in ("match_score", "mismatch_penalty", "gap_penalty"):
            if not isinstance(getattr(self, name), (int, np.integer)):
                raise TypeError(f"{name} must be an integer")
        if self.match_score <= 0:
            raise ValueError("match_score must be positive")
        if self.mismatch_penalty >= 0:
            raise ValueError("mismatch_penalty must be negative")
        if self.gap_penalty >= 0:
            raise ValueError("gap_penalty must be negative")

    @property
    def weights(self):
        return int(self.match_score), int(self.mismatch_penalty), int(self.gap_penalty)


DEFAULT_SCHEME = ScoringScheme()


class Op(str, enum.Enum):
    MATCH = "match"
    MISMATCH = "mismatch"
    GAP_A = "gap_a"  # gap inserted in a: consumes one symbol of b
    GAP_B = "gap_b"  # gap inserted in b: consumes one symbol of a


@dataclass(frozen=True)
class AlignmentResult:
    score: int
    a_span: tuple[int, int]
    b_span: tuple[int, int]
    ops: tuple[Op, ...]
    matched_pairs: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class SimilarityScore:
    raw: int
    normalized: float


def _pair_score(x, y, scheme):
    if x == y and x >= 0:
        return scheme.match_score
    return scheme.mismatch_penalty


def sw_score(a: Sequence[int], b: Sequence[int], scheme: ScoringScheme = DEFAULT_SCHEME) -> int:
    """Best local alignment score of ``a`` against ``b`` (0 if either is empty)."""
    return int(kernels.sw_score(kernels.as_symbols(a), kernels.as_symbols(b), *scheme.weights))


def sw_score_wavefront(a, b, scheme: ScoringScheme = DEFAULT_SCHEME, lanes: int = 4) -> int:
    """Same value as :func:`sw_score`, evaluated anti-diagonal by anti-diagonal.

    Each anti-diagonal is cut into ``lanes`` contiguous blocks that are
    computed independently, the layout a device backend would map onto
    threads.
    """
    if int(lanes) < 1:
        raise ValueError("lanes must be >= 1")
    return int(
        kernels.sw_score_wavefront(
            kernels.as_symbols(a), kernels.as_symbols(b), *scheme.weights, int(lanes)
        )
    )


def sw_align(a: Sequence[int], b: Sequence[int], scheme: ScoringScheme = DEFAULT_SCHEME) -> AlignmentResult:
    """Best local alignment with a deterministic traceback."""
    a = kernels.as_symbols(a)
    b = kernels.as_symbols(b)
    result = _traceback(a, b, scheme)
    if VERIFY_TRACEBACK:
        check_traceback(result, a, b, scheme)
    return result


def _traceback(a, b, scheme):
    empty = AlignmentResult(0, (0, 0), (0, 0), (), ())
    if a.shape[0] == 0 or b.shape[0] == 0:
        return empty
    H = kernels.sw_matrix(a, b, *scheme.weights)
    flat = int(np.argmax(H))
    i, j = divmod(flat, H.shape[1])
    score = int(H[i, j])
    if score == 0:
        return empty

    end_a, end_b = i, j
    ops = []
    pairs = []
    gap = scheme.gap_penalty
    while i > 0 and j > 0 and H[i, j] > 0:
        h = H[i, j]
        s = _pair_score(a[i - 1], b[j - 1], scheme)
        if h == H[i - 1, j - 1] + s:
            if s == scheme.match_score:
                ops.append(Op.MATCH)
                pairs.append((i - 1, j - 1))
            else:
                ops.append(Op.MISMATCH)
            i -= 1
            j -= 1
        elif h == H[i - 1, j] + gap:
            ops.append(Op.GAP_B)
            i -= 1
        else:
            ops.append(Op.GAP_A)
            j -= 1
    ops.reverse()
    pairs.reverse()
    return AlignmentResult(score, (i, end_a), (j, end_b), tuple(ops), tuple(pairs))


def replay_ops(result: AlignmentResult, a, b, scheme: ScoringScheme = DEFAULT_SCHEME) -> int:
    """Recompute the score of ``result`` by walking its ops over the inputs.

    Raises ``ValueError`` if an op disagrees with the symbols it consumes or
    the ops do not consume exactly the recorded spans.
    """
    i, end_a = result.a_span
    j, end_b = result.b_span
    total = 0
    pairs = []
    for op in result.ops:
        if op in (Op.MATCH, Op.MISMATCH):
            if i >= end_a or j >= end_b:
                raise ValueError("ops overrun the recorded spans")
            s = _pair_score(a[i], b[j], scheme)
            if (op is Op.MATCH) != (s == scheme.match_score):
                raise ValueError(f"op {op.value} disagrees with symbols at ({i}, {j})")
            if op is Op.MATCH:
                pairs.append((i, j))
            total += s
            i += 1
            j += 1
        elif op is Op.GAP_B:
            total += scheme.gap_penalty
            i += 1
        else:
            total += scheme.gap_penalty
            j += 1
    if (i, j) != (end_a, end_b):
        raise ValueError("ops do not consume the recorded spans")
    if tuple(pairs) != result.matched_pairs:
        raise ValueError("matched_pairs disagree with ops")
    return total


def check_traceback(result, a, b, scheme=DEFAULT_SCHEME):
    global verified_alignments
    replayed = replay_ops(result, a, b, scheme)
    if replayed != result.score:
        raise AssertionError(f"traceback replays to {replayed}, expected {result.score}")
    if (result.score == 0) != (len(result.ops) == 0):
        raise AssertionError("score is zero iff ops is empty")
    verified_alignments += 1


def similarity(a, b, scheme: ScoringScheme = DEFAULT_SCHEME) -> SimilarityScore:
    """Raw score and its value normalised by ``match_score * min(len(a), len(b))``."""
    raw = sw_score(a, b, scheme)
    shortest = min(len(a), len(b))
    if shortest == 0:
        return SimilarityScore(raw, 0.0)
    return SimilarityScore(raw, raw / (scheme.match_score * shortest))


def normalized_vs_query(raw: int, query_len: int, scheme: ScoringScheme = DEFAULT_SCHEME) -> float:
    if query_len <= 0:
        return 0.0
    return raw / (scheme.match_score * query_len)


def batch_pairwise(seqs, scheme: ScoringScheme = DEFAULT_SCHEME, workers: int = 1) -> np.ndarray:
    """Symmetric matrix of pairwise :func:`sw_score` values.

    The numba kernels release the GIL, so ``workers > 1`` overlaps the pairs
    on a thread pool; the result does not depend on ``workers``.
    """
    if len(seqs) < 2:
        raise TooFewSequences("batch_pairwise needs at least two sequences")
    arrs = [kernels.as_symbols(s) for s in seqs]
    n = len(arrs)
    weights = scheme.weights
    pairs = [(i, j) for i in range(n) for j in range(i, n)]

    def score(pair):
        i, j = pair
        return int(kernels.sw_score(arrs[i], arrs[j], *weights))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(score, pairs))
    else:
        values = [score(p) for p in pairs]
    out = np.zeros((n, n), np.int64)
    for (i, j), v in zip(pairs, values):
        out[i, j] = out[j, i] = v
    return out
