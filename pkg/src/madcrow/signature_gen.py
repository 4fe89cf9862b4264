"""Attack-signature distillation from repeated executions of one attack.

Traces are paired greedily by best local-alignment score, each pair is
collapsed to its consensus, and the halving repeats until a single pattern
is left. The pattern is then cut into segments wherever the final alignment
shows a long run of unmatched positions.

Intermediate consensuses are kept as *profiles*: every position carries the
number of original traces that agree on its symbol. A mismatch keeps the
symbol with more support (a tie becomes a wildcard that matches nothing), so
a substitution in one trace costs that position one vote instead of removing
it from every later round. The final pattern keeps positions with enough
votes; for two plain traces this is exactly the set of matched symbols.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .alignment import DEFAULT_SCHEME, Op, ScoringScheme, batch_pairwise, sw_align
from .errors import DegenerateSignature, TooFewSequences
from .trace_model import CallSequence

WILDCARD = -2


@dataclass(frozen=True)
class AttackTraceSet:
    attack_id: str
    sequences: tuple[CallSequence, ...]
    alphabet_ref: str

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if len(self.sequences) < 2:
            raise TooFewSequences("an attack trace set needs at least two sequences")

    @classmethod
    def from_symbols(cls, attack_id, seqs, alphabet_ref=""):
        wrapped = [CallSequence(f"trace{k}", tuple(s), tuple(range(len(s)))) for k, s in enumerate(seqs)]
        return cls(attack_id, tuple(wrapped), alphabet_ref)


@dataclass(frozen=True)
class Segment:
    symbols: tuple[int, ...]
    index: int

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))
        if not self.symbols:
            raise ValueError("a segment cannot be empty")

    def __len__(self):
        return len(self.symbols)


@dataclass(frozen=True)
class Provenance:
    traces: int
    rounds: int


@dataclass(frozen=True)
class Signature:
    attack_id: str
    segments: tuple[Segment, ...]
    scheme: ScoringScheme = DEFAULT_SCHEME
    default_threshold: float = 0.8
    provenance: Provenance = Provenance(0, 0)
    alphabet_ref: str = ""

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise DegenerateSignature(f"signature {self.attack_id!r} has no segments")
        if [s.index for s in self.segments] != list(range(len(self.segments))):
            raise ValueError("segment indices must be 0..k-1 in order")
        if not 0 < self.default_threshold <= 1:
            raise ValueError("default_threshold must lie in (0, 1]")

    @property
    def symbols(self) -> tuple[int, ...]:
        return tuple(s for seg in self.segments for s in seg.symbols)

    @property
    def max_segment_len(self) -> int:
        return max(len(s) for s in self.segments)


@dataclass(frozen=True)
class DistillParams:
    g_split: int = 3
    m_min: int = 4
    threshold: float = 0.8
    # votes a position needs to enter the final pattern; None means max(2, ceil(n / 2))
    min_support: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if self.g_split < 1 or self.m_min < 1:
            raise ValueError("g_split and m_min must be >= 1")


@dataclass
class Profile:
    """A consensus pattern with per-position vote counts.

    ``gaps_before[k]`` counts the gap ops that the alignment producing this
    profile dropped immediately before entry ``k``.
    """

    symbols: np.ndarray
    support: np.ndarray
    gaps_before: np.ndarray = field(default=None)

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int64)
        self.support = np.asarray(self.support, dtype=np.int64)
        if self.gaps_before is None:
            self.gaps_before = np.zeros(len(self.symbols), np.int64)
        else:
            self.gaps_before = np.asarray(self.gaps_before, dtype=np.int64)

    @classmethod
    def of(cls, seq):
        if isinstance(seq, Profile):
            return seq
        if isinstance(seq, CallSequence):
            seq = seq.symbols
        arr = np.asarray(seq, dtype=np.int64)
        return cls(arr, np.where(arr >= 0, 1, 0))

    def __len__(self):
        return len(self.symbols)

    def tolist(self):
        return self.symbols.tolist()


def merge_profiles(pa: Profile, pb: Profile, scheme: ScoringScheme = DEFAULT_SCHEME, keep_flanks=True) -> Profile:
    """Align two profiles and fold them into one consensus profile.

    The unmatched stretch before a merged position is the longer of the two
    sides, each side counting the entries this alignment skipped plus the
    stretches those entries already carried.

    A flank outside the local alignment survives when the other profile has
    nothing supported on that side: an earlier round trimmed the other
    profile there, so the flank is uncovered rather than contradicted.
    """
    res = sw_align(pa.symbols, pb.symbols, scheme)
    if not res.ops:
        return Profile(np.zeros(0, np.int64), np.zeros(0, np.int64))
    i, j = res.a_span[0], res.b_span[0]
    syms, votes, gaps = [], [], []
    head = _flank(pa, pb, slice(0, i), slice(0, j)) if keep_flanks else None
    if head is not None:
        syms.extend(head.symbols.tolist())
        votes.extend(head.support.tolist())
        gaps.extend(head.gaps_before.tolist())
    pend_a = pend_b = 0
    for op in res.ops:
        if op is Op.MATCH:
            syms.append(int(pa.symbols[i]))
            votes.append(int(pa.support[i] + pb.support[j]))
        elif op is Op.MISMATCH:
            sa, sb = int(pa.support[i]), int(pb.support[j])
            if sa > sb:
                syms.append(int(pa.symbols[i]))
                votes.append(sa)
            elif sb > sa:
                syms.append(int(pb.symbols[j]))
                votes.append(sb)
            else:
                syms.append(WILDCARD)
                votes.append(0)
        if op in (Op.MATCH, Op.MISMATCH):
            gaps.append(max(pend_a + int(pa.gaps_before[i]), pend_b + int(pb.gaps_before[j])))
            pend_a = pend_b = 0
            i += 1
            j += 1
        elif op is Op.GAP_B:
            pend_a += 1 + int(pa.gaps_before[i])
            i += 1
        else:
            pend_b += 1 + int(pb.gaps_before[j])
            j += 1
    tail = _flank(pa, pb, slice(i, None), slice(j, None)) if keep_flanks else None
    if tail is not None:
        syms.extend(tail.symbols.tolist())
        votes.extend(tail.support.tolist())
        gaps.extend(tail.gaps_before.tolist())
    return Profile(np.array(syms, np.int64), np.array(votes, np.int64), np.array(gaps, np.int64))


def _flank(pa: Profile, pb: Profile, sa: slice, sb: slice) -> Optional[Profile]:
    """The one flank worth keeping, if exactly one side has supported entries."""
    a_live = bool(np.any(pa.support[sa] > 0))
    b_live = bool(np.any(pb.support[sb] > 0))
    if a_live == b_live:
        return None
    src, sl = (pa, sa) if a_live else (pb, sb)
    return Profile(src.symbols[sl], src.support[sl], src.gaps_before[sl])


def collapse(profile: Profile, min_support: int) -> tuple[list[int], list[int]]:
    """Keep well-supported positions; return (pattern, gap run before each kept position)."""
    pattern, runs = [], []
    run = 0
    for sym, votes, gaps in zip(profile.symbols.tolist(), profile.support.tolist(), profile.gaps_before.tolist()):
        run += gaps
        if sym >= 0 and votes >= min_support:
            pattern.append(sym)
            runs.append(run)
            run = 0
        else:
            run += 1
    return pattern, runs


def consensus_pair(a: Sequence[int], b: Sequence[int], scheme: ScoringScheme = DEFAULT_SCHEME):
    """Matched symbols of the best local alignment of ``a`` and ``b``.

    Returns ``(consensus, gap_runs)`` where ``gap_runs`` holds one
    ``(position, length)`` pair per consensus position: the number of
    unmatched alignment ops immediately before it.
    """
    pa, pb = Profile.of(a), Profile.of(b)
    merged = merge_profiles(pa, pb, scheme, keep_flanks=False)
    # a plain position has one vote, so two votes means both inputs agree
    pattern, runs = collapse(merged, 2 if _is_plain(pa) and _is_plain(pb) else 1)
    return pattern, list(enumerate(runs))


def _is_plain(p: Profile):
    return bool(np.all(p.support <= 1))


def pair_greedily(scores: np.ndarray):
    """Greedy best-first pairing; ties go to the lowest (i, j). Returns (pairs, leftover)."""
    n = scores.shape[0]
    cand = sorted(((-int(scores[i, j]), i, j) for i in range(n) for j in range(i + 1, n)))
    used = set()
    pairs = []
    for _, i, j in cand:
        if i in used or j in used:
            continue
        used.update((i, j))
        pairs.append((i, j))
    leftover = [k for k in range(n) if k not in used]
    return pairs, (leftover[0] if leftover else None)


def halve_round(seqs, scheme: ScoringScheme = DEFAULT_SCHEME, workers: int = 1) -> list[Profile]:
    """One halving round: ``ceil(n / 2)`` profiles out of ``n`` inputs.

    Outputs are ordered by the lowest input index they came from; an unpaired
    input passes through unchanged.
    """
    if len(seqs) < 2:
        raise TooFewSequences("halve_round needs at least two sequences")
    profiles = [Profile.of(s) for s in seqs]
    scores = batch_pairwise([p.symbols for p in profiles], scheme, workers=workers)
    pairs, leftover = pair_greedily(scores)
    out = [(i, merge_profiles(profiles[i], profiles[j], scheme)) for i, j in pairs]
    if leftover is not None:
        out.append((leftover, profiles[leftover]))
    out.sort(key=lambda item: item[0])
    return [p for _, p in out]


def segmentize(pattern: Sequence[int], gap_runs, g_split: int = 3, m_min: int = 4) -> list[Segment]:
    """Cut ``pattern`` before each position whose gap run is at least ``g_split``.

    ``gap_runs`` is either one integer per position or ``(position, length)``
    pairs. Pieces shorter than ``m_min`` are dropped; survivors are renumbered.
    """
    if g_split < 1 or m_min < 1:
        raise ValueError("g_split and m_min must be >= 1")
    runs = [0] * len(pattern)
    for k, item in enumerate(gap_runs):
        if isinstance(item, tuple):
            pos, length = item
            runs[pos] = length
        else:
            runs[k] = item
    pieces = []
    cur = []
    for sym, run in zip(pattern, runs):
        if cur and run >= g_split:
            pieces.append(cur)
            cur = []
        cur.append(int(sym))
    if cur:
        pieces.append(cur)
    kept = [p for p in pieces if len(p) >= m_min]
    return [Segment(tuple(p), k) for k, p in enumerate(kept)]


def distill(ts: AttackTraceSet, scheme: ScoringScheme = DEFAULT_SCHEME, params: DistillParams = DistillParams()) -> Signature:
    """Distil one signature from all traces in ``ts``."""
    n = len(ts.sequences)
    for seq in ts.sequences:
        if len(seq) < params.m_min:
            raise DegenerateSignature(
                f"trace {seq.stream_id!r} has {len(seq)} calls, fewer than m_min={params.m_min}"
            )
    min_support = params.min_support or max(2, math.ceil(n / 2))
    profiles = [Profile.of(seq) for seq in ts.sequences]
    rounds = 0
    while len(profiles) > 1:
        profiles = halve_round(profiles, scheme, workers=params.workers)
        rounds += 1
    pattern, runs = collapse(profiles[0], min_support)
    segments = segmentize(pattern, runs, params.g_split, params.m_min)
    if not segments:
        raise DegenerateSignature(f"traces of {ts.attack_id!r} share too little content for a signature")
    return Signature(
        attack_id=ts.attack_id,
        segments=tuple(segments),
        scheme=scheme,
        default_threshold=params.threshold,
        provenance=Provenance(n, rounds),
        alphabet_ref=ts.alphabet_ref,
    )
