"""Signature detection over live call streams.

Each monitored stream keeps a ring buffer of its most recent symbols. Every
``rescan_stride`` events the tail of the buffer is aligned against every
signature segment; hits above the threshold are handed to a per-signature
correlator, which raises an attack alert once every segment has been seen
(from any stream) within the correlation window. Streams that stop sending
heartbeats raise liveness alerts.

All time comes from event and heartbeat timestamps; the engine never reads
the wall clock.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import kernels
from .alignment import DEFAULT_SCHEME, ScoringScheme
from .errors import UnknownStream, UnsortedInput
from .signature_gen import Segment, Signature
from .trace_model import Alphabet, CallEvent, check_policy

logger = logging.getLogger(__name__)

HEARTBEAT_PERIOD_US = 2_000_000


@dataclass(frozen=True)
class DetectorConfig:
    # None: use each signature's stored default_threshold
    tau: Optional[float] = 0.8
    window: int = 4096
    corr_window_us: int = 300_000_000
    rescan_stride: int = 16
    heartbeat_period_us: int = HEARTBEAT_PERIOD_US
    heartbeat_misses: int = 3
    allow_guest_syscalls: bool = False

    def __post_init__(self):
        if self.tau is not None and not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.window < 1 or self.rescan_stride < 1:
            raise ValueError("window and rescan_stride must be >= 1")
        if self.corr_window_us < 0 or self.heartbeat_period_us <= 0 or self.heartbeat_misses < 1:
            raise ValueError("invalid timing parameters")

    def threshold_for(self, sig: Signature) -> float:
        return sig.default_threshold if self.tau is None else self.tau


class MonitoredStream:
    """Ring buffer of the last ``capacity`` (symbol, timestamp) pairs of one stream.

    Every value is written twice, at ``pos`` and ``pos + capacity``, so the
    chronological window is always one contiguous slice.
    """

    def __init__(self, stream_id: str, capacity: int = 4096, now_us: int = 0):
        self.stream_id = stream_id
        self.capacity = capacity
        self._sym = np.zeros(2 * capacity, np.int64)
        self._ts = np.zeros(2 * capacity, np.int64)
        self._pos = 0
        self.cursor = 0
        self.last_heartbeat_us = now_us
        self.last_scan_cursor = 0
        self.liveness_alerted = False

    def __len__(self):
        return min(self.cursor, self.capacity)

    @property
    def base_offset(self) -> int:
        """Absolute offset of the oldest symbol still in the window."""
        return self.cursor - len(self)

    @property
    def last_timestamp_us(self) -> Optional[int]:
        if self.cursor == 0:
            return None
        return int(self._ts[self._pos + self.capacity - 1])

    def append(self, symbol: int, timestamp_us: int):
        last = self.last_timestamp_us
        if last is not None and timestamp_us < last:
            raise UnsortedInput(f"stream {self.stream_id}: timestamp {timestamp_us} follows {last}")
        p = self._pos
        self._sym[p] = self._sym[p + self.capacity] = symbol
        self._ts[p] = self._ts[p + self.capacity] = timestamp_us
        self._pos = (p + 1) % self.capacity
        self.cursor += 1

    def view(self, since: Optional[int] = None):
        """``(symbols, timestamps, first_offset)`` from absolute offset ``since`` (clamped) to now."""
        first = self.base_offset if since is None else max(since, self.base_offset)
        count = self.cursor - first
        stop = self._pos + self.capacity
        return self._sym[stop - count:stop], self._ts[stop - count:stop], first


@dataclass(frozen=True)
class SegmentHit:
    signature_id: str
    segment_index: int
    stream_id: str
    raw_score: int
    normalized_vs_query: float
    window_span: tuple[int, int]
    time_us: int

    def overlaps(self, other: "SegmentHit") -> bool:
        return (
            self.segment_index == other.segment_index
            and self.stream_id == other.stream_id
            and self.window_span[0] < other.window_span[1]
            and other.window_span[0] < self.window_span[1]
        )


class AlertKind(str, enum.Enum):
    ATTACK = "attack"
    LIVENESS = "liveness"


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    signature_id: Optional[str]
    confidence: Optional[float]
    streams: tuple[str, ...]
    start_us: int
    end_us: int
    evidence: tuple[SegmentHit, ...] = ()


def _spans_overlap(a, b):
    return a[0] < b[1] and b[0] < a[1]


def scan_window(
    stream: MonitoredStream,
    segment: Segment,
    scheme: ScoringScheme = DEFAULT_SCHEME,
    tau: float = 0.8,
    signature_id: str = "",
    since: Optional[int] = None,
) -> list[SegmentHit]:
    """Locate ``segment`` in the stream's window (or its tail from offset ``since``).

    A column is a candidate when the best alignment of the whole segment
    ending there reaches ``tau`` of the segment's self-score. Overlapping
    candidates are reduced greedily to the best-scoring span (earliest end,
    then earliest start, on ties). Hits are returned in window order.
    """
    target, stamps, first = stream.view(since)
    if target.shape[0] == 0:
        return []
    query = kernels.as_symbols(segment.symbols)
    best, start = kernels.sw_scan(query, target, *scheme.weights)
    denom = scheme.match_score * len(segment)
    norm = best / denom
    cols = np.nonzero((best > 0) & (norm >= tau))[0]
    if cols.shape[0] == 0:
        return []
    order = sorted(cols.tolist(), key=lambda j: (-int(best[j]), j, int(start[j])))
    taken = []
    for j in order:
        span = (first + int(start[j]), first + j + 1)
        if any(_spans_overlap(span, t[0]) for t in taken):
            continue
        taken.append((span, j))
    taken.sort()
    return [
        SegmentHit(
            signature_id,
            segment.index,
            stream.stream_id,
            int(best[j]),
            float(norm[j]),
            span,
            int(stamps[j]),
        )
        for span, j in taken
    ]


@dataclass
class AttackState:
    signature_id: str
    n_segments: int
    hits: list = field(default_factory=list)
    # spans already reported in an alert, per (segment, stream); later overlapping hits are ignored
    consumed: dict = field(default_factory=dict)

    @property
    def found(self) -> tuple[bool, ...]:
        got = {h.segment_index for h in self.hits}
        return tuple(i in got for i in range(self.n_segments))

    @property
    def first_hit_us(self) -> Optional[int]:
        return min((h.time_us for h in self.hits), default=None)

    @property
    def last_hit_us(self) -> Optional[int]:
        return max((h.time_us for h in self.hits), default=None)

    def is_consumed(self, hit: SegmentHit) -> bool:
        spans = self.consumed.get((hit.segment_index, hit.stream_id), ())
        return any(_spans_overlap(hit.window_span, s) for s in spans)


def correlate(state: AttackState, hit: SegmentHit, cfg: DetectorConfig = DetectorConfig()) -> Optional[Alert]:
    """Fold one segment hit into ``state``; return an alert when every segment is covered."""
    if state.is_consumed(hit):
        return None
    ref = max(hit.time_us, state.last_hit_us or hit.time_us)
    horizon = ref - cfg.corr_window_us
    kept = [h for h in state.hits if h.time_us >= horizon]
    replaced = False
    for k, h in enumerate(kept):
        if h.overlaps(hit):
            if hit.raw_score > h.raw_score:
                kept[k] = hit
            replaced = True
            break
    if not replaced and hit.time_us >= horizon:
        kept.append(hit)
    state.hits = kept
    if not all(state.found):
        return None

    evidence = []
    for idx in range(state.n_segments):
        cands = [h for h in state.hits if h.segment_index == idx]
        evidence.append(min(cands, key=lambda h: (-h.normalized_vs_query, h.time_us, h.window_span)))
    for h in evidence:
        state.consumed.setdefault((h.segment_index, h.stream_id), []).append(h.window_span)
    state.hits = []
    confidence = sum(h.normalized_vs_query for h in evidence) / len(evidence)
    return Alert(
        kind=AlertKind.ATTACK,
        signature_id=state.signature_id,
        confidence=confidence,
        streams=tuple(sorted({h.stream_id for h in evidence})),
        start_us=min(h.time_us for h in evidence),
        end_us=max(h.time_us for h in evidence),
        evidence=tuple(evidence),
    )


class DetectionEngine:
    """Ingests call events per stream and emits attack and liveness alerts."""

    def __init__(self, signatures: Iterable[Signature], alphabet: Optional[Alphabet] = None, config: DetectorConfig = DetectorConfig()):
        self.signatures = sorted(signatures, key=lambda s: s.attack_id)
        self.alphabet = alphabet
        self.config = config
        self.streams: dict[str, MonitoredStream] = {}
        self.states = {s.attack_id: AttackState(s.attack_id, len(s.segments)) for s in self.signatures}
        longest = max((s.max_segment_len for s in self.signatures), default=1)
        # scans reach this far behind the previous scan point so straddling segments are seen whole
        self.overlap = 2 * longest
        if config.window < self.overlap:
            logger.warning("window %d is shorter than twice the longest segment (%d)", config.window, longest)

    def register_stream(self, stream_id: str, now_us: int = 0) -> MonitoredStream:
        if stream_id not in self.streams:
            self.streams[stream_id] = MonitoredStream(stream_id, self.config.window, now_us)
        return self.streams[stream_id]

    def _stream(self, stream_id) -> MonitoredStream:
        try:
            return self.streams[stream_id]
        except KeyError:
            raise UnknownStream(f"stream {stream_id!r} is not registered") from None

    def process_event(self, event: CallEvent) -> list[Alert]:
        """Encode ``event``, append it to its stream, and rescan when the stride is due."""
        self._stream(event.stream_id)
        check_policy(event, self.config.allow_guest_syscalls)
        if self.alphabet is None:
            raise ValueError("process_event needs an alphabet; use push() for encoded symbols")
        return self.push(event.stream_id, self.alphabet.lookup(event.name, event.kind), event.timestamp_us)

    def push(self, stream_id: str, symbol: int, timestamp_us: int) -> list[Alert]:
        stream = self._stream(stream_id)
        stream.append(int(symbol), int(timestamp_us))
        if stream.cursor - stream.last_scan_cursor >= self.config.rescan_stride:
            return self.scan(stream_id)
        return []

    def scan(self, stream_id: str) -> list[Alert]:
        """Scan the unscanned tail of one stream now."""
        stream = self._stream(stream_id)
        if stream.cursor == stream.last_scan_cursor:
            return []
        since = stream.last_scan_cursor - self.overlap
        stream.last_scan_cursor = stream.cursor
        alerts = []
        for sig in self.signatures:
            tau = self.config.threshold_for(sig)
            state = self.states[sig.attack_id]
            for seg in sig.segments:
                for hit in scan_window(stream, seg, sig.scheme, tau, sig.attack_id, since):
                    alert = correlate(state, hit, self.config)
                    if alert is not None:
                        logger.info("attack alert %s streams=%s", alert.signature_id, ",".join(alert.streams))
                        alerts.append(alert)
        return alerts

    def flush(self) -> list[Alert]:
        alerts = []
        for sid in sorted(self.streams):
            alerts.extend(self.scan(sid))
        return alerts

    def heartbeat(self, stream_id: str, now_us: int):
        stream = self._stream(stream_id)
        stream.last_heartbeat_us = max(stream.last_heartbeat_us, now_us)
        stream.liveness_alerted = False

    def check_liveness(self, now_us: int) -> list[Alert]:
        limit = self.config.heartbeat_period_us * self.config.heartbeat_misses
        alerts = []
        for sid in sorted(self.streams):
            stream = self.streams[sid]
            if stream.liveness_alerted or now_us - stream.last_heartbeat_us <= limit:
                continue
            stream.liveness_alerted = True
            logger.info("liveness alert: %s silent since %d", sid, stream.last_heartbeat_us)
            alerts.append(Alert(AlertKind.LIVENESS, None, None, (sid,), stream.last_heartbeat_us, now_us))
        return alerts


def process_event(engine: DetectionEngine, event: CallEvent) -> list[Alert]:
    return engine.process_event(event)


def heartbeat(engine: DetectionEngine, stream_id: str, now_us: int):
    engine.heartbeat(stream_id, now_us)


def check_liveness(engine: DetectionEngine, now_us: int) -> list[Alert]:
    return engine.check_liveness(now_us)
