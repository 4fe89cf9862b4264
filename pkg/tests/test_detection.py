import numpy as np
import pytest

from madcrow.errors import PolicyError, UnknownStream, UnsortedInput
from madcrow.detection import (
    AlertKind,
    AttackState,
    DetectionEngine,
    DetectorConfig,
    MonitoredStream,
    SegmentHit,
    check_liveness,
    correlate,
    heartbeat,
    process_event,
    scan_window,
)
from madcrow.signature_gen import Segment, Signature
from madcrow.trace_model import Alphabet, CallEvent, CallKind
from oracle import naive_score

SEG = tuple(range(10))


def stream_of(symbols, sid="vm1"):
    s = MonitoredStream(sid, capacity=256)
    for k, sym in enumerate(symbols):
        s.append(sym, k * 10)
    return s


def sig(attack_id, *segments):
    return Signature(attack_id, tuple(Segment(tuple(seg), k) for k, seg in enumerate(segments)))


def hit(seg_index, t_s, norm, stream="vm1", span=None):
    span = span or (seg_index * 100, seg_index * 100 + 10)
    return SegmentHit("a", seg_index, stream, int(norm * 20), norm, span, int(t_s * 1_000_000))


def test_ring_buffer_wraps_and_stays_contiguous():
    s = MonitoredStream("vm1", capacity=4)
    for k in range(10):
        s.append(k, k)
    sym, ts, first = s.view()
    assert sym.tolist() == [6, 7, 8, 9] and ts.tolist() == [6, 7, 8, 9] and first == 6
    assert s.view(since=8)[0].tolist() == [8, 9]
    assert s.view(since=0)[2] == 6
    with pytest.raises(UnsortedInput):
        s.append(1, 3)


def test_scan_window_verbatim():
    s = stream_of([50, 51] + list(SEG) + [52, 53])
    hits = scan_window(s, Segment(SEG, 0), tau=0.8)
    assert len(hits) == 1
    assert hits[0].normalized_vs_query == 1.0
    assert hits[0].window_span == (2, 12)
    assert hits[0].time_us == 110


def test_scan_window_disjoint():
    assert scan_window(stream_of([50 + k % 5 for k in range(40)]), Segment(SEG, 0)) == []
    assert scan_window(MonitoredStream("vm1"), Segment(SEG, 0)) == []


def test_scan_window_one_substitution():
    body = list(SEG)
    body[4] = 77
    target = [60, 61, 62] + body + [63]
    # oracle value, frozen: nine matches and one substitution
    assert naive_score(list(SEG), target) == 17
    s = stream_of(target)
    hits = scan_window(s, Segment(SEG, 0), tau=0.8)
    assert len(hits) == 1 and hits[0].normalized_vs_query == 0.85
    assert scan_window(s, Segment(SEG, 0), tau=0.9) == []


def test_scan_window_reports_separate_occurrences():
    s = stream_of(list(SEG) + [90] * 5 + list(SEG))
    hits = scan_window(s, Segment(SEG, 0))
    assert [h.window_span for h in hits] == [(0, 10), (15, 25)]


def test_correlate_single_segment_alerts_immediately():
    state = AttackState("a", 1)
    alert = correlate(state, hit(0, 1.0, 0.9))
    assert alert.kind is AlertKind.ATTACK and alert.confidence == 0.9
    # the same span again is already consumed
    assert correlate(state, hit(0, 1.5, 0.9)) is None


def test_correlate_expiry():
    state = AttackState("a", 3)
    cfg = DetectorConfig(corr_window_us=300_000_000)
    assert correlate(state, hit(0, 0, 0.9), cfg) is None
    assert correlate(state, hit(1, 0, 0.9), cfg) is None
    assert correlate(state, hit(2, 400, 0.9), cfg) is None
    assert state.found == (False, False, True)


def test_correlate_mean_confidence():
    state = AttackState("a", 3)
    alerts = [correlate(state, h) for h in (hit(0, 0, 0.9), hit(1, 4, 0.85, "vm2"), hit(2, 9, 1.0, "vm3"))]
    assert alerts[:2] == [None, None]
    alert = alerts[2]
    assert alert.confidence == pytest.approx((0.9 + 0.85 + 1.0) / 3)
    assert alert.streams == ("vm1", "vm2", "vm3")
    assert (alert.start_us, alert.end_us) == (0, 9_000_000)
    assert state.hits == []


def test_correlate_keeps_better_overlapping_hit():
    state = AttackState("a", 2)
    correlate(state, hit(0, 0, 0.8))
    correlate(state, hit(0, 1, 0.95))
    assert len(state.hits) == 1 and state.hits[0].normalized_vs_query == 0.95


def engine_with(*sigs, **cfg):
    eng = DetectionEngine(sigs, config=DetectorConfig(**cfg))
    for sid in ("vm1", "vm2", "vm3"):
        eng.register_stream(sid)
    return eng


def feed(eng, stream, symbols, t0=0):
    alerts = []
    for k, sym in enumerate(symbols):
        alerts += eng.push(stream, sym, t0 + k)
    return alerts


def test_engine_single_stream_all_segments():
    rng = np.random.default_rng(0)
    a, b = list(range(10)), list(range(10, 20))
    eng = engine_with(sig("atk", a, b))
    noise = lambda n: rng.integers(40, 60, n).tolist()
    alerts = feed(eng, "vm1", noise(100) + a + noise(30) + b + noise(100)) + eng.flush()
    assert len(alerts) == 1 and alerts[0].signature_id == "atk"


def test_engine_segments_across_streams():
    rng = np.random.default_rng(1)
    segs = [list(range(k * 10, k * 10 + 10)) for k in range(3)]
    eng = engine_with(sig("atk", *segs))
    alerts = []
    for k, sid in enumerate(("vm1", "vm2", "vm3")):
        alerts += feed(eng, sid, rng.integers(40, 60, 50).tolist() + segs[k] + rng.integers(40, 60, 50).tolist(), t0=k * 1000)
    alerts += eng.flush()
    assert len(alerts) == 1
    assert alerts[0].streams == ("vm1", "vm2", "vm3")


def test_engine_straddling_segment_is_found():
    # a segment crossing a rescan boundary is still seen whole thanks to the scan overlap
    seg = list(range(12))
    for offset in range(0, 16):
        eng = engine_with(sig("atk", seg), rescan_stride=16)
        alerts = feed(eng, "vm1", [50] * (40 + offset) + seg + [51] * 40)
        assert len(alerts + eng.flush()) == 1


def test_engine_benign_stream_no_alerts():
    rng = np.random.default_rng(2)
    eng = engine_with(sig("atk", list(range(10))))
    assert feed(eng, "vm1", rng.integers(40, 60, 2000).tolist()) + eng.flush() == []


def test_engine_deterministic():
    rng = np.random.default_rng(3)
    seg = list(range(10))
    stream = (rng.integers(40, 60, 200).tolist() + seg) * 3

    def run():
        eng = engine_with(sig("atk", seg))
        return feed(eng, "vm1", stream) + eng.flush()

    first = run()
    assert len(first) == 3 and run() == first


def test_unknown_stream_and_policy():
    alpha = Alphabet([("a", CallKind.HYPERCALL)], frozen=True)
    eng = DetectionEngine([sig("atk", [0, 0, 0, 0])], alpha)
    with pytest.raises(UnknownStream):
        process_event(eng, CallEvent(0, "vm9", CallKind.HYPERCALL, "a"))
    eng.register_stream("vm1")
    with pytest.raises(PolicyError):
        process_event(eng, CallEvent(0, "vm1", CallKind.SYSCALL, "execve"))
    # unknown calls map to the never-matching symbol
    assert process_event(eng, CallEvent(1, "vm1", CallKind.HYPERCALL, "zzz")) == []
    assert eng.streams["vm1"].view()[0].tolist() == [-1]


def test_liveness_regular_beats():
    eng = engine_with(sig("atk", list(range(4))))
    alerts = []
    for t in range(0, 20_000_001, 2_000_000):
        for sid in ("vm1", "vm2", "vm3"):
            heartbeat(eng, sid, t)
        alerts += check_liveness(eng, t + 1_000_000)
    assert alerts == []


def test_liveness_alert_and_suppression():
    eng = DetectionEngine([sig("atk", list(range(4)))])
    eng.register_stream("vm1", now_us=0)
    alerts = check_liveness(eng, 6_100_000)
    assert len(alerts) == 1
    assert alerts[0].kind is AlertKind.LIVENESS and alerts[0].streams == ("vm1",)
    assert check_liveness(eng, 8_000_000) == []
    heartbeat(eng, "vm1", 9_000_000)
    assert check_liveness(eng, 10_000_000) == []
    assert len(check_liveness(eng, 15_100_000)) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(tau=0)
    with pytest.raises(ValueError):
        DetectorConfig(window=0)
    assert DetectorConfig(tau=None).threshold_for(sig("x", [1, 2, 3, 4])) == 0.8
