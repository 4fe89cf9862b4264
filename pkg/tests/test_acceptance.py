"""End-to-end acceptance checks, one per criterion.

Each check appends a ``[PASS]``/``[FAIL]`` line that pytest prints in its
terminal summary. Run directly (``python tests/test_acceptance.py``) to get
the same lines without pytest's report.
"""
import sys
import time
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

import conftest  # noqa: E402
from madcrow import alignment, kernels  # noqa: E402
from madcrow.alignment import similarity, sw_align, sw_score, sw_score_wavefront  # noqa: E402
from madcrow.audit_store import format_alert, format_signature, parse_alert, parse_signature  # noqa: E402
from madcrow.cli import run_bench  # noqa: E402
from madcrow.detection import Alert, AlertKind, DetectionEngine, DetectorConfig, SegmentHit  # noqa: E402
from madcrow.signature_gen import AttackTraceSet, DistillParams, Provenance, Segment, Signature, distill  # noqa: E402
from madcrow.simulator import (  # noqa: E402
    SCENARIOS,
    GroundTruth,
    InjectionPlan,
    ScenarioParams,
    TruthLabel,
    format_truth,
    gen_benign,
    inject,
    parse_truth,
    scenario,
)
from madcrow.trace_model import (  # noqa: E402
    Alphabet,
    CallEvent,
    CallKind,
    format_alphabet,
    format_trace_line,
    parse_alphabet,
    parse_trace_line,
)
from oracle import naive_score, replay  # noqa: E402

alignment.VERIFY_TRACEBACK = True
PRESETS = sorted(SCENARIOS)


def record(n, desc, ok, details, gate=True):
    line = f"[{'PASS' if ok else 'FAIL'}] {n} {desc}: {details}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    if gate:
        assert ok, line


def replay_streams(engine, streams):
    """Feed streams to ``engine`` in global timestamp order; return all alerts."""
    for s in streams:
        engine.register_stream(s.stream_id)
    order = sorted((t, k, i) for k, s in enumerate(streams) for i, t in enumerate(s.timestamps_us))
    alerts = []
    for t, k, i in order:
        alerts += engine.push(streams[k].stream_id, streams[k].symbols[i], t)
    return alerts + engine.flush()


def attacks(alerts):
    return [a for a in alerts if a.kind is AlertKind.ATTACK]


def test_01_oracle_equivalence():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        a = rng.integers(0, 16, rng.integers(0, 65)).tolist()
        b = rng.integers(0, 16, rng.integers(0, 65)).tolist()
        exp = naive_score(a, b)
        bad += sw_score(a, b) != exp or sw_align(a, b).score != exp
    secs = time.perf_counter() - t0
    record(1, "alignment oracle equivalence", bad == 0 and secs < 10, f"{1000 - bad}/1000 exact, {secs:.2f}s")


def test_02_parallel_correctness():
    rng = np.random.default_rng(202)
    bad = 0
    lanes = (1, 2, 4, 8)
    for k in range(200):
        a = rng.integers(0, 16, rng.integers(1, 4097))
        b = rng.integers(0, 16, rng.integers(1, 4097))
        bad += sw_score_wavefront(a, b, lanes=lanes[k % 4]) != sw_score(a, b)
    record(2, "wavefront equals scalar", bad == 0, f"{200 - bad}/200 bit-exact, backend {kernels.BACKEND}")


def test_03_traceback_soundness():
    rng = np.random.default_rng(303)
    before = alignment.verified_alignments
    independent = 0
    for _ in range(500):
        a = rng.integers(0, 6, rng.integers(0, 40)).tolist()
        b = rng.integers(0, 6, rng.integers(0, 40)).tolist()
        r = sw_align(a, b)
        if r.ops:
            assert replay(r.ops, r.a_span, r.b_span, a, b) == r.score
            independent += 1
    # a replay mismatch raises inside sw_align, so reaching here means all passed
    total = alignment.verified_alignments
    record(3, "traceback soundness", total - before == 500,
           f"{total} alignments replayed in this session, {independent} also by the test oracle")


def test_04_signature_idempotence():
    s = np.random.default_rng(404).integers(0, 32, 64).tolist()
    sig = distill(AttackTraceSet.from_symbols("idem", [s] * 8))
    ok = len(sig.segments) == 1 and list(sig.segments[0].symbols) == s
    record(4, "signature idempotence", ok, f"{len(sig.segments)} segment(s), exact={ok}")


def _perturbed_copies(rng, s, p):
    copies = []
    for _ in range(8):
        out = []
        for x in s:
            if rng.random() < 0.05:
                y = x
                while y == x:
                    y = int(rng.choice(64, p=p))
                out.append(y)
            else:
                out.append(x)
            if rng.random() < 0.10:
                out.append(int(rng.choice(64, p=p)))
        copies.append(out)
    return copies


def test_05_signature_robustness():
    w = np.arange(1, 65, dtype=float) ** -1.1
    p = w / w.sum()
    sims = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        s = rng.integers(0, 16, 64).tolist()
        sig = distill(AttackTraceSet.from_symbols("rob", _perturbed_copies(rng, s, p)))
        sims.append(similarity(list(sig.symbols), s).normalized)
    record(5, "signature robustness", min(sims) >= 0.85, f"min similarity {min(sims):.3f} over 20 seeds (mean {np.mean(sims):.3f})")


def test_06_detection_recall():
    hits = 0
    misses = []
    for seed in range(50):
        name = PRESETS[seed % 3]
        params = ScenarioParams(n_streams=1 + (seed // 3) % 3, noise_ratio=10.0)
        results = {n: scenario(n, params, seed) for n in PRESETS}
        engine = DetectionEngine([distill(r.traces) for r in results.values()], config=DetectorConfig(tau=0.8))
        got = attacks(replay_streams(engine, list(results[name].streams)))
        if len(got) == 1 and got[0].signature_id == name:
            hits += 1
        else:
            misses.append(seed)
    record(6, "detection recall", hits >= 48, f"{hits}/50 exact expected alert" + (f", misses at seeds {misses}" if misses else ""))


def test_07_false_positives():
    sigs = [distill(scenario(n, ScenarioParams(), 1000).traces, params=DistillParams(m_min=8)) for n in PRESETS]
    assert min(len(seg) for s in sigs for seg in s.segments) >= 8
    total = 0
    for seed in range(50):
        engine = DetectionEngine(sigs, config=DetectorConfig(tau=0.8))
        total += len(attacks(replay_streams(engine, [gen_benign(seed, 10_000)])))
    record(7, "false positives", total <= 1, f"{total} attack alert(s) over 50 x 10,000 benign events")


def test_08_cross_vm_correlation():
    good = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        phases = [tuple(int(x) for x in rng.integers(64, 96, 16)) for _ in range(3)]
        sig = Signature("xvm", tuple(Segment(p, k) for k, p in enumerate(phases)))
        benign = [gen_benign(seed * 10 + k, 600, stream_id=f"vm{k + 1}") for k in range(3)]
        plan = InjectionPlan(sum(phases, ()), ("vm1", "vm2", "vm3"), (16, 32), start_time_us=100_000, stagger_us=50_000, attack_id="xvm")
        streams, _ = inject(benign, plan, seed)
        got = attacks(replay_streams(DetectionEngine([sig]), streams))
        good += len(got) == 1 and got[0].streams == ("vm1", "vm2", "vm3")
    record(8, "cross-VM correlation", good == 10, f"{good}/10 runs gave exactly one alert naming vm1,vm2,vm3")


def test_09_heartbeat_liveness():
    sig = Signature("hb", (Segment((1, 2, 3, 4), 0),))
    engine = DetectionEngine([sig], config=DetectorConfig(heartbeat_period_us=2_000_000, heartbeat_misses=3))
    for sid in ("vm1", "vm2"):
        engine.register_stream(sid, 0)
    silent = [(10_000_000, 20_000_000), (30_000_000, 40_000_000)]
    alerts = []
    for t in range(0, 50_000_001, 500_000):
        for sid in ("vm1", "vm2"):
            quiet = sid == "vm2" and any(lo <= t < hi for lo, hi in silent)
            if t % 2_000_000 == 0 and not quiet:
                engine.heartbeat(sid, t)
        alerts += engine.check_liveness(t)
    live = [a for a in alerts if a.kind is AlertKind.LIVENESS]
    first_gap = [a for a in live if a.end_us < 25_000_000]
    ok = len(first_gap) == 1 and len(live) == 2 and all(a.streams == ("vm2",) for a in live)
    record(9, "heartbeat liveness", ok,
           f"{len(first_gap)} alert for the first >6s silence, {len(live) - len(first_gap)} after re-arm, "
           f"at t={[a.end_us / 1e6 for a in live]}s")


def test_10_performance_report():
    rows = run_bench([4096], [1, 4], iters=3, verify=True)
    by_lanes = {r["lanes"]: r for r in rows if r["kernel"] == "wavefront"}
    speedup = by_lanes[4]["speedup"]
    import os

    record(10, "performance report (recorded, not gated)", True,
           f"length 4096, {os.cpu_count()} cpu(s), backend {kernels.BACKEND}: wavefront lanes=4 {speedup:.2f}x, "
           f"lanes=1 {by_lanes[1]['speedup']:.2f}x over scalar; verification passed")
    if speedup < 2:
        record(10, "performance note", False, f"speedup {speedup:.2f}x below the 2x reference", gate=False)


names = st.from_regex(r"[a-z_][a-z0-9_]{0,10}", fullmatch=True)
ids = st.from_regex(r"[A-Za-z0-9_][A-Za-z0-9_.\-]{0,8}", fullmatch=True)
kinds = st.sampled_from(list(CallKind))


@st.composite
def signatures(draw):
    segs = draw(st.lists(st.lists(st.integers(0, 500), min_size=1, max_size=12), min_size=1, max_size=4))
    return Signature(
        draw(st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)),
        tuple(Segment(tuple(s), k) for k, s in enumerate(segs)),
        alignment.ScoringScheme(draw(st.integers(1, 5)), draw(st.integers(-5, -1)), draw(st.integers(-5, -1))),
        draw(st.floats(0.01, 1.0)),
        Provenance(draw(st.integers(0, 64)), draw(st.integers(0, 6))),
        draw(st.sampled_from(["", "0123abcd"])),
    )


@st.composite
def alerts_st(draw):
    kind = draw(st.sampled_from(list(AlertKind)))
    sig = draw(st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)) if kind is AlertKind.ATTACK else None
    streams = tuple(draw(st.lists(ids, min_size=1, max_size=3)))
    hits = tuple(
        SegmentHit(sig or "-", k, streams[0], draw(st.integers(0, 99)), round(draw(st.floats(0, 1)), 4), (k, k + 5), draw(st.integers(0, 10**9)))
        for k in range(draw(st.integers(0, 3)) if sig else 0)
    )
    conf = round(draw(st.floats(0, 1)), 4) if sig else None
    t = sorted(draw(st.lists(st.integers(0, 2**40), min_size=2, max_size=2)))
    return Alert(kind, sig, conf, streams, t[0], t[1], hits)


@st.composite
def truths(draw):
    labels = tuple(
        TruthLabel(draw(ids), draw(st.integers(0, 10**6)), draw(ids), draw(st.integers(0, 5)), draw(st.booleans()))
        for _ in range(draw(st.integers(0, 5)))
    )
    return GroundTruth(labels, tuple((draw(ids), draw(st.integers(0, 3))) for _ in range(draw(st.integers(0, 3)))))


def _round_trips():
    @settings(max_examples=200, deadline=None)
    @given(ts=st.integers(0, 2**53), sid=ids, kind=kinds, name=names, args=st.none() | st.from_regex(r"[a-z0-9=,]{0,10}", fullmatch=True))
    def trace(ts, sid, kind, name, args):
        line = format_trace_line(CallEvent(ts, sid, kind, name, args))
        assert format_trace_line(parse_trace_line(line)) == line
        assert parse_trace_line(line) == CallEvent(ts, sid, kind, name, args)

    @settings(max_examples=100, deadline=None)
    @given(entries=st.lists(st.tuples(names, kinds), unique=True, max_size=30))
    def alpha(entries):
        text = format_alphabet(Alphabet(entries, frozen=True))
        assert format_alphabet(parse_alphabet(text)) == text
        assert parse_alphabet(text) == Alphabet(entries)

    @settings(max_examples=150, deadline=None)
    @given(sig=signatures())
    def signature(sig):
        assert parse_signature(format_signature(sig)) == sig

    @settings(max_examples=150, deadline=None)
    @given(a=alerts_st())
    def alerts(a):
        assert parse_alert(format_alert(a)) == a

    @settings(max_examples=150, deadline=None)
    @given(t=truths())
    def truth(t):
        assert parse_truth(format_truth(t)) == t

    return {"trace": trace, "alphabet": alpha, "signature": signature, "alerts": alerts, "truth": truth}


def test_11_round_trip():
    failed = []
    for fmt, check in _round_trips().items():
        try:
            check()
        except Exception as exc:
            failed.append(f"{fmt} ({type(exc).__name__})")
    record(11, "file format round-trip", not failed, "all five formats lossless" if not failed else "failed: " + ", ".join(failed))


if __name__ == "__main__":
    failures = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                failures += 1
    sys.exit(1 if failures else 0)
