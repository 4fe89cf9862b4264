import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madcrow.alignment import ScoringScheme
from madcrow.audit_store import (
    ALERTS_HEADER,
    AlertLog,
    SignatureDb,
    append_alert,
    canonical_alert,
    format_alert,
    format_signature,
    list_alerts,
    load_signatures,
    parse_alert,
    parse_signature,
    save_signature,
)
from madcrow.detection import Alert, AlertKind, SegmentHit
from madcrow.errors import AlphabetMismatch, CorruptEntry, DuplicateId, StorageError, VersionError
from madcrow.signature_gen import Provenance, Segment, Signature

REF = "a1b2c3d4"


def make_sig(attack_id="smurf_flood", segs=((1, 2, 3, 4), (5, 6, 7, 8, 9)), ref=REF):
    return Signature(
        attack_id,
        tuple(Segment(s, k) for k, s in enumerate(segs)),
        ScoringScheme(2, -1, -1),
        0.8,
        Provenance(8, 3),
        ref,
    )


def test_save_then_load(tmp_path):
    db = SignatureDb.open(tmp_path / "sig.db", REF)
    sig = make_sig()
    save_signature(db, sig)
    loaded = load_signatures(tmp_path / "sig.db")
    assert loaded.alphabet_ref == REF
    assert loaded["smurf_flood"] == sig


def test_duplicate_and_mismatch(tmp_path):
    db = SignatureDb.open(tmp_path / "sig.db", REF)
    save_signature(db, make_sig())
    with pytest.raises(DuplicateId):
        save_signature(db, make_sig())
    with pytest.raises(AlphabetMismatch):
        save_signature(db, make_sig("other", ref="ffff0000"))
    assert len(load_signatures(tmp_path / "sig.db")) == 1
    with pytest.raises(AlphabetMismatch):
        SignatureDb.open(tmp_path / "sig.db", "ffff0000")


def test_empty_and_three_entries(tmp_path):
    path = tmp_path / "sig.db"
    path.write_text(f"madcrow-sigdb v1\nalphabet\t{REF}\n")
    assert len(load_signatures(path)) == 0
    db = load_signatures(path)
    for name in ("a", "b", "c"):
        save_signature(db, make_sig(name))
    again = load_signatures(path)
    assert [s.attack_id for s in again] == ["a", "b", "c"]


def test_truncated_record(tmp_path):
    db = SignatureDb(tmp_path / "sig.db", REF)
    save_signature(db, make_sig("a"))
    save_signature(db, make_sig("b"))
    lines = (tmp_path / "sig.db").read_text().splitlines()
    (tmp_path / "sig.db").write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(CorruptEntry) as info:
        load_signatures(tmp_path / "sig.db")
    assert info.value.line == len(lines) - 2


@pytest.mark.parametrize(
    "text, exc",
    [
        ("", VersionError),
        ("madcrow-sigdb v9\nalphabet\tx\n", VersionError),
        ("madcrow-sigdb v1\n", CorruptEntry),
        ("madcrow-sigdb v1\nalphabet\tx\ngarbage\n", CorruptEntry),
    ],
)
def test_bad_db_files(tmp_path, text, exc):
    (tmp_path / "sig.db").write_text(text)
    with pytest.raises(exc):
        load_signatures(tmp_path / "sig.db")


def test_missing_db(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_signatures(tmp_path / "none.db")
    with pytest.raises(StorageError):
        SignatureDb.open(tmp_path / "none.db")


def test_signature_text_round_trip():
    sig = make_sig()
    text = format_signature(sig)
    assert parse_signature(text) == sig
    assert format_signature(parse_signature(text)) == text
    with pytest.raises(CorruptEntry):
        parse_signature(text.replace("segments\t2", "segments\t3"))


def hit(k, stream="vm1"):
    return SegmentHit("atk", k, stream, 17, 0.85, (k * 10, k * 10 + 10), 1000 * k)


def alerts():
    return [
        Alert(AlertKind.ATTACK, "atk", 0.9, ("vm1", "vm2"), 0, 2000, (hit(0), hit(1, "vm2"))),
        Alert(AlertKind.LIVENESS, None, None, ("vm3",), 0, 6_100_000),
        Alert(AlertKind.ATTACK, "other", 1.0, ("vm1",), 7_000_000, 7_000_000, (hit(0),)),
        Alert(AlertKind.LIVENESS, None, None, ("vm1",), 2_000_000, 9_000_000),
        Alert(AlertKind.ATTACK, "atk", 0.8125, ("vm2",), 10_000_000, 11_000_000, (hit(0, "vm2"),)),
    ]


def test_alert_log_append_and_filter(tmp_path):
    log = AlertLog(tmp_path / "alerts.log")
    for a in alerts():
        append_alert(log, a)
    assert (tmp_path / "alerts.log").read_text().startswith(ALERTS_HEADER + "\n")
    assert list_alerts(log) == [canonical_alert(a) for a in alerts()]
    live = list_alerts(log, kind="liveness")
    assert len(live) == 2 and all(a.kind is AlertKind.LIVENESS for a in live)
    assert list_alerts(log, start_us=20_000_000) == []
    assert [a.signature_id for a in list_alerts(log, signature_id="atk")] == ["atk", "atk"]
    assert len(list_alerts(log, start_us=6_500_000, end_us=7_500_000)) == 2


def test_alert_log_rejects_foreign_file(tmp_path):
    (tmp_path / "alerts.log").write_text("something else\n")
    with pytest.raises(VersionError):
        append_alert(AlertLog(tmp_path / "alerts.log"), alerts()[1])


conf = st.none() | st.floats(0, 1).map(lambda x: round(x, 4))
ids = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)


@settings(max_examples=150, deadline=None)
@given(
    kind=st.sampled_from(list(AlertKind)),
    sig=st.none() | ids,
    c=conf,
    streams=st.lists(ids, min_size=1, max_size=3),
    t=st.tuples(st.integers(0, 2**40), st.integers(0, 2**40)),
    n_hits=st.integers(0, 3),
)
def test_alert_record_round_trip(kind, sig, c, streams, t, n_hits):
    hits = tuple(SegmentHit(sig or "-", k, streams[0], 5, 0.5, (k, k + 4), t[0]) for k in range(n_hits))
    a = Alert(kind, sig, c, tuple(streams), min(t), max(t), hits)
    line = format_alert(a)
    assert format_alert(parse_alert(line)) == line
