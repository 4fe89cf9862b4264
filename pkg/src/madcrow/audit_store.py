"""Versioned text storage for signatures and alerts.

Signature database (``madcrow-sigdb v1``)::

    madcrow-sigdb v1
    alphabet<TAB><alphabet version id>
    madcrow-signature v1
    attack_id<TAB>smurf_flood
    ...
    end

Each signature record is also a standalone signature file. Alert log
(``madcrow-alerts v1``): one tab-separated record per line. :class:`AlertLog` only
ever appends.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .alignment import ScoringScheme
from .detection import Alert, AlertKind, SegmentHit
from .errors import AlphabetMismatch, CorruptEntry, DuplicateId, ParseError, StorageError, VersionError
from .signature_gen import Provenance, Segment, Signature
from .trace_model import _ID_RE

SIGNATURE_HEADER = "madcrow-signature v1"
SIGDB_HEADER = "madcrow-sigdb v1"
ALERTS_HEADER = "madcrow-alerts v1"


def atomic_write_text(path, text: str):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


# -- signatures -------------------------------------------------------------

def format_signature(sig: Signature) -> str:
    s = sig.scheme
    lines = [
        SIGNATURE_HEADER,
        f"attack_id\t{sig.attack_id}",
        f"alphabet\t{sig.alphabet_ref or '-'}",
        f"scheme\t{s.match_score}\t{s.mismatch_penalty}\t{s.gap_penalty}",
        f"threshold\t{sig.default_threshold!r}",
        f"provenance\t{sig.provenance.traces}\t{sig.provenance.rounds}",
        f"segments\t{len(sig.segments)}",
    ]
    for seg in sig.segments:
        lines.append(f"segment\t{seg.index}\t{' '.join(map(str, seg.symbols))}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def _fields(line, lineno, key, count):
    parts = line.split("\t")
    if parts[0] != key or len(parts) != count + 1:
        raise CorruptEntry(f"expected {key!r} with {count} field(s)", lineno, 1)
    return parts[1:]


def _int(text, lineno):
    try:
        return int(text)
    except ValueError:
        raise CorruptEntry(f"bad integer {text!r}", lineno) from None


def _parse_signature_block(lines, start):
    """Parse one record whose header is at ``lines[start]``; return (sig, next index)."""

    def get(k):
        if k >= len(lines):
            raise CorruptEntry("truncated signature record", len(lines) if lines else 1)
        return lines[k]

    k = start
    if get(k) != SIGNATURE_HEADER:
        raise VersionError(f"expected {SIGNATURE_HEADER!r} at line {k + 1}, got {get(k)!r}")
    (attack_id,) = _fields(get(k + 1), k + 2, "attack_id", 1)
    if not _ID_RE.fullmatch(attack_id):
        raise CorruptEntry(f"bad attack id {attack_id!r}", k + 2)
    (alphabet_ref,) = _fields(get(k + 2), k + 3, "alphabet", 1)
    m, x, g = (_int(v, k + 4) for v in _fields(get(k + 3), k + 4, "scheme", 3))
    (thr,) = _fields(get(k + 4), k + 5, "threshold", 1)
    traces, rounds = (_int(v, k + 6) for v in _fields(get(k + 5), k + 6, "provenance", 2))
    (count,) = _fields(get(k + 6), k + 7, "segments", 1)
    count = _int(count, k + 7)
    k += 7
    segments = []
    for idx in range(count):
        line = get(k)
        if line == "end":
            raise CorruptEntry(f"expected {count} segments, found {idx}", k + 1)
        index, body = _fields(line, k + 1, "segment", 2)
        if _int(index, k + 1) != idx:
            raise CorruptEntry(f"segment index {index} out of order", k + 1)
        try:
            symbols = tuple(int(t) for t in body.split())
            segments.append(Segment(symbols, idx))
        except ValueError as exc:
            raise CorruptEntry(f"bad segment: {exc}", k + 1) from None
        k += 1
    if get(k) != "end":
        raise CorruptEntry("signature record not terminated by 'end'", k + 1)
    try:
        sig = Signature(
            attack_id=attack_id,
            segments=tuple(segments),
            scheme=ScoringScheme(m, x, g),
            default_threshold=float(thr),
            provenance=Provenance(traces, rounds),
            alphabet_ref="" if alphabet_ref == "-" else alphabet_ref,
        )
    except ValueError as exc:
        raise CorruptEntry(f"invalid signature {attack_id!r}: {exc}", start + 1) from None
    return sig, k + 1


def parse_signature(text: str) -> Signature:
    lines = text.splitlines()
    sig, nxt = _parse_signature_block(lines, 0)
    if any(line.strip() for line in lines[nxt:]):
        raise CorruptEntry("trailing content after signature", nxt + 1)
    return sig


@dataclass
class SignatureDb:
    path: Optional[Path]
    alphabet_ref: str
    entries: dict = field(default_factory=dict)

    @classmethod
    def open(cls, path, alphabet_ref: Optional[str] = None) -> "SignatureDb":
        """Load ``path`` if it exists, otherwise start an empty db bound to ``alphabet_ref``."""
        path = Path(path)
        if path.exists():
            db = load_signatures(path)
            if alphabet_ref is not None and db.alphabet_ref != alphabet_ref:
                raise AlphabetMismatch(
                    f"{path} is bound to alphabet {db.alphabet_ref}, not {alphabet_ref}"
                )
            return db
        if alphabet_ref is None:
            raise StorageError(f"{path} does not exist")
        return cls(path, alphabet_ref)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.values())

    def __getitem__(self, attack_id):
        return self.entries[attack_id]

    def add(self, sig: Signature):
        if sig.attack_id in self.entries:
            raise DuplicateId(f"signature {sig.attack_id!r} already in the database")
        if sig.alphabet_ref != self.alphabet_ref:
            raise AlphabetMismatch(
                f"signature {sig.attack_id!r} uses alphabet {sig.alphabet_ref or '-'}, "
                f"database is bound to {self.alphabet_ref}"
            )
        self.entries[sig.attack_id] = sig

    def format(self) -> str:
        head = f"{SIGDB_HEADER}\nalphabet\t{self.alphabet_ref}\n"
        return head + "".join(format_signature(s) for s in self.entries.values())

    def save(self):
        if self.path is None:
            raise StorageError("database has no path")
        atomic_write_text(self.path, self.format())


def save_signature(db: SignatureDb, sig: Signature):
    """Add ``sig`` to ``db`` and persist the whole database atomically."""
    db.add(sig)
    try:
        db.save()
    except StorageError:
        del db.entries[sig.attack_id]
        raise


def parse_sigdb(text: str, path=None) -> SignatureDb:
    lines = text.splitlines()
    if not lines or lines[0] != SIGDB_HEADER:
        found = lines[0] if lines else "<empty file>"
        raise VersionError(f"unsupported signature db header {found!r}; expected {SIGDB_HEADER!r}")
    if len(lines) < 2:
        raise CorruptEntry("missing alphabet binding", 2)
    (alphabet_ref,) = _fields(lines[1], 2, "alphabet", 1)
    db = SignatureDb(Path(path) if path else None, alphabet_ref)
    k = 2
    while k < len(lines):
        if not lines[k].strip():
            k += 1
            continue
        if lines[k] != SIGNATURE_HEADER:
            raise CorruptEntry(f"expected {SIGNATURE_HEADER!r}", k + 1, 1)
        sig, k_next = _parse_signature_block(lines, k)
        try:
            db.add(sig)
        except (DuplicateId, AlphabetMismatch) as exc:
            raise CorruptEntry(str(exc), k + 1) from None
        k = k_next
    return db


def load_signatures(path) -> SignatureDb:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    return parse_sigdb(text, path)


# -- alerts -----------------------------------------------------------------

def _format_hit(h: SegmentHit) -> str:
    return (
        f"{h.segment_index}:{h.stream_id}:{h.window_span[0]}:{h.window_span[1]}:"
        f"{h.raw_score}:{h.normalized_vs_query:.4f}:{h.time_us}"
    )


def format_alert(alert: Alert) -> str:
    sig = alert.signature_id or "-"
    conf = "-" if alert.confidence is None else f"{alert.confidence:.4f}"
    evidence = ";".join(_format_hit(h) for h in alert.evidence) or "-"
    return "\t".join(
        [alert.kind.value, sig, conf, ",".join(alert.streams), str(alert.start_us), str(alert.end_us), evidence]
    )


def parse_alert(line: str, lineno=None) -> Alert:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 7:
        raise ParseError(f"alert record needs 7 fields, got {len(parts)}", lineno, 1)
    kind_text, sig, conf, streams, start, end, evidence = parts
    try:
        kind = AlertKind(kind_text)
        hits = []
        if evidence != "-":
            for item in evidence.split(";"):
                seg, stream, s0, s1, raw, norm, t = item.split(":")
                hits.append(
                    SegmentHit(sig, int(seg), stream, int(raw), float(norm), (int(s0), int(s1)), int(t))
                )
        return Alert(
            kind=kind,
            signature_id=None if sig == "-" else sig,
            confidence=None if conf == "-" else float(conf),
            streams=tuple(streams.split(",")) if streams else (),
            start_us=int(start),
            end_us=int(end),
            evidence=tuple(hits),
        )
    except ValueError as exc:
        raise ParseError(f"bad alert record: {exc}", lineno) from None


def canonical_alert(alert: Alert) -> Alert:
    """The alert as it reads back from the log (scores rounded to 4 places)."""
    return parse_alert(format_alert(alert))


class AlertLog:
    """Append-only alert log file."""

    def __init__(self, path):
        self.path = Path(path)

    def _check_header(self):
        with open(self.path, encoding="utf-8") as fh:
            first = fh.readline().rstrip("\n")
        if first != ALERTS_HEADER:
            raise VersionError(f"{self.path}: expected header {ALERTS_HEADER!r}, got {first!r}")

    def ensure(self):
        """Create the log with its header if missing; validate the header otherwise."""
        try:
            if self.path.exists() and self.path.stat().st_size > 0:
                self._check_header()
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(ALERTS_HEADER + "\n")
        except OSError as exc:
            raise StorageError(f"cannot open alert log {self.path}: {exc}") from exc

    def append(self, alert: Alert):
        self.extend([alert])

    def extend(self, alerts: Iterable[Alert]):
        self.ensure()
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                for alert in alerts:
                    fh.write(format_alert(alert) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StorageError(f"cannot append to {self.path}: {exc}") from exc

    def read(self) -> list[Alert]:
        try:
            with open(self.path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise StorageError(f"cannot read {self.path}: {exc}") from exc
        if not lines or lines[0] != ALERTS_HEADER:
            raise VersionError(f"{self.path}: expected header {ALERTS_HEADER!r}")
        return [parse_alert(line, k) for k, line in enumerate(lines[1:], start=2) if line.strip()]

    def list(self, kind=None, signature_id=None, start_us=None, end_us=None) -> list[Alert]:
        """Alerts in log order, filtered by kind, signature, and overlap with a time range."""
        if kind is not None:
            kind = AlertKind(kind)
        out = []
        for alert in self.read():
            if kind is not None and alert.kind is not kind:
                continue
            if signature_id is not None and alert.signature_id != signature_id:
                continue
            if start_us is not None and alert.end_us < start_us:
                continue
            if end_us is not None and alert.start_us > end_us:
                continue
            out.append(alert)
        return out


def append_alert(log: AlertLog, alert: Alert):
    log.append(alert)


def list_alerts(log: AlertLog, kind=None, signature_id=None, start_us=None, end_us=None) -> list[Alert]:
    return log.list(kind=kind, signature_id=signature_id, start_us=start_us, end_us=end_us)
