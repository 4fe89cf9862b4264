"""Call events, the symbol alphabet, and the plain-text trace and alphabet formats.

Trace line grammar (whitespace separated)::

    <timestamp_us> <stream_id> <H|S> <name>[(<args>)]

``#`` starts a comment line; blank lines are skipped. The argument text is
kept verbatim for forensics and reduced to a 64-bit digest; it never takes
part in alignment, only ``(name, kind)`` defines a symbol.
"""
from __future__ import annotations

import enum
import hashlib
import re
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

from .errors import (
    MixedStreams,
    ParseError,
    PolicyError,
    UnknownCall,
    UnsortedInput,
    VersionError,
)

PRIVILEGED_STREAM = "dom0"
ALPHABET_HEADER = "madcrow-alphabet v1"

# Symbol used at detection time for calls missing from a frozen alphabet; it never matches.
OTHER = -1

_ID_RE = re.compile(r"[A-Za-z0-9_.\-]+")
_NAME_RE = re.compile(r"[^\s()#]+")
_REST_RE = re.compile(r"([^\s()#]+)(?:\((.*)\))?")
_FIELD_RE = re.compile(r"\s*(\S+)")
_TAIL_RE = re.compile(r"\s+(\S.*?)\s*$")


class CallKind(str, enum.Enum):
    HYPERCALL = "H"
    SYSCALL = "S"

    @classmethod
    def from_tag(cls, tag):
        return cls(tag)


def arg_digest(args: str) -> int:
    """Stable 64-bit digest of an argument string."""
    return int.from_bytes(hashlib.blake2b(args.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass(frozen=True)
class CallEvent:
    timestamp_us: int
    stream_id: str
    kind: CallKind
    name: str
    args: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.timestamp_us, int) or self.timestamp_us < 0:
            raise ValueError("timestamp_us must be a non-negative integer")
        if not _ID_RE.fullmatch(self.stream_id or ""):
            raise ValueError(f"invalid stream id {self.stream_id!r}")
        if not _NAME_RE.fullmatch(self.name or ""):
            raise ValueError(f"invalid call name {self.name!r}")
        if not isinstance(self.kind, CallKind):
            object.__setattr__(self, "kind", CallKind(self.kind))
        if self.args is not None and ("\n" in self.args or "\r" in self.args):
            raise ValueError("args must be a single line")

    @property
    def arg_digest(self) -> Optional[int]:
        return None if self.args is None else arg_digest(self.args)

    @property
    def key(self):
        return (self.name, self.kind)


def check_policy(event: CallEvent, allow_guest_syscalls=False):
    if event.kind is CallKind.SYSCALL and event.stream_id != PRIVILEGED_STREAM and not allow_guest_syscalls:
        raise PolicyError(
            f"system call {event.name!r} on guest stream {event.stream_id!r}; "
            f"system calls are only monitored on {PRIVILEGED_STREAM}"
        )


class Alphabet:
    """Dense bijection between ``(name, kind)`` pairs and symbols ``0..N-1``.

    Extension is serialised by a lock. Once frozen, lookups of unknown pairs
    raise :class:`UnknownCall` (or return :data:`OTHER` via :meth:`lookup`).
    """

    def __init__(self, entries: Iterable[tuple[str, CallKind]] = (), frozen=False):
        self._to_symbol: dict[tuple[str, CallKind], int] = {}
        self._to_key: list[tuple[str, CallKind]] = []
        self._lock = threading.Lock()
        self.frozen = False
        for name, kind in entries:
            self.encode(name, kind)
        self.frozen = frozen

    def __len__(self):
        return len(self._to_key)

    def __contains__(self, key):
        name, kind = key
        return (name, CallKind(kind)) in self._to_symbol

    def __eq__(self, other):
        return isinstance(other, Alphabet) and self._to_key == other._to_key

    def __repr__(self):
        return f"Alphabet({len(self)} symbols, frozen={self.frozen})"

    def freeze(self):
        self.frozen = True
        return self

    def encode(self, name: str, kind) -> int:
        key = (name, CallKind(kind))
        sym = self._to_symbol.get(key)
        if sym is not None:
            return sym
        if self.frozen:
            raise UnknownCall(f"{key[1].value}:{name} is not in the frozen alphabet")
        if not _NAME_RE.fullmatch(name or ""):
            raise ValueError(f"invalid call name {name!r}")
        with self._lock:
            sym = self._to_symbol.get(key)
            if sym is None:
                sym = len(self._to_key)
                self._to_key.append(key)
                self._to_symbol[key] = sym
        return sym

    def lookup(self, name: str, kind) -> int:
        """Symbol for a known pair, :data:`OTHER` otherwise; never extends."""
        return self._to_symbol.get((name, CallKind(kind)), OTHER)

    def decode(self, symbol: int) -> tuple[str, CallKind]:
        if not 0 <= symbol < len(self._to_key):
            raise UnknownCall(f"symbol {symbol} is not in the alphabet")
        return self._to_key[symbol]

    def items(self) -> Iterator[tuple[int, str, CallKind]]:
        for sym, (name, kind) in enumerate(self._to_key):
            yield sym, name, kind

    @property
    def version_id(self) -> str:
        """Content hash identifying this exact symbol table."""
        return hashlib.sha256(format_alphabet(self).encode("utf-8")).hexdigest()[:16]


def encode_event(event: CallEvent, alphabet: Alphabet) -> int:
    return alphabet.encode(event.name, event.kind)


@dataclass(frozen=True)
class CallSequence:
    stream_id: str
    symbols: tuple[int, ...]
    timestamps_us: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))
        object.__setattr__(self, "timestamps_us", tuple(int(t) for t in self.timestamps_us))
        if len(self.symbols) != len(self.timestamps_us):
            raise ValueError("symbols and timestamps_us must have equal length")
        if any(t1 < t0 for t0, t1 in zip(self.timestamps_us, self.timestamps_us[1:])):
            raise UnsortedInput("timestamps_us must be non-decreasing")

    def __len__(self):
        return len(self.symbols)


def build_sequence(events: Iterable[CallEvent], alphabet: Alphabet, allow_guest_syscalls=False) -> CallSequence:
    events = list(events)
    if not events:
        return CallSequence("", (), ())
    stream = events[0].stream_id
    symbols = []
    stamps = []
    last = None
    for ev in events:
        if ev.stream_id != stream:
            raise MixedStreams(f"events from {stream!r} and {ev.stream_id!r} in one sequence")
        if last is not None and ev.timestamp_us < last:
            raise UnsortedInput(f"timestamp {ev.timestamp_us} follows {last}")
        check_policy(ev, allow_guest_syscalls)
        last = ev.timestamp_us
        symbols.append(encode_event(ev, alphabet))
        stamps.append(ev.timestamp_us)
    return CallSequence(stream, tuple(symbols), tuple(stamps))


def decode_sequence(seq: CallSequence, alphabet: Alphabet):
    return [alphabet.decode(s) for s in seq.symbols]


# -- trace lines ------------------------------------------------------------

def parse_trace_line(line: str, lineno=None, allow_guest_syscalls=True) -> Optional[CallEvent]:
    """Parse one trace line; comments and blank lines return ``None``.

    Guest system calls are accepted by default and rejected later by
    :func:`build_sequence` unless the policy override is set. Passing
    ``allow_guest_syscalls=False`` applies the policy here instead.
    """
    text = line.rstrip("\r\n")
    stripped = text.strip()
    if not stripped or stripped.startswith("#"):
        return None

    fields = []
    pos = 0
    for _ in range(3):
        m = _FIELD_RE.match(text, pos)
        if m is None:
            raise ParseError("truncated trace line", lineno, len(text) + 1)
        fields.append((m.group(1), m.start(1) + 1))
        pos = m.end()
    rest_m = _TAIL_RE.match(text, pos)
    if rest_m is None:
        raise ParseError("missing call name", lineno, len(text) + 1)
    rest, rest_col = rest_m.group(1), rest_m.start(1) + 1

    (ts_text, ts_col), (stream, stream_col), (tag, tag_col) = fields
    if not ts_text.isdigit():
        raise ParseError(f"bad timestamp {ts_text!r}", lineno, ts_col)
    if not _ID_RE.fullmatch(stream):
        raise ParseError(f"bad stream id {stream!r}", lineno, stream_col)
    try:
        kind = CallKind.from_tag(tag)
    except ValueError:
        raise ParseError(f"bad kind {tag!r}, expected H or S", lineno, tag_col) from None
    call = _REST_RE.fullmatch(rest)
    if call is None:
        raise ParseError(f"bad call {rest!r}", lineno, rest_col)
    event = CallEvent(int(ts_text), stream, kind, call.group(1), call.group(2))
    if not allow_guest_syscalls:
        try:
            check_policy(event)
        except PolicyError as exc:
            raise ParseError(str(exc), lineno, tag_col) from None
    return event


def format_trace_line(event: CallEvent) -> str:
    call = event.name if event.args is None else f"{event.name}({event.args})"
    return f"{event.timestamp_us} {event.stream_id} {event.kind.value} {call}"


def read_trace(lines: Iterable[str]) -> list[CallEvent]:
    events = []
    for lineno, line in enumerate(lines, start=1):
        ev = parse_trace_line(line, lineno)
        if ev is not None:
            events.append(ev)
    return events


def read_trace_file(path) -> list[CallEvent]:
    with open(path, encoding="utf-8") as fh:
        return read_trace(fh)


def write_trace_file(path, events: Iterable[CallEvent], comment=None):
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for ev in events:
            fh.write(format_trace_line(ev) + "\n")


def sequence_events(seq: CallSequence, alphabet: Alphabet) -> list[CallEvent]:
    """Turn an encoded sequence back into events (without argument text)."""
    out = []
    for sym, ts in zip(seq.symbols, seq.timestamps_us):
        name, kind = alphabet.decode(sym)
        out.append(CallEvent(ts, seq.stream_id, kind, name))
    return out


# -- alphabet file ----------------------------------------------------------

def format_alphabet(alphabet: Alphabet) -> str:
    lines = [ALPHABET_HEADER]
    lines.extend(f"{sym}\t{kind.value}\t{name}" for sym, name, kind in alphabet.items())
    return "\n".join(lines) + "\n"


def parse_alphabet(text: str, frozen=True) -> Alphabet:
    lines = text.splitlines()
    if not lines or lines[0].strip() != ALPHABET_HEADER:
        raise VersionError(f"expected header {ALPHABET_HEADER!r}")
    alphabet = Alphabet()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError("expected symbol<TAB>kind<TAB>name", lineno, 1)
        sym_text, tag, name = parts
        if not sym_text.isdigit():
            raise ParseError(f"bad symbol {sym_text!r}", lineno, 1)
        try:
            kind = CallKind.from_tag(tag)
        except ValueError:
            raise ParseError(f"bad kind {tag!r}", lineno, len(sym_text) + 2) from None
        if int(sym_text) != len(alphabet):
            raise ParseError(f"symbols must be dense and ordered, got {sym_text}", lineno, 1)
        if (name, kind) in alphabet:
            raise ParseError(f"duplicate entry {tag}:{name}", lineno, 1)
        try:
            alphabet.encode(name, kind)
        except ValueError as exc:
            raise ParseError(str(exc), lineno, len(sym_text) + len(tag) + 3) from None
    alphabet.frozen = frozen
    return alphabet


def load_alphabet(path, frozen=True) -> Alphabet:
    with open(path, encoding="utf-8") as fh:
        return parse_alphabet(fh.read(), frozen=frozen)


def save_alphabet(path, alphabet: Alphabet):
    from .audit_store import atomic_write_text

    atomic_write_text(path, format_alphabet(alphabet))
