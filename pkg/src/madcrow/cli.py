"""Command-line entry point: ``madcrow sign|detect|simulate|bench``.

Exit codes are stable for scripting: 0 clean, 1 alerts raised (detect only),
2 on any error.
"""
from __future__ import annotations

import argparse
import heapq
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .alignment import DEFAULT_SCHEME
from .audit_store import (
    ALERTS_HEADER,
    AlertLog,
    SignatureDb,
    atomic_write_text,
    format_alert,
    load_signatures,
    save_signature,
)
from .detection import HEARTBEAT_PERIOD_US, AlertKind, DetectionEngine, DetectorConfig
from .errors import AlphabetMismatch, MadcrowError, StorageError, TooFewSequences
from .signature_gen import AttackTraceSet, DistillParams, distill
from .simulator import (
    SCENARIOS,
    ScenarioParams,
    format_heartbeats,
    format_truth,
    heartbeat_schedule,
    parse_heartbeats,
    scenario,
)
from .trace_model import (
    Alphabet,
    build_sequence,
    format_alphabet,
    load_alphabet,
    read_trace_file,
    save_alphabet,
    sequence_events,
    write_trace_file,
)

logger = logging.getLogger("madcrow")

ALPHABET_FILE = "alphabet.tsv"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    inputs: list = field(default_factory=list)
    db: Optional[Path] = None
    alerts: Optional[Path] = None
    alphabet: Optional[Path] = None
    detector: DetectorConfig = DetectorConfig()
    seed: Optional[int] = None
    verbose: int = 0

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        """Validate flag combinations before any work starts."""
        db = args.db if getattr(args, "db", None) else os.environ.get("MADCROW_DB")
        cfg = cls(
            subcommand=args.command,
            inputs=[Path(p) for p in getattr(args, "traces", None) or []],
            db=Path(db) if db else None,
            alerts=Path(args.alerts) if getattr(args, "alerts", None) else None,
            seed=getattr(args, "seed", None),
            verbose=args.verbose,
        )
        if cfg.subcommand in ("sign", "detect"):
            if cfg.db is None:
                raise UsageError("--db is required (or set MADCROW_DB)")
            alpha = getattr(args, "alphabet", None)
            cfg.alphabet = Path(alpha) if alpha else cfg.db.with_name(ALPHABET_FILE)
        if cfg.subcommand == "sign" and len(cfg.inputs) < 2:
            raise UsageError(f"need at least two traces, got {len(cfg.inputs)}")
        if cfg.subcommand == "detect":
            if not cfg.inputs:
                raise UsageError("detect needs at least one trace file")
            if cfg.alerts is None:
                raise UsageError("--alerts is required")
            cfg.detector = DetectorConfig(
                tau=args.tau,
                window=args.window,
                corr_window_us=args.corr_window_us,
                rescan_stride=args.stride,
                heartbeat_period_us=args.heartbeat_period_us,
                heartbeat_misses=args.heartbeat_k,
                allow_guest_syscalls=args.allow_guest_syscalls,
            )
        return cfg


# -- sign -------------------------------------------------------------------

def cmd_sign(args, cfg: RunConfig) -> int:
    alphabet = load_alphabet(cfg.alphabet, frozen=False) if cfg.alphabet.exists() else Alphabet()
    before = alphabet.version_id
    seqs = [
        build_sequence(read_trace_file(p), alphabet, args.allow_guest_syscalls)
        for p in cfg.inputs
    ]
    for path, seq in zip(cfg.inputs, seqs):
        if len(seq) == 0:
            raise MadcrowError(f"{path}: trace has no events")
    version = alphabet.version_id
    if cfg.db.exists():
        db = load_signatures(cfg.db)
        if db.alphabet_ref != version:
            extra = " (the traces add calls to the alphabet)" if version != before else ""
            raise AlphabetMismatch(f"{cfg.db} is bound to alphabet {db.alphabet_ref}, not {version}{extra}")
    else:
        db = SignatureDb(cfg.db, version)

    params = DistillParams(g_split=args.g_split, m_min=args.m_min, threshold=args.threshold, workers=args.workers)
    sig = distill(AttackTraceSet(args.attack_id, tuple(seqs), version), DEFAULT_SCHEME, params)
    if version != before or not cfg.alphabet.exists():
        save_alphabet(cfg.alphabet, alphabet)
    save_signature(db, sig)
    lengths = ",".join(str(len(s)) for s in sig.segments)
    print(
        f"{sig.attack_id}: {len(sig.segments)} segment(s), lengths {lengths}, "
        f"threshold {sig.default_threshold:g}, {sig.provenance.traces} traces, "
        f"{sig.provenance.rounds} rounds -> {cfg.db}"
    )
    return 0


# -- detect -----------------------------------------------------------------

def _timeline(paths, heartbeats):
    """Events and heartbeats in timestamp order.

    Heartbeats sort before events with the same timestamp; events with equal
    timestamps keep file order, then line order.
    """
    beats = ((t, 0, 0, k, ("beat", sid)) for k, (t, sid) in enumerate(heartbeats))
    sources = [beats]
    for f, path in enumerate(paths):
        events = read_trace_file(path)
        sources.append((ev.timestamp_us, 1, f, k, ("event", ev)) for k, ev in enumerate(events))
    for item in heapq.merge(*sources, key=lambda x: x[:4]):
        yield item[0], item[4]


def cmd_detect(args, cfg: RunConfig) -> int:
    db = load_signatures(cfg.db)
    alphabet = load_alphabet(cfg.alphabet, frozen=True)
    if db.alphabet_ref != alphabet.version_id:
        raise AlphabetMismatch(
            f"{cfg.db} is bound to alphabet {db.alphabet_ref}, but {cfg.alphabet} is {alphabet.version_id}"
        )
    beats = []
    if args.heartbeats:
        beats = parse_heartbeats(Path(args.heartbeats).read_text(encoding="utf-8"))
    items = list(_timeline(cfg.inputs, beats))

    engine = DetectionEngine(list(db), alphabet, cfg.detector)
    start = items[0][0] if items else 0
    for _, (what, payload) in items:
        sid = payload if what == "beat" else payload.stream_id
        engine.register_stream(sid, start)

    alerts = []
    now = start
    for t, (what, payload) in items:
        now = t
        if beats:
            alerts.extend(engine.check_liveness(t))
        if what == "beat":
            engine.heartbeat(payload, t)
        else:
            alerts.extend(engine.process_event(payload))
    alerts.extend(engine.flush())
    if beats:
        alerts.extend(engine.check_liveness(now))

    if args.append:
        AlertLog(cfg.alerts).extend(alerts)
    else:
        atomic_write_text(cfg.alerts, ALERTS_HEADER + "\n" + "".join(format_alert(a) + "\n" for a in alerts))
    for alert in alerts:
        print(format_alert(alert))
    n_attack = sum(a.kind is AlertKind.ATTACK for a in alerts)
    logger.info("%d events, %d attack alert(s), %d liveness alert(s)", len(items) - len(beats), n_attack, len(alerts) - n_attack)
    return 1 if alerts else 0


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args, cfg: RunConfig) -> int:
    params = ScenarioParams(n_streams=args.streams, noise_ratio=args.noise_ratio, n_traces=args.n_traces)
    res = scenario(args.scenario, params, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / ALPHABET_FILE, format_alphabet(res.alphabet))
    note = f"{args.scenario} seed {args.seed}"
    for seq in res.traces.sequences:
        write_trace_file(out / f"{seq.stream_id}.trace", sequence_events(seq, res.alphabet), f"signing trace, {note}")
    for seq in res.streams:
        write_trace_file(out / f"{seq.stream_id}.trace", sequence_events(seq, res.alphabet), f"evaluation stream, {note}")
    atomic_write_text(out / "truth.txt", format_truth(res.truth))
    atomic_write_text(out / "heartbeats.txt", format_heartbeats(heartbeat_schedule(res.streams, HEARTBEAT_PERIOD_US)))
    print(
        f"{args.scenario} seed {args.seed}: {len(res.traces.sequences)} signing traces, "
        f"{len(res.streams)} evaluation stream(s), {len(res.truth.labels)} attack calls -> {out}"
    )
    return 0


# -- bench ------------------------------------------------------------------

def _best_time(fn, iters):
    best = float("inf")
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(lengths, lanes, iters=3, verify=True, backend=None, seed=0):
    """Time the scalar and wavefront kernels; returns one dict per table row."""
    mod = kernels.get_backend(backend) if backend else kernels
    rng = np.random.default_rng(seed)
    w = DEFAULT_SCHEME.weights
    # compile outside the timed region
    warm = rng.integers(0, 16, 8)
    mod.sw_score(warm, warm, *w)
    for n_lanes in lanes:
        mod.sw_score_wavefront(warm, warm, *w, n_lanes)

    rows = []
    for n in lengths:
        a = rng.integers(0, 16, n).astype(np.int64)
        b = rng.integers(0, 16, n).astype(np.int64)
        ref = int(mod.sw_score(a, b, *w))
        cells = n * n
        t_scalar = _best_time(lambda: mod.sw_score(a, b, *w), iters)
        rows.append(dict(kernel="scalar", length=n, lanes=1, seconds=t_scalar, mcells=cells / t_scalar / 1e6, speedup=1.0, score=ref))
        for n_lanes in lanes:
            got = int(mod.sw_score_wavefront(a, b, *w, n_lanes))
            if verify and got != ref:
                raise AssertionError(f"wavefront score {got} != scalar {ref} (n={n}, lanes={n_lanes})")
            t = _best_time(lambda: mod.sw_score_wavefront(a, b, *w, n_lanes), iters)
            rows.append(dict(kernel="wavefront", length=n, lanes=n_lanes, seconds=t, mcells=cells / t / 1e6, speedup=t_scalar / t, score=got))
    return rows


def format_bench(rows, backend) -> str:
    lines = [f"backend {backend}, {os.cpu_count()} cpu(s)", f"{'kernel':<10} {'length':>7} {'lanes':>5} {'seconds':>9} {'Mcells/s':>9} {'speedup':>7}"]
    for r in rows:
        lines.append(
            f"{r['kernel']:<10} {r['length']:>7} {r['lanes']:>5} {r['seconds']:>9.4f} {r['mcells']:>9.1f} {r['speedup']:>7.2f}"
        )
    return "\n".join(lines)


def cmd_bench(args, cfg: RunConfig) -> int:
    backend = args.backend or kernels.BACKEND
    rows = run_bench(args.lengths, args.lanes, args.iters, args.verify, backend, args.seed)
    if args.verify:
        print(f"verification: wavefront == scalar for all {len(rows) - len(args.lengths)} runs")
    print(format_bench(rows, backend))
    return 0


# -- argument parsing -------------------------------------------------------

def _int_list(text):
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="madcrow", description="Attack signatures from call traces, and their detection.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr (repeat for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sign", help="distil a signature from repeated attack traces")
    p.add_argument("traces", nargs="*", help="trace files, one execution of the attack each")
    p.add_argument("--attack-id", required=True)
    p.add_argument("--db", help="signature database (default: $MADCROW_DB)")
    p.add_argument("--alphabet", help=f"alphabet file (default: {ALPHABET_FILE} next to the db)")
    p.add_argument("--g-split", type=int, default=3, help="unmatched run that splits segments")
    p.add_argument("--m-min", type=int, default=4, help="shortest segment kept")
    p.add_argument("--threshold", type=float, default=0.8, help="default detection threshold stored with the signature")
    p.add_argument("--workers", type=int, default=1, help="threads for pairwise scoring")
    p.add_argument("--allow-guest-syscalls", action="store_true")

    p = sub.add_parser("detect", help="replay traces against the signature database")
    p.add_argument("traces", nargs="*", help="trace files; events are merged by timestamp")
    p.add_argument("--db", help="signature database (default: $MADCROW_DB)")
    p.add_argument("--alerts", help="alert log to write")
    p.add_argument("--append", action="store_true", help="append to the alert log instead of rewriting it")
    p.add_argument("--alphabet", help=f"alphabet file (default: {ALPHABET_FILE} next to the db)")
    p.add_argument("--heartbeats", help="heartbeat schedule; liveness checks are off without one")
    p.add_argument("--tau", type=float, default=None, help="detection threshold (default: each signature's own)")
    p.add_argument("--window", type=int, default=4096, help="ring buffer length per stream")
    p.add_argument("--corr-window-us", type=int, default=300_000_000)
    p.add_argument("--stride", type=int, default=16, help="events between rescans")
    p.add_argument("--heartbeat-period-us", type=int, default=HEARTBEAT_PERIOD_US)
    p.add_argument("--heartbeat-k", type=int, default=3, help="missed beats before a liveness alert")
    p.add_argument("--allow-guest-syscalls", action="store_true")

    p = sub.add_parser("simulate", help="write a seeded scenario: signing traces, evaluation streams, truth")
    p.add_argument("--scenario", required=True, help=", ".join(sorted(SCENARIOS)))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-ratio", type=float, default=10.0)
    p.add_argument("--streams", type=int, default=1)
    p.add_argument("--n-traces", type=int, default=8)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("bench", help="time scalar against wavefront alignment")
    p.add_argument("--lengths", type=_int_list, default=[1024, 4096])
    p.add_argument("--lanes", type=_int_list, default=[1, 4])
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--verify", action=argparse.BooleanOptionalAction, default=True,
                   help="check wavefront == scalar before timing")
    p.add_argument("--backend", choices=kernels.available_backends())
    p.add_argument("--seed", type=int, default=0)
    return parser


COMMANDS = {"sign": cmd_sign, "detect": cmd_detect, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = RunConfig.from_args(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"madcrow {args.command}: {exc}", file=sys.stderr)
        return 2
    except TooFewSequences:
        print(f"madcrow {args.command}: need at least two traces", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"madcrow {args.command}: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except (MadcrowError, StorageError, OSError, ValueError, AssertionError) as exc:
        print(f"madcrow {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
