"""Seeded benign traffic, attack injection, and preset attack scenarios.

Randomness comes only from numpy's ``PCG64`` generator
(``numpy.random.default_rng``). A scenario seed is expanded with
``numpy.random.SeedSequence.spawn`` into independent child streams (signing
traces, evaluation streams, injection), so each part is reproducible on its
own and adding a stream does not perturb the others.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ParseError, PlanOutOfRange, UnknownScenario, VersionError
from .signature_gen import AttackTraceSet
from .trace_model import Alphabet, CallKind, CallSequence

TRUTH_HEADER = "madcrow-truth v1"
HEARTBEATS_HEADER = "madcrow-heartbeats v1"

# Benign call vocabulary in descending frequency rank. Recon and flood
# primitives used by the scenarios sit in the tail: they do occur in benign
# traffic, just rarely.
VOCABULARY = (
    "sched_op", "event_channel_op", "set_timer_op", "vcpu_op", "grant_table_op",
    "memory_op", "multicall", "mmu_update", "update_va_mapping", "xen_version",
    "console_io", "physdev_op", "hvm_op", "stack_switch", "fpu_taskswitch",
    "set_segment_base", "mmuext_op", "set_callbacks", "set_trap_table", "set_gdt",
    "set_debugreg", "get_debugreg", "update_descriptor", "vm_assist", "sysctl",
    "domctl", "xsm_op", "nmi_op", "callback_op", "xenoprof_op",
    "kexec_op", "tmem_op", "platform_op", "iret", "dm_op",
    "hypfs_op", "xenpmu_op", "mca", "argo_op", "update_va_mapping_otherdomain",
    "nslookup", "ping", "nmap_probe", "raw_socket", "tcp_syn",
    "os_fingerprint", "version_probe", "cache_probe", "timing_sample", "arp_probe",
    "spoof_src", "icmp_reply", "setsockopt_bcast", "sched_op_compat", "event_channel_op_compat",
    "physdev_op_compat", "ni_hypercall", "arch_0", "arch_1", "arch_2",
    "arch_3", "arch_4", "arch_5", "arch_6",
)

# Each preset is a list of phases; phases become signature segments.
SCENARIOS = {
    "smurf_flood": (
        ("nslookup", "raw_socket", "setsockopt_bcast", "spoof_src", "arp_probe", "nslookup",
         "raw_socket", "spoof_src", "arp_probe", "setsockopt_bcast", "spoof_src", "raw_socket",
         "setsockopt_bcast", "arp_probe", "spoof_src", "raw_socket"),
        ("ping",) * 24,
        ("icmp_reply", "event_channel_op", "icmp_reply", "ping", "icmp_reply", "event_channel_op",
         "raw_socket", "icmp_reply", "ping", "icmp_reply", "spoof_src", "icmp_reply",
         "event_channel_op", "ping", "icmp_reply", "raw_socket"),
    ),
    "coresidence_recon": (
        ("nslookup", "ping", "nmap_probe") * 5 + ("nslookup",),
        ("tcp_syn", "nmap_probe", "os_fingerprint", "tcp_syn", "version_probe", "nmap_probe",
         "tcp_syn", "os_fingerprint", "version_probe", "nmap_probe", "tcp_syn", "os_fingerprint",
         "nmap_probe", "version_probe", "tcp_syn", "os_fingerprint"),
        ("xen_version", "cache_probe", "timing_sample", "cache_probe", "timing_sample", "sched_op",
         "cache_probe", "timing_sample", "cache_probe", "timing_sample", "xen_version", "cache_probe",
         "timing_sample", "sched_op", "cache_probe", "timing_sample"),
    ),
    "mmu_hijack": (
        ("xen_version", "mmuext_op", "mmu_update", "update_va_mapping", "mmu_update", "set_gdt",
         "mmuext_op", "mmu_update", "update_descriptor", "mmu_update", "set_gdt", "mmuext_op",
         "update_va_mapping", "mmu_update", "update_descriptor", "mmuext_op"),
        ("mmu_update", "mmu_update", "mmuext_op", "update_va_mapping_otherdomain", "mmu_update",
         "mmu_update", "grant_table_op", "mmu_update", "mmuext_op", "update_va_mapping_otherdomain",
         "mmu_update", "mmu_update", "grant_table_op", "mmuext_op", "mmu_update",
         "update_va_mapping_otherdomain"),
        ("grant_table_op", "memory_op", "update_va_mapping_otherdomain", "mmu_update", "domctl",
         "grant_table_op", "memory_op", "mmu_update", "vm_assist", "domctl", "memory_op",
         "update_va_mapping_otherdomain", "grant_table_op", "domctl", "mmu_update", "vm_assist"),
    ),
}


def vocabulary(size: int = 64) -> tuple[str, ...]:
    if size <= len(VOCABULARY):
        return VOCABULARY[:size]
    return VOCABULARY + tuple(f"call_{k}" for k in range(len(VOCABULARY), size))


def simulation_alphabet(size: int = 64) -> Alphabet:
    """Frozen hypercall alphabet whose symbol ``k`` is the rank-``k`` benign call."""
    return Alphabet(((name, CallKind.HYPERCALL) for name in vocabulary(size)), frozen=True)


@dataclass(frozen=True)
class NoiseModel:
    alphabet_size: int = 64
    distribution: str = "zipf"
    s: float = 1.1
    mean_inter_event_us: int = 1000

    def __post_init__(self):
        if self.alphabet_size < 2:
            raise ValueError("alphabet_size must be >= 2")
        if self.distribution not in ("zipf", "uniform"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.s <= 0:
            raise ValueError("zipf exponent must be positive")
        if self.mean_inter_event_us < 1:
            raise ValueError("mean_inter_event_us must be >= 1")

    def probabilities(self) -> np.ndarray:
        if self.distribution == "uniform":
            return np.full(self.alphabet_size, 1.0 / self.alphabet_size)
        w = np.arange(1, self.alphabet_size + 1, dtype=float) ** -self.s
        return w / w.sum()

    def draw(self, rng, size=None):
        return rng.choice(self.alphabet_size, size=size, p=self.probabilities())

    def draw_other(self, rng, symbol: int) -> int:
        """A benign symbol different from ``symbol``."""
        while True:
            y = int(self.draw(rng))
            if y != symbol:
                return y


def gen_benign(seed, n_events: int, model: NoiseModel = NoiseModel(), stream_id: str = "vm1", start_us: int = 0) -> CallSequence:
    if n_events < 0:
        raise ValueError("n_events must be >= 0")
    rng = np.random.default_rng(seed)
    symbols = model.draw(rng, n_events)
    gaps = rng.geometric(1.0 / model.mean_inter_event_us, n_events)
    stamps = start_us + np.cumsum(gaps)
    return CallSequence(stream_id, tuple(symbols.tolist()), tuple(stamps.tolist()))


@dataclass(frozen=True)
class InjectionPlan:
    attack_sequence: tuple[int, ...]
    target_streams: tuple[str, ...]
    split_points: tuple[int, ...] = ()
    mutation_rate: float = 0.0
    insertion_rate: float = 0.0
    start_time_us: int = 0
    attack_id: str = "attack"
    # delay between consecutive pieces
    stagger_us: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attack_sequence", tuple(int(s) for s in self.attack_sequence))
        object.__setattr__(self, "target_streams", tuple(self.target_streams))
        object.__setattr__(self, "split_points", tuple(self.split_points))
        for name in ("mutation_rate", "insertion_rate"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")

    def pieces(self) -> list[tuple[int, ...]]:
        cuts = (0, *self.split_points, len(self.attack_sequence))
        return [self.attack_sequence[a:b] for a, b in zip(cuts, cuts[1:])]


@dataclass(frozen=True)
class TruthLabel:
    stream_id: str
    offset: int
    attack_id: str
    piece: int
    mutated: bool


@dataclass(frozen=True)
class GroundTruth:
    labels: tuple[TruthLabel, ...] = ()
    expected_alerts: tuple[tuple[str, int], ...] = ()

    def offsets(self, stream_id: str) -> list[int]:
        return [lab.offset for lab in self.labels if lab.stream_id == stream_id]

    def expected(self, attack_id: str) -> int:
        return dict(self.expected_alerts).get(attack_id, 0)


def _validate_plan(streams, plan):
    by_id = {s.stream_id: s for s in streams}
    if len(plan.split_points) != len(plan.target_streams) - 1:
        raise PlanOutOfRange("need exactly one split point fewer than target streams")
    cuts = (0, *plan.split_points, len(plan.attack_sequence))
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise PlanOutOfRange("split points must be strictly increasing inside the attack")
    if plan.start_time_us < 0:
        raise PlanOutOfRange("start_time_us must be non-negative")
    for k, sid in enumerate(plan.target_streams):
        if sid not in by_id:
            raise PlanOutOfRange(f"unknown target stream {sid!r}")
        stamps = by_id[sid].timestamps_us
        t = plan.start_time_us + k * plan.stagger_us
        if stamps and t > stamps[-1]:
            raise PlanOutOfRange(f"piece {k} starts after the end of stream {sid!r}")
    return by_id


def inject(streams: Sequence[CallSequence], plan: InjectionPlan, seed, noise: NoiseModel = NoiseModel()):
    """Insert the plan's attack pieces into ``streams``.

    Each piece lands contiguously (plus any benign insertions) in front of the
    first benign event at or after its start time, with timestamps spread
    between its neighbours. Returns the new streams, in input order, and the
    ground truth for every attack symbol.
    """
    by_id = _validate_plan(streams, plan)
    rng = np.random.default_rng(seed)
    inserts: dict[str, list] = {sid: [] for sid in by_id}
    for k, (sid, piece) in enumerate(zip(plan.target_streams, plan.pieces())):
        items = []
        for pos, sym in enumerate(piece):
            mutated = rng.random() < plan.mutation_rate
            if mutated:
                sym = noise.draw_other(rng, sym)
            items.append((int(sym), True, mutated))
            if pos + 1 < len(piece) and rng.random() < plan.insertion_rate:
                items.append((int(noise.draw(rng)), False, False))
        t = plan.start_time_us + k * plan.stagger_us
        at = bisect.bisect_left(by_id[sid].timestamps_us, t)
        inserts[sid].append((at, k, t, items))

    labels = []
    out = []
    for seq in streams:
        syms = list(seq.symbols)
        stamps = list(seq.timestamps_us)
        groups = sorted(inserts.get(seq.stream_id, []), key=lambda g: (g[0], g[1]))
        new_syms, new_ts, flags = [], [], []
        g = 0
        for idx in range(len(syms) + 1):
            while g < len(groups) and groups[g][0] == idx:
                _, piece_no, t, items = groups[g]
                lo = max(t, new_ts[-1]) if new_ts else t
                hi = stamps[idx] if idx < len(stamps) else lo + len(items)
                hi = max(hi, lo)
                for n, (sym, is_attack, mutated) in enumerate(items):
                    new_syms.append(sym)
                    new_ts.append(lo + (hi - lo) * n // len(items))
                    flags.append((piece_no, mutated) if is_attack else None)
                g += 1
            if idx < len(syms):
                new_syms.append(syms[idx])
                new_ts.append(stamps[idx])
                flags.append(None)
        for offset, flag in enumerate(flags):
            if flag is not None:
                labels.append(TruthLabel(seq.stream_id, offset, plan.attack_id, flag[0], bool(flag[1])))
        out.append(CallSequence(seq.stream_id, tuple(new_syms), tuple(new_ts)))
    labels.sort(key=lambda lab: (lab.piece, lab.stream_id, lab.offset))
    return out, GroundTruth(tuple(labels), ((plan.attack_id, 1),))


# -- scenarios --------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioParams:
    n_traces: int = 8
    noise_ratio: float = 10.0
    n_streams: int = 1
    trace_mutation: float = 0.05
    trace_insertion: float = 0.10
    # benign calls between attack phases in signing traces, inclusive range
    phase_gap: tuple[int, int] = (6, 10)
    eval_mutation: float = 0.01
    eval_insertion: float = 0.01
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if self.n_traces < 2:
            raise ValueError("n_traces must be >= 2")
        if self.n_streams < 1:
            raise ValueError("n_streams must be >= 1")


@dataclass(frozen=True)
class ScenarioResult:
    traces: AttackTraceSet
    streams: tuple[CallSequence, ...]
    truth: GroundTruth
    alphabet: Alphabet
    phases: tuple[tuple[int, ...], ...]

    @property
    def attack(self) -> tuple[int, ...]:
        return tuple(s for p in self.phases for s in p)

    def __iter__(self):
        return iter((self.traces, self.streams, self.truth))


def scenario_phases(name: str, alphabet: Alphabet) -> tuple[tuple[int, ...], ...]:
    if name not in SCENARIOS:
        raise UnknownScenario(f"unknown scenario {name!r}; choose from {', '.join(sorted(SCENARIOS))}")
    return tuple(tuple(alphabet.encode(n, CallKind.HYPERCALL) for n in phase) for phase in SCENARIOS[name])


def _noisy_execution(rng, phases, params: ScenarioParams) -> list[int]:
    noise = params.noise
    lo, hi = params.phase_gap
    out = [int(x) for x in noise.draw(rng, int(rng.integers(0, 4)))]
    for k, phase in enumerate(phases):
        if k:
            out.extend(int(x) for x in noise.draw(rng, int(rng.integers(lo, hi + 1))))
        for sym in phase:
            if rng.random() < params.trace_mutation:
                sym = noise.draw_other(rng, sym)
            out.append(int(sym))
            if rng.random() < params.trace_insertion:
                out.append(int(noise.draw(rng)))
    out.extend(int(x) for x in noise.draw(rng, int(rng.integers(0, 4))))
    return out


def scenario(name: str, params: ScenarioParams = ScenarioParams(), seed: int = 0) -> ScenarioResult:
    """Signing traces plus labelled evaluation streams for one preset attack."""
    alphabet = simulation_alphabet(max(params.noise.alphabet_size, len(VOCABULARY)))
    phases = scenario_phases(name, alphabet)
    if params.noise.alphabet_size < len(VOCABULARY):
        raise ValueError(f"scenarios need a noise alphabet of at least {len(VOCABULARY)} calls")
    attack = tuple(s for p in phases for s in p)
    ss_traces, ss_streams, ss_inject, ss_plan = np.random.SeedSequence(seed).spawn(4)

    trace_rng = np.random.default_rng(ss_traces)
    traces = []
    for k in range(params.n_traces):
        syms = _noisy_execution(trace_rng, phases, params)
        traces.append(CallSequence(f"exec{k}", tuple(syms), tuple(range(0, 1000 * len(syms), 1000))))
    trace_set = AttackTraceSet(name, tuple(traces), alphabet.version_id)

    n_streams = min(params.n_streams, len(phases))
    per_stream = int(np.ceil(params.noise_ratio * len(attack) / n_streams))
    stream_ids = [f"vm{k + 1}" for k in range(n_streams)]
    children = ss_streams.spawn(n_streams)
    benign = [gen_benign(children[k], per_stream, params.noise, sid) for k, sid in enumerate(stream_ids)]

    plan_rng = np.random.default_rng(ss_plan)
    boundaries = np.cumsum([len(p) for p in phases])[:-1].tolist()
    cuts = sorted(plan_rng.choice(boundaries, size=n_streams - 1, replace=False).tolist())
    horizon = min(s.timestamps_us[-1] for s in benign)
    start = int(plan_rng.integers(horizon // 5, max(horizon // 5 + 1, horizon * 3 // 5)))
    stagger = int(horizon // (5 * max(1, n_streams)))
    plan = InjectionPlan(
        attack_sequence=attack,
        target_streams=tuple(stream_ids),
        split_points=tuple(cuts),
        mutation_rate=params.eval_mutation,
        insertion_rate=params.eval_insertion,
        start_time_us=start,
        attack_id=name,
        stagger_us=stagger,
    )
    streams, truth = inject(benign, plan, ss_inject, params.noise)
    return ScenarioResult(trace_set, tuple(streams), truth, alphabet, phases)


# -- sidecar files ----------------------------------------------------------

def format_truth(truth: GroundTruth) -> str:
    lines = [TRUTH_HEADER]
    lines.extend(f"expect\t{aid}\t{count}" for aid, count in truth.expected_alerts)
    lines.extend(
        f"label\t{lab.stream_id}\t{lab.offset}\t{lab.attack_id}\t{lab.piece}\t{int(lab.mutated)}"
        for lab in truth.labels
    )
    return "\n".join(lines) + "\n"


def parse_truth(text: str) -> GroundTruth:
    lines = text.splitlines()
    if not lines or lines[0] != TRUTH_HEADER:
        raise VersionError(f"expected header {TRUTH_HEADER!r}")
    expected, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        try:
            if parts[0] == "expect" and len(parts) == 3:
                expected.append((parts[1], int(parts[2])))
            elif parts[0] == "label" and len(parts) == 6 and parts[5] in ("0", "1"):
                labels.append(TruthLabel(parts[1], int(parts[2]), parts[3], int(parts[4]), parts[5] == "1"))
            else:
                raise ValueError(f"unrecognised record {parts[0]!r}")
        except ValueError as exc:
            raise ParseError(str(exc), lineno, 1) from None
    return GroundTruth(tuple(labels), tuple(expected))


def heartbeat_schedule(streams: Sequence[CallSequence], period_us: int = 2_000_000, silent: Optional[dict] = None):
    """Beats every ``period_us`` per stream from 0 to one period past its last event.

    ``silent`` maps a stream id to an ``(start_us, end_us)`` interval with no beats.
    """
    silent = silent or {}
    beats = []
    for seq in streams:
        end = (seq.timestamps_us[-1] if seq.timestamps_us else 0) + period_us
        gap = silent.get(seq.stream_id)
        for t in range(0, end + 1, period_us):
            if gap and gap[0] <= t < gap[1]:
                continue
            beats.append((t, seq.stream_id))
    beats.sort()
    return beats


def format_heartbeats(beats) -> str:
    return HEARTBEATS_HEADER + "\n" + "".join(f"{t}\t{sid}\n" for t, sid in beats)


def parse_heartbeats(text: str):
    lines = text.splitlines()
    if not lines or lines[0] != HEARTBEATS_HEADER:
        raise VersionError(f"expected header {HEARTBEATS_HEADER!r}")
    beats = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].isdigit():
            raise ParseError("expected timestamp<TAB>stream", lineno, 1)
        beats.append((int(parts[0]), parts[1]))
    return beats
