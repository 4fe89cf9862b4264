"""Attack-signature distillation and multi-stream detection over hypercall traces."""
from .alignment import DEFAULT_SCHEME, ScoringScheme, similarity, sw_align, sw_score, sw_score_wavefront
from .detection import Alert, AlertKind, DetectionEngine, DetectorConfig
from .signature_gen import AttackTraceSet, DistillParams, Segment, Signature, distill
from .trace_model import Alphabet, CallEvent, CallKind, CallSequence, build_sequence

__version__ = "0.1.0"

__all__ = [
    "Alert",
    "AlertKind",
    "Alphabet",
    "AttackTraceSet",
    "CallEvent",
    "CallKind",
    "CallSequence",
    "DEFAULT_SCHEME",
    "DetectionEngine",
    "DetectorConfig",
    "DistillParams",
    "ScoringScheme",
    "Segment",
    "Signature",
    "build_sequence",
    "distill",
    "similarity",
    "sw_align",
    "sw_score",
    "sw_score_wavefront",
]
