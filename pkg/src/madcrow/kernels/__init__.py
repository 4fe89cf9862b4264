"""Backend selection for the alignment kernels.

The numba kernels are used when numba imports cleanly, unless the
``MADCROW_DISABLE_NUMBA`` environment variable is set to a truthy value, in
which case the vectorised numpy kernels are used. Both backends return
identical integers for identical inputs.
"""
import importlib
import os

import numpy as np

_FALSY = {"", "0", "false", "no", "off"}
NUMBA_DISABLED = os.environ.get("MADCROW_DISABLE_NUMBA", "").strip().lower() not in _FALSY


def available_backends():
    names = ["numpy"]
    try:
        importlib.import_module("madcrow.kernels._numba")
    except ImportError:
        pass
    else:
        names.insert(0, "numba")
    return names


def get_backend(name):
    """Return the kernel module for ``name`` ("numba" or "numpy")."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    return importlib.import_module(f"madcrow.kernels._{name}")


if NUMBA_DISABLED:
    from . import _numpy as _active
else:
    try:
        from . import _numba as _active
    except ImportError:  # pragma: no cover - numba is an optional extra
        from . import _numpy as _active

BACKEND = _active.BACKEND
sw_score = _active.sw_score
sw_matrix = _active.sw_matrix
sw_score_wavefront = _active.sw_score_wavefront
sw_scan = _active.sw_scan


def as_symbols(seq):
    """Coerce a symbol sequence to the contiguous int64 array the kernels expect."""
    arr = np.ascontiguousarray(seq, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError("symbol sequences must be one-dimensional")
    return arr


__all__ = [
    "BACKEND",
    "NUMBA_DISABLED",
    "as_symbols",
    "available_backends",
    "get_backend",
    "sw_matrix",
    "sw_scan",
    "sw_score",
    "sw_score_wavefront",
]
