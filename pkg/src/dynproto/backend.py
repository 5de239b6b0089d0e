"""Kernel backend selection.

The hot inner loops exist twice: numba-compiled (_kernels_numba) and pure
numpy (_kernels_numpy). The active set is chosen by the DYNPROTO_BACKEND
environment variable — "numba", "numpy", or "auto" (default: numba when
importable, numpy otherwise) — and can be overridden programmatically via
set_backend, which the benchmark uses to compare the two.

Cosine/gemm work is NOT backend-switched: both backends feed numpy BLAS
matmuls, which no hand-written loop beats at the target shapes.
"""

import logging
import os

from .errors import InvalidConfig
from . import _kernels_numpy

log = logging.getLogger(__name__)

ENV_VAR = "DYNPROTO_BACKEND"

try:
    from . import _kernels_numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _kernels_numba = None
    HAS_NUMBA = False

_active = None


def _resolve(name):
    if name not in ("auto", "numba", "numpy"):
        raise InvalidConfig(
            f"unknown backend {name!r}; expected auto, numba, or numpy")
    if name == "numba" and not HAS_NUMBA:
        raise InvalidConfig("numba backend requested but numba is not importable")
    if name == "auto":
        if not HAS_NUMBA:
            log.warning("numba not importable; falling back to numpy kernels")
            return "numpy"
        return "numba"
    return name


def active_backend():
    """Name of the backend currently in effect ("numba" or "numpy")."""
    global _active
    if _active is None:
        _active = _resolve(os.environ.get(ENV_VAR, "auto").strip().lower())
    return _active


def set_backend(name=None):
    """Override the backend; None re-resolves from the environment."""
    global _active
    _active = None if name is None else _resolve(name)


def kernels():
    """The module holding the active kernel implementations."""
    if active_backend() == "numba":
        return _kernels_numba
    return _kernels_numpy


def warmup():
    """Force numba compilation on tiny inputs so timings exclude JIT cost."""
    import numpy as np

    mod = kernels()
    one = np.ones((1, 2), dtype=np.float64)
    mod.ratio_scores(one, one, 1.0, 1.0)
    mod.softmax_max(one)
    mod.birch_assign(one, 0.5, 4)
