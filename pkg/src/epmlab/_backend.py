"""Select the compiled kernels when available, else the Python fallback.

Set ``EPMLAB_BACKEND=python`` to force the fallback.
"""
import os

import numpy as np

_forced = os.environ.get("EPMLAB_BACKEND", "").lower()

if _forced == "python":
    from . import _fallback as kernels
else:
    try:
        from . import _core as kernels
    except ImportError:
        if _forced == "compiled":
            raise
        from . import _fallback as kernels

BACKEND = kernels.BACKEND
_threads = 1


def set_threads(n: int) -> None:
    """Cap worker threads for row-parallel kernels. Results do not depend on it."""
    global _threads
    if int(n) < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def row_logsumexp(logA, shift):
    return kernels.row_logsumexp(_c(logA), _c(shift), _threads)


def matvec(K, g):
    return kernels.matvec(_c(K), _c(g), _threads)


def rmatvec(K, w):
    return kernels.rmatvec(_c(K), _c(w), _threads)


def alias_build(P):
    return kernels.alias_build(_c(P))


def alias_walk(prob, alias, prob0, alias0, u, start=-1):
    return kernels.alias_walk(
        _c(prob),
        np.ascontiguousarray(alias, dtype=np.int32),
        _c(prob0),
        np.ascontiguousarray(alias0, dtype=np.int32),
        _c(u),
        int(start),
    )
