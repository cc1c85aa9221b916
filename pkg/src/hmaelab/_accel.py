"""Numba switch.

Set ``HMAELAB_NO_NUMBA=1`` to force the pure-numpy kernels, e.g. for
debugging or on platforms without numba.  Both paths produce bit-identical
results for the Jacobi and red-black sweeps.
"""
import os

_DISABLED = os.environ.get("HMAELAB_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _numba = None
    HAVE_NUMBA = False


def use_numba():
    """Whether the compiled kernels are active."""
    return HAVE_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return _numba.njit(*args, cache=True, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def set_threads(n):
    """Thread count for compiled kernels (no-op without numba)."""
    if HAVE_NUMBA:
        _numba.set_num_threads(max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS)))
