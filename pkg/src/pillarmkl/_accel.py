"""Numba switch for the hot kernels.

Set ``PILLARMKL_NO_NUMBA=1`` to force the pure-numpy paths. Every kernel
module keeps both implementations importable so they can be compared
directly (see ``benchmarks/bench_kernels.py``).
"""
import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("PILLARMKL_NO_NUMBA", "0") in ("", "0")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise the identity decorator."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def pick(fast, slow):
    return fast if USE_NUMBA else slow
