"""Kernel compilation switch.

Hot loops are written once as plain numpy/scalar code and compiled with
``numba.njit`` unless ``SLOPECHANGE_DISABLE_NUMBA=1`` is set (or numba is not
importable), in which case the very same functions run as ordinary Python.
Both paths draw from ``numpy.random.Generator`` objects, so a given seed
produces the same trace either way.
"""

import os

_disabled = os.environ.get("SLOPECHANGE_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    import numba

    USE_NUMBA = True
except ImportError:
    numba = None
    USE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op decorator."""
    if USE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend():
    return "numba" if USE_NUMBA else "numpy"
