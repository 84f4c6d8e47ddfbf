"""Numba switch.

Set ``RRRFUSION_NO_NUMBA=1`` to run every kernel as plain numpy code. The
flag is read once at import time.
"""

import os

_DISABLED = os.environ.get("RRRFUSION_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _numba_njit

    NUMBA_ENABLED = True
except ImportError:
    _numba_njit = None
    NUMBA_ENABLED = False


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` or a no-op, depending on the env flag."""
    if func is None:
        return lambda f: njit(f, **kwargs)
    if not NUMBA_ENABLED:
        return func
    kwargs.setdefault("cache", True)
    return _numba_njit(**kwargs)(func)
