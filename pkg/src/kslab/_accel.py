"""Optional numba acceleration.

Hot loops are written twice: a compiled version decorated with :func:`njit`
and a vectorized numpy version. Set ``KSLAB_DISABLE_NUMBA=1`` to force the
numpy path even when numba is importable.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("KSLAB_DISABLE_NUMBA", "0").strip().lower()
DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is optional
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is installed, otherwise identity.

    The decorated function is compiled even if the env flag disables numba,
    so tests and benchmarks can still compare both paths.
    """
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)


def select(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl
