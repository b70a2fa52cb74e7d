"""Numba switch.

Kernels are written twice: an explicit-loop version compiled with numba and a
vectorized numpy version.  Set ``HYPERDYNE_DISABLE_NUMBA=1`` to force the numpy
path (also used automatically when numba is not importable).
"""

import os

_DISABLED = os.environ.get("HYPERDYNE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:  # pragma: no cover - depends on environment
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(func):
    """Compile ``func`` in nopython mode when numba is available.

    The undecorated function is returned otherwise, so the loop kernels stay
    callable (slowly) and can be checked against the numpy path.
    """
    if HAVE_NUMBA:
        return _numba.njit(cache=True, nogil=True)(func)
    return func  # pragma: no cover


def pick(loop_impl, numpy_impl):
    return loop_impl if USE_NUMBA else numpy_impl
