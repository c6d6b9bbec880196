"""Backend switch for the compiled kernels.

Set ``DTBEAM_DISABLE_NUMBA=1`` (before import) to force the pure-numpy
paths, e.g. for debugging or on platforms without numba.
"""
import os

_DISABLED = os.environ.get("DTBEAM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` or the identity when numba is off."""
    if not HAVE_NUMBA:
        return fn
    return _njit(cache=True)(fn)


BACKEND = "numba" if HAVE_NUMBA else "numpy"
