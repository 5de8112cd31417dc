"""Optional numba acceleration.

Kernels are written once as plain Python loops. When numba is importable and
``TWOBLOCK_DISABLE_NUMBA`` is unset (or "0"), they are compiled with
``@njit``; otherwise callers use the vectorised numpy implementations.
"""

import os

_flag = os.environ.get("TWOBLOCK_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` when enabled, else ``None``."""
    if not HAVE_NUMBA:
        return None
    return _njit(cache=True, fastmath=False)(fn)


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
