"""Numba switch.

Set ``NETSENSE_NO_NUMBA=1`` before import to run every hot kernel on its
pure-numpy path. Numba is also skipped silently if it cannot be imported.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("NETSENSE_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    _njit = None
    HAS_NUMBA = False


def njit(fn):
    """``numba.njit(cache=True)`` when available, else ``fn`` unchanged."""
    if _njit is None:
        return fn
    return _njit(cache=True, nogil=True)(fn)
