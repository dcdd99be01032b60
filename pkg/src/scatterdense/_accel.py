"""Numba switch for the hot kernels.

Set ``SCATTERDENSE_DISABLE_NUMBA=1`` to force the pure-numpy paths (also used
automatically when numba cannot be imported).
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("SCATTERDENSE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def njit(func):
    """Compile ``func`` in nopython mode when numba is usable, else return it as is."""
    if not NUMBA_AVAILABLE:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
