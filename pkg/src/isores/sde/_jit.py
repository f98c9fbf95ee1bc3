"""numba switch: set ``ISORES_DISABLE_NUMBA=1`` to run the pure-numpy kernels."""

import os

NUMBA_DISABLED = os.environ.get("ISORES_DISABLE_NUMBA", "0") not in ("", "0")

try:
    if NUMBA_DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True

    def njit(fn):
        return numba.njit(cache=True, nogil=True)(fn)
except ImportError:
    HAVE_NUMBA = False

    def njit(fn):
        return fn
